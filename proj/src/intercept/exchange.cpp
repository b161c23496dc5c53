#include "robin/exchange.hpp"

#include "robin/coder.hpp"
#include "robin/error.hpp"

#include <cstdio>
#include <ctime>

namespace robin {

using nlohmann::json;

std::string_view to_string(ExchangeState state) noexcept {
    switch (state) {
    case ExchangeState::open: return "open";
    case ExchangeState::paused_request: return "paused_request";
    case ExchangeState::paused_response: return "paused_response";
    case ExchangeState::completed: return "completed";
    case ExchangeState::failed: return "failed";
    case ExchangeState::dropped: return "dropped";
    }
    return "?";
}

std::optional<ExchangeState> parse_exchange_state(std::string_view name) {
    for (auto s : {ExchangeState::open, ExchangeState::paused_request, ExchangeState::paused_response,
                   ExchangeState::completed, ExchangeState::failed, ExchangeState::dropped})
        if (to_string(s) == name) return s;
    return std::nullopt;
}

bool is_terminal(ExchangeState state) noexcept {
    return state == ExchangeState::completed || state == ExchangeState::failed || state == ExchangeState::dropped;
}

std::string format_rfc3339(TimePoint t) {
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
    std::time_t secs = static_cast<std::time_t>(ms / 1000);
    int millis = static_cast<int>(ms % 1000);
    if (millis < 0) {
        millis += 1000;
        --secs;
    }
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, millis);
    return buf;
}

std::optional<TimePoint> parse_rfc3339(std::string_view text) {
    std::tm tm{};
    int year, mon, day, hour, min, sec;
    int consumed = 0;
    std::string s(text);
    if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &year, &mon, &day, &hour, &min, &sec, &consumed) != 6)
        return std::nullopt;
    tm.tm_year = year - 1900;
    tm.tm_mon = mon - 1;
    tm.tm_mday = day;
    tm.tm_hour = hour;
    tm.tm_min = min;
    tm.tm_sec = sec;
    auto base = Clock::from_time_t(timegm(&tm));
    std::string_view rest = std::string_view(s).substr(static_cast<std::size_t>(consumed));
    std::chrono::milliseconds frac{0};
    if (!rest.empty() && rest.front() == '.') {
        rest.remove_prefix(1);
        int digits = 0, value = 0;
        while (!rest.empty() && rest.front() >= '0' && rest.front() <= '9') {
            if (digits < 3) {
                value = value * 10 + (rest.front() - '0');
                ++digits;
            }
            rest.remove_prefix(1);
        }
        while (digits < 3) {
            value *= 10;
            ++digits;
        }
        frac = std::chrono::milliseconds(value);
    }
    if (rest == "Z" || rest == "z") return base + frac;
    if (rest.size() == 6 && (rest[0] == '+' || rest[0] == '-') && rest[3] == ':') {
        int oh = std::stoi(std::string(rest.substr(1, 2)));
        int om = std::stoi(std::string(rest.substr(4, 2)));
        auto offset = std::chrono::hours(oh) + std::chrono::minutes(om);
        return rest[0] == '+' ? base + frac - offset : base + frac + offset;
    }
    return std::nullopt;
}

double ExchangeRecord::duration_ms() const {
    if (!t_response_done) return 0.0;
    return std::chrono::duration<double, std::milli>(*t_response_done - t_request_start).count();
}

ExchangeSummary summarize(const ExchangeRecord& r) {
    ExchangeSummary s;
    const auto& req = r.effective_request();
    s.id = r.id;
    s.method = req.method;
    s.host = req.target.host;
    s.path = req.target.path_and_query;
    if (const auto* resp = r.effective_response()) s.status = resp->status;
    s.scheme = r.scheme;
    s.request_size = r.request_body_size;
    s.response_size = r.response_body_size;
    s.duration_ms = r.duration_ms();
    s.state = r.state;
    return s;
}

bool is_valid_utf8(std::string_view s) noexcept {
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t n;
        std::uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            n = 1;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            n = 2;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            n = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + n >= s.size()) return false;
        for (std::size_t k = 1; k <= n; ++k) {
            unsigned char cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        if ((n == 1 && cp < 0x80) || (n == 2 && cp < 0x800) || (n == 3 && cp < 0x10000) || cp > 0x10FFFF ||
            (cp >= 0xD800 && cp <= 0xDFFF))
            return false;
        i += n + 1;
    }
    return true;
}

namespace {

json headers_json(const http::Headers& headers) {
    json arr = json::array();
    for (const auto& h : headers) {
        // Header bytes outside UTF-8 would break the JSON encoder.
        if (is_valid_utf8(h.name) && is_valid_utf8(h.value))
            arr.push_back({{"name", h.name}, {"value", h.value}});
        else
            arr.push_back({{"name", coder::to_hex(h.name)}, {"value", coder::to_hex(h.value)}, {"encoding", "hex"}});
    }
    return arr;
}

http::Headers headers_from_json(const json& arr) {
    http::Headers out;
    for (const auto& h : arr) {
        std::string name = h.at("name").get<std::string>();
        std::string value = h.at("value").get<std::string>();
        if (h.value("encoding", "") == "hex") {
            name = coder::from_hex(name);
            value = coder::from_hex(value);
        }
        out.add(std::move(name), std::move(value));
    }
    return out;
}

void put_body(json& j, const std::string& body) {
    if (is_valid_utf8(body)) {
        j["body"] = body;
        j["body_encoding"] = "utf8";
    } else {
        j["body"] = coder::transform(coder::Codec::base64, coder::Direction::encode, body);
        j["body_encoding"] = "base64";
    }
}

std::string get_body(const json& j) {
    if (!j.contains("body")) return {};
    std::string body = j.at("body").get<std::string>();
    if (j.value("body_encoding", "utf8") == "base64")
        return coder::transform(coder::Codec::base64, coder::Direction::decode, body);
    return body;
}

std::string_view framing_name(http::Framing f) {
    switch (f) {
    case http::Framing::none: return "none";
    case http::Framing::content_length: return "content_length";
    case http::Framing::chunked: return "chunked";
    case http::Framing::until_close: return "until_close";
    }
    return "none";
}

http::Framing framing_from(std::string_view name) {
    if (name == "content_length") return http::Framing::content_length;
    if (name == "chunked") return http::Framing::chunked;
    if (name == "until_close") return http::Framing::until_close;
    return http::Framing::none;
}

std::string_view form_name(http::TargetForm f) {
    switch (f) {
    case http::TargetForm::origin: return "origin";
    case http::TargetForm::absolute: return "absolute";
    case http::TargetForm::authority: return "authority";
    case http::TargetForm::asterisk: return "asterisk";
    }
    return "origin";
}

http::TargetForm form_from(std::string_view name) {
    if (name == "absolute") return http::TargetForm::absolute;
    if (name == "authority") return http::TargetForm::authority;
    if (name == "asterisk") return http::TargetForm::asterisk;
    return http::TargetForm::origin;
}

} // namespace

json to_json(const http::Request& r) {
    json j = {
        {"method", r.method},
        {"scheme", std::string(http::to_string(r.target.scheme))},
        {"host", r.target.host},
        {"port", r.target.port},
        {"path", r.target.path_and_query},
        {"url", r.target.url()},
        {"version", r.version},
        {"headers", headers_json(r.headers)},
        {"framing", std::string(framing_name(r.framing))},
        {"form", std::string(form_name(r.form))},
    };
    put_body(j, r.body);
    return j;
}

json to_json(const http::Response& r) {
    json j = {
        {"status", r.status},
        {"reason", r.reason},
        {"version", r.version},
        {"headers", headers_json(r.headers)},
        {"framing", std::string(framing_name(r.framing))},
    };
    put_body(j, r.body);
    return j;
}

http::Request request_from_json(const json& j) {
    http::Request r;
    r.method = j.at("method").get<std::string>();
    r.target.scheme = j.value("scheme", "http") == "https" ? http::Scheme::https : http::Scheme::http;
    r.target.host = j.at("host").get<std::string>();
    r.target.port = j.value("port", http::default_port(r.target.scheme));
    r.target.path_and_query = j.value("path", "/");
    r.version = j.value("version", "HTTP/1.1");
    r.headers = headers_from_json(j.value("headers", json::array()));
    r.body = get_body(j);
    r.framing = framing_from(j.value("framing", "none"));
    r.form = form_from(j.value("form", "origin"));
    return r;
}

http::Response response_from_json(const json& j) {
    http::Response r;
    r.status = j.at("status").get<int>();
    r.reason = j.value("reason", "");
    r.version = j.value("version", "HTTP/1.1");
    r.headers = headers_from_json(j.value("headers", json::array()));
    r.body = get_body(j);
    r.framing = framing_from(j.value("framing", "none"));
    return r;
}

json to_json(const ExchangeRecord& r) {
    json j = {
        {"id", r.id},
        {"client_addr", r.client_addr},
        {"scheme", std::string(http::to_string(r.scheme))},
        {"state", std::string(to_string(r.state))},
        {"t_request_start", format_rfc3339(r.t_request_start)},
        {"request", to_json(r.request)},
        {"edited", r.edited},
        {"tunneled", r.tunneled},
        {"request_truncated", r.request_truncated},
        {"response_truncated", r.response_truncated},
        {"request_body_size", r.request_body_size},
        {"response_body_size", r.response_body_size},
        {"timings", {{"send", r.timings.send_ms}, {"wait", r.timings.wait_ms}, {"receive", r.timings.receive_ms}}},
    };
    j["t_response_done"] = r.t_response_done ? json(format_rfc3339(*r.t_response_done)) : json(nullptr);
    j["failure_reason"] = r.failure_reason ? json(*r.failure_reason) : json(nullptr);
    j["response"] = r.response ? to_json(*r.response) : json(nullptr);
    if (r.edited_request) j["edited_request"] = to_json(*r.edited_request);
    if (r.edited_response) j["edited_response"] = to_json(*r.edited_response);
    if (r.tls) {
        j["tls"] = {{"sni", r.tls->sni},
                    {"client_protocol", r.tls->client_protocol},
                    {"client_cipher", r.tls->client_cipher},
                    {"upstream_protocol", r.tls->upstream_protocol},
                    {"upstream_cipher", r.tls->upstream_cipher},
                    {"leaf_serial", r.tls->leaf_serial}};
    }
    return j;
}

ExchangeRecord record_from_json(const json& j) {
    ExchangeRecord r;
    r.id = j.at("id").get<ExchangeId>();
    r.client_addr = j.value("client_addr", "");
    r.scheme = j.value("scheme", "http") == "https" ? http::Scheme::https : http::Scheme::http;
    auto state = parse_exchange_state(j.value("state", "open"));
    if (!state) throw Error(ErrorCode::schema_violation, "unknown exchange state");
    r.state = *state;
    if (auto t = parse_rfc3339(j.value("t_request_start", ""))) r.t_request_start = *t;
    if (j.contains("t_response_done") && j["t_response_done"].is_string())
        r.t_response_done = parse_rfc3339(j["t_response_done"].get<std::string>());
    if (j.contains("failure_reason") && j["failure_reason"].is_string())
        r.failure_reason = j["failure_reason"].get<std::string>();
    r.request = request_from_json(j.at("request"));
    if (j.contains("response") && j["response"].is_object()) r.response = response_from_json(j["response"]);
    if (j.contains("edited_request")) r.edited_request = request_from_json(j["edited_request"]);
    if (j.contains("edited_response")) r.edited_response = response_from_json(j["edited_response"]);
    r.edited = j.value("edited", false);
    r.tunneled = j.value("tunneled", false);
    r.request_truncated = j.value("request_truncated", false);
    r.response_truncated = j.value("response_truncated", false);
    r.request_body_size = j.value("request_body_size", std::size_t{0});
    r.response_body_size = j.value("response_body_size", std::size_t{0});
    if (j.contains("timings")) {
        const auto& t = j["timings"];
        r.timings = {t.value("send", 0.0), t.value("wait", 0.0), t.value("receive", 0.0)};
    }
    if (j.contains("tls") && j["tls"].is_object()) {
        const auto& t = j["tls"];
        r.tls = TlsInfo{t.value("sni", ""),
                        t.value("client_protocol", ""),
                        t.value("client_cipher", ""),
                        t.value("upstream_protocol", ""),
                        t.value("upstream_cipher", ""),
                        t.value("leaf_serial", "")};
    }
    return r;
}

json to_json(const ExchangeSummary& s) {
    return {
        {"id", s.id},
        {"method", s.method},
        {"host", s.host},
        {"path", s.path},
        {"status", s.status ? json(*s.status) : json(nullptr)},
        {"scheme", std::string(http::to_string(s.scheme))},
        {"request_size", s.request_size},
        {"response_size", s.response_size},
        {"duration_ms", s.duration_ms},
        {"state", std::string(to_string(s.state))},
    };
}

} // namespace robin
