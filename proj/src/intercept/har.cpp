#include "robin/coder.hpp"
#include "robin/intercept.hpp"

namespace robin::intercept {

using nlohmann::json;

namespace {

json header_array(const http::Headers& headers) {
    json out = json::array();
    for (const auto& h : headers) out.push_back({{"name", h.name}, {"value", h.value}});
    return out;
}

std::string percent_decode_lenient(std::string_view s) {
    std::string plus;
    for (char c : s) plus += c == '+' ? ' ' : c;
    try {
        return coder::transform(coder::Codec::url_percent, coder::Direction::decode, plus);
    } catch (const std::exception&) {
        return plus;
    }
}

json query_string(const std::string& path_and_query) {
    json out = json::array();
    auto q = path_and_query.find('?');
    if (q == std::string::npos) return out;
    std::string_view rest = std::string_view(path_and_query).substr(q + 1);
    if (auto hash = rest.find('#'); hash != std::string_view::npos) rest = rest.substr(0, hash);
    while (!rest.empty()) {
        auto amp = rest.find('&');
        auto pair = rest.substr(0, amp);
        if (!pair.empty()) {
            auto eq = pair.find('=');
            std::string name = percent_decode_lenient(pair.substr(0, eq));
            std::string value = eq == std::string_view::npos ? "" : percent_decode_lenient(pair.substr(eq + 1));
            out.push_back({{"name", name}, {"value", value}});
        }
        if (amp == std::string_view::npos) break;
        rest = rest.substr(amp + 1);
    }
    return out;
}

std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return std::string(s);
}

json request_cookies(const http::Headers& headers) {
    json out = json::array();
    for (const auto& value : headers.get_all("Cookie")) {
        std::string_view rest = value;
        while (!rest.empty()) {
            auto semi = rest.find(';');
            auto pair = semi == std::string_view::npos ? rest : rest.substr(0, semi);
            auto eq = pair.find('=');
            if (eq != std::string_view::npos)
                out.push_back({{"name", trim(pair.substr(0, eq))}, {"value", trim(pair.substr(eq + 1))}});
            if (semi == std::string_view::npos) break;
            rest = rest.substr(semi + 1);
        }
    }
    return out;
}

json response_cookies(const http::Headers& headers) {
    json out = json::array();
    for (const auto& value : headers.get_all("Set-Cookie")) {
        std::string_view v = value;
        auto semi = v.find(';');
        auto pair = v.substr(0, semi);
        auto eq = pair.find('=');
        if (eq == std::string_view::npos) continue;
        json c = {{"name", trim(pair.substr(0, eq))}, {"value", trim(pair.substr(eq + 1))}};
        std::string_view attrs = semi == std::string_view::npos ? std::string_view{} : v.substr(semi + 1);
        while (!attrs.empty()) {
            auto next = attrs.find(';');
            std::string attr = trim(attrs.substr(0, next));
            auto aeq = attr.find('=');
            std::string key = http::to_lower(attr.substr(0, aeq));
            std::string aval = aeq == std::string::npos ? "" : trim(attr.substr(aeq + 1));
            if (key == "path") c["path"] = aval;
            else if (key == "domain") c["domain"] = aval;
            else if (key == "httponly") c["httpOnly"] = true;
            else if (key == "secure") c["secure"] = true;
            if (next == std::string_view::npos) break;
            attrs = attrs.substr(next + 1);
        }
        out.push_back(std::move(c));
    }
    return out;
}

std::string mime_of(const http::Headers& headers) {
    auto ct = headers.get("Content-Type");
    return ct ? std::string(*ct) : std::string();
}

bool is_textual(std::string_view body) {
    return is_valid_utf8(body);
}

long long head_size(const std::string& head) {
    return static_cast<long long>(head.size());
}

json har_request(const ExchangeRecord& r) {
    const auto& req = r.effective_request();
    json out;
    out["method"] = req.method;
    out["url"] = req.target.url();
    out["httpVersion"] = req.version;
    out["cookies"] = request_cookies(req.headers);
    out["headers"] = header_array(req.headers);
    out["queryString"] = query_string(req.target.path_and_query);
    if (!req.body.empty() || req.headers.contains("Content-Type")) {
        json post = {{"mimeType", mime_of(req.headers)}};
        if (is_textual(req.body)) {
            post["text"] = req.body;
        } else {
            post["text"] = coder::transform(coder::Codec::base64, coder::Direction::encode, req.body);
            post["comment"] = "text is base64-encoded";
        }
        out["postData"] = std::move(post);
    }
    out["headersSize"] = head_size(http::serialize_head(req, req.form));
    out["bodySize"] = static_cast<long long>(r.request_body_size ? r.request_body_size : req.body.size());
    if (r.request_truncated) out["comment"] = "body truncated to " + std::to_string(req.body.size()) + " bytes";
    return out;
}

json har_response(const ExchangeRecord& r) {
    const auto* resp = r.effective_response();
    json out;
    if (!resp) {
        out = {{"status", 0},
               {"statusText", ""},
               {"httpVersion", ""},
               {"cookies", json::array()},
               {"headers", json::array()},
               {"content", {{"size", 0}, {"mimeType", ""}}},
               {"redirectURL", ""},
               {"headersSize", -1},
               {"bodySize", -1}};
        if (r.failure_reason) out["comment"] = *r.failure_reason;
        return out;
    }
    out["status"] = resp->status;
    out["statusText"] = resp->reason;
    out["httpVersion"] = resp->version;
    out["cookies"] = response_cookies(resp->headers);
    out["headers"] = header_array(resp->headers);
    json content = {{"size", static_cast<long long>(r.response_body_size ? r.response_body_size : resp->body.size())},
                    {"mimeType", mime_of(resp->headers)}};
    if (is_textual(resp->body)) {
        content["text"] = resp->body;
    } else {
        content["text"] = coder::transform(coder::Codec::base64, coder::Direction::encode, resp->body);
        content["encoding"] = "base64";
    }
    if (r.response_truncated)
        content["comment"] = "body truncated to " + std::to_string(resp->body.size()) + " bytes";
    out["content"] = std::move(content);
    auto location = resp->headers.get("Location");
    out["redirectURL"] = location ? std::string(*location) : std::string();
    out["headersSize"] = head_size(http::serialize_head(*resp));
    out["bodySize"] = static_cast<long long>(r.response_body_size ? r.response_body_size : resp->body.size());
    if (r.response_truncated) out["comment"] = "body truncated";
    return out;
}

} // namespace

json export_har(const std::vector<ExchangeRecord>& records, std::string_view creator_version) {
    json entries = json::array();
    for (const auto& r : records) {
        json e;
        e["startedDateTime"] = format_rfc3339(r.t_request_start);
        double send = std::max(0.0, r.timings.send_ms);
        double wait = std::max(0.0, r.timings.wait_ms);
        double receive = std::max(0.0, r.timings.receive_ms);
        e["time"] = send + wait + receive;
        e["request"] = har_request(r);
        e["response"] = har_response(r);
        e["cache"] = json::object();
        e["timings"] = {{"send", send}, {"wait", wait}, {"receive", receive}};
        e["_id"] = r.id;
        e["_state"] = std::string(to_string(r.state));
        if (r.edited) e["_edited"] = true;
        if (r.request_truncated || r.response_truncated) {
            std::string c;
            if (r.request_truncated) c += "request body truncated; ";
            if (r.response_truncated) c += "response body truncated; ";
            c.resize(c.size() - 2);
            e["comment"] = c;
        }
        entries.push_back(std::move(e));
    }
    return {{"log",
             {{"version", "1.2"},
              {"creator", {{"name", "robin"}, {"version", std::string(creator_version)}}},
              {"pages", json::array()},
              {"entries", std::move(entries)}}}};
}

} // namespace robin::intercept
