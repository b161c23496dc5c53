#include "robin/repeater.hpp"

#include "robin/error.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

namespace robin::repeater {

namespace {

using SteadyClock = std::chrono::steady_clock;

bool valid_name(std::string_view n) {
    return !n.empty() && n.size() <= 64 && std::all_of(n.begin(), n.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

// Rewrites (or adds) Content-Length to match the bytes after the blank line.
// Chunked messages are left alone.
std::string fix_length(std::string raw) {
    auto end = raw.find("\r\n\r\n");
    if (end == std::string::npos) return raw;
    std::size_t body = raw.size() - end - 4;
    std::size_t line = raw.find("\r\n") + 2;
    bool chunked = false, found = false;
    while (line < end + 2) {
        auto eol = raw.find("\r\n", line);
        auto colon = raw.find(':', line);
        if (colon != std::string::npos && colon < eol) {
            auto name = std::string_view(raw).substr(line, colon - line);
            if (http::iequals(name, "Transfer-Encoding")) chunked = true;
            if (http::iequals(name, "Content-Length")) {
                auto value = " " + std::to_string(body);
                raw.replace(colon + 1, eol - colon - 1, value);
                end = raw.find("\r\n\r\n");
                eol = colon + 1 + value.size();
                found = true;
            }
        }
        line = eol + 2;
    }
    if (!found && !chunked && body > 0) raw.insert(end + 2, "Content-Length: " + std::to_string(body) + "\r\n");
    return raw;
}

std::string pad(std::int64_t v, int width) {
    std::string digits = std::to_string(v < 0 ? -v : v);
    if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
    return v < 0 ? "-" + digits : digits;
}

bool differs(const AttemptResult& base, const AttemptResult& a, std::size_t tolerance) {
    if (base.error || a.error) return base.error.has_value() != a.error.has_value();
    auto diff = a.body_length > base.body_length ? a.body_length - base.body_length : base.body_length - a.body_length;
    return a.status != base.status || diff > tolerance;
}

// Sliding one-second window for rates >= 1/s, fixed spacing below that.
class RateLimiter {
public:
    RateLimiter(double rate, const RunHooks& hooks) : rate_(rate), hooks_(hooks) {}

    void acquire() {
        if (rate_ <= 0) return;
        std::unique_lock lock(mu_);
        while (true) {
            auto now = hooks_.now();
            SteadyClock::time_point ready;
            if (rate_ >= 1) {
                while (!issued_.empty() && issued_.front() + std::chrono::seconds(1) <= now) issued_.pop_front();
                if (issued_.size() < static_cast<std::size_t>(rate_)) break;
                ready = issued_.front() + std::chrono::seconds(1);
            } else {
                auto spacing = std::chrono::duration_cast<SteadyClock::duration>(std::chrono::duration<double>(1 / rate_));
                if (issued_.empty() || issued_.back() + spacing <= now) break;
                ready = issued_.back() + spacing;
            }
            lock.unlock();
            hooks_.sleep(ready - now);
            lock.lock();
        }
        issued_.push_back(hooks_.now());
    }

private:
    double rate_;
    const RunHooks& hooks_;
    std::mutex mu_;
    std::deque<SteadyClock::time_point> issued_;
};

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

} // namespace

std::vector<std::string> RequestTemplate::names() const {
    std::vector<std::string> out;
    for (const auto& m : markers) out.push_back(m.name);
    return out;
}

std::string RequestTemplate::substitute(const std::map<std::string, std::string>& values) const {
    std::string out;
    std::size_t pos = 0;
    for (const auto& m : markers) {
        out.append(raw, pos, m.offset - pos);
        auto it = values.find(m.name);
        if (it == values.end()) throw Error(ErrorCode::invalid_argument, "no value for marker '" + m.name + "'");
        out += it->second;
        pos = m.offset + m.length;
    }
    out.append(raw, pos, std::string::npos);
    return fix_length(std::move(out));
}

RequestTemplate parse_template(std::string_view raw, http::Scheme scheme) {
    RequestTemplate t;
    t.raw = std::string(raw);
    t.scheme = scheme;
    std::set<std::string> seen;
    std::size_t pos = 0;
    while (true) {
        auto open = raw.find("{{", pos);
        if (open == std::string_view::npos) break;
        auto close = raw.find("}}", open + 2);
        auto next_open = raw.find("{{", open + 2);
        if (close == std::string_view::npos || (next_open != std::string_view::npos && next_open < close))
            throw Error(ErrorCode::unbalanced_braces, "'{{' at byte " + std::to_string(open) + " is never closed");
        auto name = std::string(raw.substr(open + 2, close - open - 2));
        if (!valid_name(name))
            throw Error(ErrorCode::unbalanced_braces,
                        "malformed marker '{{" + name + "}}' at byte " + std::to_string(open));
        if (!seen.insert(name).second)
            throw Error(ErrorCode::duplicate_marker_name, "marker '" + name + "' appears more than once");
        t.markers.push_back({name, open, close + 2 - open});
        pos = close + 2;
    }
    std::map<std::string, std::string> zeros;
    for (const auto& n : seen) zeros[n] = "0";
    http::parse_request(t.substitute(zeros), scheme);
    return t;
}

void require_markers(const RequestTemplate& t) {
    if (t.markers.empty()) throw Error(ErrorCode::no_markers, "template has no {{name}} payload markers");
}

std::string Transform::apply(std::string_view in) const {
    if (kind == Kind::digest) return coder::digest(digest, in);
    return coder::transform(codec, direction, in);
}

PayloadSource PayloadSource::range(std::int64_t start, std::int64_t end, std::int64_t step, int zero_pad) {
    PayloadSource s;
    s.kind = Kind::numeric_range;
    s.start = start;
    s.end = end;
    s.step = step;
    s.zero_pad = zero_pad;
    return s;
}

PayloadSource PayloadSource::list(std::vector<std::string> values) {
    PayloadSource s;
    s.kind = Kind::literal_list;
    s.literals = std::move(values);
    return s;
}

PayloadSource PayloadSource::wordlist(std::string path) {
    PayloadSource s;
    s.kind = Kind::wordlist;
    s.path = std::move(path);
    return s;
}

std::vector<std::string> PayloadSource::values() const {
    std::vector<std::string> out;
    switch (kind) {
    case Kind::numeric_range: {
        if (step <= 0) throw Error(ErrorCode::invalid_argument, "numeric_range step must be positive");
        if (end < start) throw Error(ErrorCode::invalid_argument, "numeric_range end is before start");
        if (zero_pad < 0 || zero_pad > 32) throw Error(ErrorCode::invalid_argument, "zero_pad must be 0..32");
        auto count = (end - start) / step + 1;
        if (count > 10'000'000) throw Error(ErrorCode::invalid_argument, "numeric_range too large");
        out.reserve(count);
        for (std::int64_t i = 0; i < count; ++i) out.push_back(pad(start + i * step, zero_pad));
        break;
    }
    case Kind::wordlist: {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::wordlist_unreadable, "cannot read wordlist " + path);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            out.push_back(line);
        }
        if (in.bad()) throw Error(ErrorCode::wordlist_unreadable, "error reading wordlist " + path);
        break;
    }
    case Kind::literal_list:
        out = literals;
        break;
    }
    for (const auto& t : transforms)
        for (auto& v : out) v = t.apply(v);
    return out;
}

std::vector<ExpandedRequest> expand(const RepeaterJob& job) {
    require_markers(job.tmpl);
    auto names = job.tmpl.names();
    std::vector<Assignment> assignments;

    auto source_values = [&](const std::string& name) {
        auto it = job.sources.find(name);
        if (it == job.sources.end()) throw Error(ErrorCode::invalid_argument, "no payload source for marker '" + name + "'");
        return it->second.values();
    };
    for (const auto& [name, src] : job.sources)
        if (std::find(names.begin(), names.end(), name) == names.end() &&
            !(job.mode == Mode::sequential && job.sources.size() == 1))
            throw Error(ErrorCode::invalid_argument, "payload source for unknown marker '" + name + "'");

    if (job.mode == Mode::sequential) {
        if (job.sources.empty()) throw Error(ErrorCode::invalid_argument, "no payload sources");
        if (job.sources.size() == 1) {
            for (const auto& v : job.sources.begin()->second.values()) {
                Assignment a;
                for (const auto& n : names) a.emplace_back(n, v);
                assignments.push_back(std::move(a));
            }
        } else {
            std::vector<std::vector<std::string>> cols;
            for (const auto& n : names) cols.push_back(source_values(n));
            for (std::size_t k = 1; k < cols.size(); ++k)
                if (cols[k].size() != cols[0].size())
                    throw Error(ErrorCode::source_length_mismatch,
                                "sequential sources differ in length: '" + names[0] + "' has " +
                                    std::to_string(cols[0].size()) + ", '" + names[k] + "' has " +
                                    std::to_string(cols[k].size()));
            for (std::size_t i = 0; i < cols[0].size(); ++i) {
                Assignment a;
                for (std::size_t k = 0; k < names.size(); ++k) a.emplace_back(names[k], cols[k][i]);
                assignments.push_back(std::move(a));
            }
        }
    } else {
        std::vector<std::vector<std::string>> cols;
        std::size_t total = 1;
        for (const auto& n : names) {
            cols.push_back(source_values(n));
            total *= cols.back().size();
            if (total > 10'000'000) throw Error(ErrorCode::invalid_argument, "product expansion too large");
        }
        std::vector<std::size_t> idx(cols.size(), 0);
        for (std::size_t i = 0; i < total; ++i) {
            Assignment a;
            for (std::size_t k = 0; k < names.size(); ++k) a.emplace_back(names[k], cols[k][idx[k]]);
            assignments.push_back(std::move(a));
            for (std::size_t k = cols.size(); k-- > 0;) {
                if (++idx[k] < cols[k].size()) break;
                idx[k] = 0;
            }
        }
    }

    std::vector<ExpandedRequest> out;
    out.reserve(assignments.size());
    for (auto& a : assignments) {
        std::map<std::string, std::string> values(a.begin(), a.end());
        out.push_back({std::move(a), http::parse_request(job.tmpl.substitute(values), job.tmpl.scheme)});
    }
    return out;
}

RunResult run(const RepeaterJob& job, client::Requester& requester, const client::OriginAllowList& allow,
              const RunHooks& hooks_in) {
    if (job.max_in_flight == 0) throw Error(ErrorCode::invalid_argument, "max_in_flight must be at least 1");
    if (job.rate_limit < 0) throw Error(ErrorCode::invalid_argument, "rate_limit must not be negative");
    auto expanded = expand(job);
    for (const auto& e : expanded) allow.require(e.request.target);

    RunHooks hooks = hooks_in;
    if (!hooks.now) hooks.now = [] { return SteadyClock::now(); };
    if (!hooks.sleep) hooks.sleep = [](SteadyClock::duration d) { std::this_thread::sleep_for(d); };
    auto cancelled = [&] { return hooks.cancelled && hooks.cancelled(); };

    RateLimiter limiter(job.rate_limit, hooks);
    auto attempt = [&](std::size_t i) {
        limiter.acquire();
        auto rec = requester.fetch(expanded[i].request);
        AttemptResult a;
        a.index = i;
        a.assignment = expanded[i].assignment;
        a.exchange_id = rec.id;
        a.duration_ms = rec.duration_ms();
        if (rec.state == ExchangeState::completed && rec.response) {
            a.status = rec.response->status;
            a.body_length = rec.response->body.size();
            a.body_sha256 = coder::digest(coder::DigestScheme::sha256, rec.response->body);
            if (job.capture_bodies) a.body = rec.response->body;
        } else {
            a.error = rec.failure_reason.value_or("request failed");
        }
        return a;
    };

    RunResult result;
    result.marker_names = job.tmpl.names();
    result.expanded = expanded.size();
    const std::size_t total = expanded.size();
    if (total == 0) return result;
    if (cancelled()) {
        result.cancelled = true;
        return result;
    }

    std::vector<std::optional<AttemptResult>> slots(total);
    slots[0] = attempt(0);
    const AttemptResult baseline = *slots[0];
    std::mutex mu;
    std::size_t done = 1;
    if (hooks.on_result) hooks.on_result(baseline, done, total);

    std::atomic<std::size_t> next{1};
    std::atomic<bool> stop{false};
    auto worker = [&] {
        while (!stop.load() && !cancelled()) {
            auto i = next.fetch_add(1);
            if (i >= total) break;
            auto a = attempt(i);
            a.differs_from_baseline = differs(baseline, a, job.length_tolerance);
            std::lock_guard lock(mu);
            if (a.differs_from_baseline && job.stop == Stop::first_diff) stop = true;
            ++done;
            if (hooks.on_result) hooks.on_result(a, done, total);
            slots[i] = std::move(a);
        }
    };
    std::size_t workers = std::min(job.max_in_flight, total - 1);
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    for (auto& s : slots)
        if (s) result.results.push_back(std::move(*s));
    result.stopped_early = stop.load() && result.results.size() < total;
    result.cancelled = cancelled() && result.results.size() < total;
    return result;
}

nlohmann::json to_json(const AttemptResult& r) {
    nlohmann::json payload = nlohmann::json::object();
    for (const auto& [k, v] : r.assignment) payload[k] = is_valid_utf8(v) ? v : coder::to_hex(v);
    nlohmann::json j = {{"index", r.index},
                        {"payload", payload},
                        {"exchange_id", r.exchange_id},
                        {"status", r.status ? nlohmann::json(*r.status) : nlohmann::json(nullptr)},
                        {"body_length", r.body_length},
                        {"duration_ms", r.duration_ms},
                        {"body_sha256", r.body_sha256},
                        {"differs_from_baseline", r.differs_from_baseline},
                        {"error", r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr)}};
    if (r.body) {
        bool text = is_valid_utf8(*r.body);
        j["body"] = text ? *r.body : coder::transform(coder::Codec::base64, coder::Direction::encode, *r.body);
        j["body_encoding"] = text ? "utf8" : "base64";
    }
    return j;
}

nlohmann::json to_json(const RunResult& r) {
    nlohmann::json results = nlohmann::json::array();
    for (const auto& a : r.results) results.push_back(to_json(a));
    std::size_t differing = 0;
    for (const auto& a : r.results) differing += a.differs_from_baseline;
    return {{"markers", r.marker_names},
            {"expanded", r.expanded},
            {"issued", r.results.size()},
            {"differing", differing},
            {"stopped_early", r.stopped_early},
            {"cancelled", r.cancelled},
            {"baseline_index", 0},
            {"results", results}};
}

std::string to_csv(const RunResult& r) {
    std::string out = "index";
    for (const auto& n : r.marker_names) out += "," + csv_field(n);
    out += ",status,length,duration_ms,differs,error\r\n";
    for (const auto& a : r.results) {
        out += std::to_string(a.index);
        for (const auto& [k, v] : a.assignment) out += "," + csv_field(v);
        char ms[32];
        std::snprintf(ms, sizeof ms, "%.3f", a.duration_ms);
        out += "," + (a.status ? std::to_string(*a.status) : std::string()) + "," + std::to_string(a.body_length) + "," +
               ms + "," + (a.differs_from_baseline ? "true" : "false") + "," + csv_field(a.error.value_or("")) + "\r\n";
    }
    return out;
}

namespace {

nlohmann::json source_to_json(const PayloadSource& s) {
    nlohmann::json j;
    switch (s.kind) {
    case PayloadSource::Kind::numeric_range:
        j = {{"kind", "numeric_range"}, {"start", s.start}, {"end", s.end}, {"step", s.step}, {"zero_pad", s.zero_pad}};
        break;
    case PayloadSource::Kind::wordlist: j = {{"kind", "wordlist"}, {"path", s.path}}; break;
    case PayloadSource::Kind::literal_list: j = {{"kind", "literal_list"}, {"values", s.literals}}; break;
    }
    nlohmann::json ts = nlohmann::json::array();
    for (const auto& t : s.transforms) {
        if (t.kind == Transform::Kind::digest)
            ts.push_back({{"digest", std::string(coder::to_string(t.digest))}});
        else
            ts.push_back({{"codec", std::string(coder::to_string(t.codec))},
                          {"direction", t.direction == coder::Direction::encode ? "encode" : "decode"}});
    }
    j["transforms"] = ts;
    return j;
}

PayloadSource source_from_json(const nlohmann::json& j) {
    PayloadSource s;
    auto kind = j.at("kind").get<std::string>();
    if (kind == "numeric_range") {
        s = PayloadSource::range(j.at("start").get<std::int64_t>(), j.at("end").get<std::int64_t>(),
                                 j.value("step", std::int64_t{1}), j.value("zero_pad", 0));
    } else if (kind == "wordlist") {
        s = PayloadSource::wordlist(j.at("path").get<std::string>());
    } else if (kind == "literal_list") {
        s = PayloadSource::list(j.at("values").get<std::vector<std::string>>());
    } else {
        throw Error(ErrorCode::schema_violation, "unknown payload source kind '" + kind + "'");
    }
    for (const auto& t : j.value("transforms", nlohmann::json::array())) {
        Transform tr;
        if (t.contains("digest")) {
            auto d = coder::parse_digest(t.at("digest").get<std::string>());
            if (!d) throw Error(ErrorCode::schema_violation, "unknown digest " + t.at("digest").dump());
            tr.kind = Transform::Kind::digest;
            tr.digest = *d;
        } else {
            auto c = coder::parse_codec(t.at("codec").get<std::string>());
            if (!c) throw Error(ErrorCode::schema_violation, "unknown codec " + t.at("codec").dump());
            tr.codec = *c;
            auto dir = t.value("direction", std::string("encode"));
            if (dir != "encode" && dir != "decode") throw Error(ErrorCode::schema_violation, "direction must be encode or decode");
            tr.direction = dir == "encode" ? coder::Direction::encode : coder::Direction::decode;
        }
        s.transforms.push_back(tr);
    }
    return s;
}

} // namespace

nlohmann::json job_to_json(const RepeaterJob& job) {
    nlohmann::json markers = nlohmann::json::array();
    for (const auto& m : job.tmpl.markers) markers.push_back({{"name", m.name}, {"offset", m.offset}, {"length", m.length}});
    nlohmann::json sources = nlohmann::json::object();
    for (const auto& [k, v] : job.sources) sources[k] = source_to_json(v);
    return {{"template", coder::transform(coder::Codec::base64, coder::Direction::encode, job.tmpl.raw)},
            {"scheme", std::string(http::to_string(job.tmpl.scheme))},
            {"markers", markers},
            {"mode", job.mode == Mode::sequential ? "sequential" : "product"},
            {"sources", sources},
            {"max_in_flight", job.max_in_flight},
            {"rate_limit", job.rate_limit},
            {"stop", job.stop == Stop::none ? "none" : "first_diff"},
            {"length_tolerance", job.length_tolerance},
            {"capture_bodies", job.capture_bodies}};
}

RepeaterJob job_from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) throw Error(ErrorCode::schema_violation, "repeater job must be an object");
        RepeaterJob job;
        std::string raw;
        if (j.contains("template"))
            raw = coder::transform(coder::Codec::base64, coder::Direction::decode, j.at("template").get<std::string>());
        else if (j.contains("template_raw"))
            raw = j.at("template_raw").get<std::string>();
        else
            throw Error(ErrorCode::schema_violation, "missing template (base64) or template_raw");
        auto scheme = j.value("scheme", std::string("http"));
        if (scheme != "http" && scheme != "https") throw Error(ErrorCode::schema_violation, "scheme must be http or https");
        job.tmpl = parse_template(raw, scheme == "https" ? http::Scheme::https : http::Scheme::http);
        auto mode = j.value("mode", std::string("sequential"));
        if (mode != "sequential" && mode != "product") throw Error(ErrorCode::schema_violation, "unknown mode '" + mode + "'");
        job.mode = mode == "sequential" ? Mode::sequential : Mode::product;
        for (const auto& [k, v] : j.at("sources").items()) job.sources[k] = source_from_json(v);
        job.max_in_flight = j.value("max_in_flight", std::size_t{1});
        job.rate_limit = j.value("rate_limit", 0.0);
        auto stop = j.value("stop", std::string("none"));
        if (stop != "none" && stop != "first_diff") throw Error(ErrorCode::schema_violation, "unknown stop '" + stop + "'");
        job.stop = stop == "none" ? Stop::none : Stop::first_diff;
        job.length_tolerance = j.value("length_tolerance", std::size_t{0});
        job.capture_bodies = j.value("capture_bodies", false);
        return job;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::schema_violation, std::string("bad repeater job: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::invalid_encoding) throw Error(ErrorCode::schema_violation, std::string("template: ") + e.what());
        throw;
    }
}

} // namespace robin::repeater
