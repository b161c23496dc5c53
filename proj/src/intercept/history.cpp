#include "robin/error.hpp"
#include "robin/intercept.hpp"

#include <algorithm>
#include <cctype>

namespace robin::intercept {

namespace {

bool contains_icase(std::string_view haystack, std::string_view needle) {
    if (needle.empty()) return true;
    auto it = std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end(), [](char a, char b) {
        return std::tolower(static_cast<unsigned char>(a)) == std::tolower(static_cast<unsigned char>(b));
    });
    return it != haystack.end();
}

} // namespace

bool HistoryFilter::matches(const ExchangeRecord& r) const {
    const auto& req = r.effective_request();
    if (host_contains && !contains_icase(req.target.host, *host_contains)) return false;
    if (method && !http::iequals(req.method, *method)) return false;
    if (scheme && r.scheme != *scheme) return false;
    if (status_class) {
        const auto* resp = r.effective_response();
        if (!resp || resp->status / 100 != *status_class) return false;
    }
    if (from && r.t_request_start < *from) return false;
    if (to && r.t_request_start > *to) return false;
    if (id_min && r.id < *id_min) return false;
    if (id_max && r.id > *id_max) return false;
    if (state && r.state != *state) return false;
    if (body_contains) {
        auto in = [&](const std::string& body) { return body.find(*body_contains) != std::string::npos; };
        bool hit = in(r.request.body) || (r.edited_request && in(r.edited_request->body)) ||
                   (r.response && in(r.response->body)) || (r.edited_response && in(r.edited_response->body));
        if (!hit) return false;
    }
    return true;
}

HistoryFilter filter_from_json(const nlohmann::json& j) {
    HistoryFilter f;
    if (j.is_null()) return f;
    if (!j.is_object()) throw Error(ErrorCode::schema_violation, "filter must be an object");
    try {
        auto str = [&](const char* key) -> std::optional<std::string> {
            if (!j.contains(key) || j[key].is_null()) return std::nullopt;
            if (j[key].is_string()) return j[key].get<std::string>();
            return j[key].dump();
        };
        f.host_contains = str("host");
        f.method = str("method");
        f.body_contains = str("text");
        if (auto s = str("status")) {
            // Accepts "5xx", "5" or 5.
            std::string v = *s;
            if (v.size() == 3 && (v[1] == 'x' || v[1] == 'X')) v = v.substr(0, 1);
            if (v.size() != 1 || v[0] < '1' || v[0] > '5')
                throw Error(ErrorCode::schema_violation, "status must be a class such as 2xx");
            f.status_class = v[0] - '0';
        }
        if (auto s = str("scheme")) {
            if (*s == "http") f.scheme = http::Scheme::http;
            else if (*s == "https") f.scheme = http::Scheme::https;
            else throw Error(ErrorCode::schema_violation, "scheme must be http or https");
        }
        for (auto [key, slot] : {std::pair{"from", &f.from}, std::pair{"to", &f.to}}) {
            if (auto s = str(key)) {
                auto t = parse_rfc3339(*s);
                if (!t) throw Error(ErrorCode::schema_violation, std::string(key) + " must be RFC 3339");
                *slot = *t;
            }
        }
        for (auto [key, slot] : {std::pair{"id_min", &f.id_min}, std::pair{"id_max", &f.id_max}}) {
            if (auto s = str(key)) *slot = std::stoull(*s);
        }
        if (auto s = str("state")) {
            f.state = parse_exchange_state(*s);
            if (!f.state) throw Error(ErrorCode::schema_violation, "unknown state " + *s);
        }
    } catch (const std::invalid_argument&) {
        throw Error(ErrorCode::schema_violation, "numeric filter value expected");
    } catch (const std::out_of_range&) {
        throw Error(ErrorCode::schema_violation, "numeric filter value out of range");
    }
    return f;
}

ExchangeId HistoryStore::append(ExchangeRecord record) {
    std::lock_guard lock(mu_);
    record.id = next_id_++;
    records_.push_back(std::move(record));
    return records_.back().id;
}

std::optional<ExchangeRecord> HistoryStore::update(ExchangeId id,
                                                   const std::function<void(ExchangeRecord&)>& mutate) {
    std::lock_guard lock(mu_);
    // ids are dense and 1-based, so the record lives at id-1.
    if (id == 0 || id > records_.size()) return std::nullopt;
    auto& r = records_[id - 1];
    if (is_terminal(r.state)) return std::nullopt;
    mutate(r);
    return r;
}

std::optional<ExchangeRecord> HistoryStore::get(ExchangeId id) const {
    std::lock_guard lock(mu_);
    if (id == 0 || id > records_.size()) return std::nullopt;
    return records_[id - 1];
}

std::vector<ExchangeRecord> HistoryStore::query(const HistoryFilter& filter) const {
    std::lock_guard lock(mu_);
    std::vector<ExchangeRecord> out;
    for (const auto& r : records_)
        if (filter.matches(r)) out.push_back(r);
    return out;
}

std::vector<ExchangeSummary> HistoryStore::summaries(const HistoryFilter& filter) const {
    std::lock_guard lock(mu_);
    std::vector<ExchangeSummary> out;
    for (const auto& r : records_)
        if (filter.matches(r)) out.push_back(summarize(r));
    return out;
}

std::size_t HistoryStore::size() const {
    std::lock_guard lock(mu_);
    return records_.size();
}

SessionWriter::SessionWriter(const std::filesystem::path& path) : out_(path, std::ios::app | std::ios::binary) {
    if (!out_) throw Error(ErrorCode::io_error, "cannot open session file " + path.string());
}

void SessionWriter::write(const ExchangeRecord& record) {
    std::string line = to_json(record).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
    std::lock_guard lock(mu_);
    out_ << line;
    out_.flush();
}

} // namespace robin::intercept
