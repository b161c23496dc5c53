#include "robin/scanner.hpp"

#include "robin/intercept.hpp"

#include <algorithm>
#include <map>

namespace robin::scanner {

namespace {

// One decimal identifier seen in a request.
struct Token {
    std::string key;        // structural position, same across requests
    std::string url;        // finding url (origin + templated path)
    std::string parameter;
    std::string prefix;
    std::uint64_t value;
    EvidenceSpan span;
};

bool all_digits(std::string_view s) {
    return !s.empty() && s.size() <= 18 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Splits "abc:123" into ("abc:", 123). The prefix may be empty but must not
// itself end in a digit.
std::optional<std::pair<std::string, std::uint64_t>> split_prefixed(std::string_view s) {
    std::size_t d = s.size();
    while (d > 0 && s[d - 1] >= '0' && s[d - 1] <= '9') --d;
    auto digits = s.substr(d);
    if (!all_digits(digits)) return std::nullopt;
    return std::make_pair(std::string(s.substr(0, d)), std::stoull(std::string(digits)));
}

void pairs_of(std::string_view text, std::size_t base, const std::string& key_prefix, Location loc, ExchangeId id,
              const std::string& url, std::vector<Token>& out) {
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto amp = text.find('&', pos);
        if (amp == std::string_view::npos) amp = text.size();
        auto pair = text.substr(pos, amp - pos);
        auto eq = pair.find('=');
        if (eq != std::string_view::npos) {
            auto name = std::string(pair.substr(0, eq));
            auto value = pair.substr(eq + 1);
            if (auto pv = split_prefixed(value); pv && !name.empty()) {
                Token t{key_prefix + "|" + name + "|" + pv->first, url, name, pv->first, pv->second,
                        {id, loc, base + pos + eq + 1, value.size()}};
                out.push_back(std::move(t));
            }
        }
        pos = amp + 1;
    }
}

void json_tokens(const nlohmann::json& j, const std::string& path, std::string_view body, const std::string& key_prefix,
                 ExchangeId id, const std::string& url, std::vector<Token>& out) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it)
            json_tokens(it.value(), path.empty() ? it.key() : path + "." + it.key(), body, key_prefix, id, url, out);
        return;
    }
    std::string prefix;
    std::uint64_t value = 0;
    std::string literal;
    if (j.is_number_unsigned()) {
        value = j.get<std::uint64_t>();
        literal = std::to_string(value);
    } else if (j.is_string()) {
        auto pv = split_prefixed(j.get<std::string>());
        if (!pv) return;
        prefix = pv->first;
        value = pv->second;
        literal = j.get<std::string>();
    } else {
        return;
    }
    auto leaf = path.substr(path.rfind('.') == std::string::npos ? 0 : path.rfind('.') + 1);
    auto at = body.find("\"" + leaf + "\"");
    std::size_t off = 0;
    if (at != std::string_view::npos) {
        auto v = body.find(literal, at + leaf.size() + 2);
        if (v != std::string_view::npos) off = v;
    }
    out.push_back({key_prefix + "|json|" + path + "|" + prefix, url, path, prefix, value,
                   {id, Location::request_body, off, literal.size()}});
}

std::vector<Token> tokens_of(const ExchangeRecord& r) {
    std::vector<Token> out;
    const auto& req = r.effective_request();
    const auto& t = req.target;
    auto origin = t.origin();
    std::string_view pq = t.path_and_query;
    auto qpos = pq.find('?');
    auto path = pq.substr(0, qpos);
    auto path_url = origin + std::string(path);

    std::vector<std::pair<std::size_t, std::size_t>> segs;
    for (std::size_t p = 0; p < path.size();) {
        if (path[p] == '/') {
            ++p;
            continue;
        }
        auto e = path.find('/', p);
        if (e == std::string_view::npos) e = path.size();
        segs.emplace_back(p, e - p);
        p = e;
    }
    for (std::size_t i = 0; i < segs.size(); ++i) {
        auto seg = path.substr(segs[i].first, segs[i].second);
        if (!all_digits(seg)) continue;
        std::string tmpl;
        for (std::size_t k = 0; k < segs.size(); ++k)
            tmpl += "/" + (k == i ? std::string("{id}") : std::string(path.substr(segs[k].first, segs[k].second)));
        if (!path.empty() && path.back() == '/') tmpl += "/";
        out.push_back({"path|" + req.method + "|" + origin + tmpl, origin + tmpl, "path[" + std::to_string(i) + "]", "",
                       std::stoull(std::string(seg)), {r.id, Location::url, origin.size() + segs[i].first, seg.size()}});
    }
    auto base_key = req.method + "|" + path_url;
    if (qpos != std::string_view::npos)
        pairs_of(pq.substr(qpos + 1), origin.size() + qpos + 1, "query|" + base_key, Location::url, r.id, path_url, out);

    auto ct = http::to_lower(req.headers.get("Content-Type").value_or(""));
    if (!req.body.empty()) {
        if (ct.find("x-www-form-urlencoded") != std::string::npos) {
            pairs_of(req.body, 0, "form|" + base_key, Location::request_body, r.id, path_url, out);
        } else if (ct.find("json") != std::string::npos || req.body.front() == '{') {
            auto j = nlohmann::json::parse(req.body, nullptr, false);
            if (!j.is_discarded()) json_tokens(j, "", req.body, "body|" + base_key, r.id, path_url, out);
        }
    }
    return out;
}

} // namespace

std::vector<ScanFinding> detect_enumerable_id(const std::vector<ExchangeRecord>& exchanges) {
    struct Group {
        std::vector<Token> tokens;
        std::map<std::uint64_t, std::string> bodies;  // value -> body
    };
    std::map<std::string, Group> groups;
    for (const auto& r : exchanges) {
        const auto* resp = r.effective_response();
        if (r.state != ExchangeState::completed || !resp || resp->status < 200 || resp->status > 299) continue;
        for (auto& t : tokens_of(r)) {
            auto& g = groups[t.key];
            g.bodies.emplace(t.value, resp->body);
            g.tokens.push_back(std::move(t));
        }
    }

    std::vector<ScanFinding> out;
    const auto* check = find_check("enumerable-identifier");
    for (auto& [key, g] : groups) {
        std::size_t distinct_values = g.bodies.size();
        std::set<std::string> distinct_bodies;
        for (const auto& [v, b] : g.bodies) distinct_bodies.insert(b);
        if (distinct_values < 2 || distinct_bodies.size() < 2) continue;
        auto lo = g.bodies.begin()->first, hi = g.bodies.rbegin()->first;
        if (hi - lo > 10 * distinct_values) continue;

        ScanFinding f;
        f.check_id = check->check_id;
        f.severity = check->severity;
        f.wiki_key = check->wiki_key;
        f.url = g.tokens.front().url;
        f.parameter = g.tokens.front().parameter;
        for (const auto& t : g.tokens) {
            if (std::find(f.exchange_ids.begin(), f.exchange_ids.end(), t.span.exchange_id) == f.exchange_ids.end())
                f.exchange_ids.push_back(t.span.exchange_id);
            f.evidence_spans.push_back(t.span);
        }
        const auto& prefix = g.tokens.front().prefix;
        f.summary = std::to_string(distinct_values) + " sequential values of " + f.parameter + " (" + prefix +
                    std::to_string(lo) + ".." + prefix + std::to_string(hi) + ") returned " +
                    std::to_string(distinct_bodies.size()) + " distinct 2xx bodies at " + f.url;
        f.finding_id = compute_finding_id(f);
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<ScanFinding> detect_enumerable_id(const intercept::HistoryStore& history, ExchangeId first,
                                              ExchangeId last) {
    intercept::HistoryFilter filter;
    filter.id_min = first;
    filter.id_max = last;
    return detect_enumerable_id(history.query(filter));
}

} // namespace robin::scanner
