#include "robin/scanner.hpp"

#include "robin/coder.hpp"
#include "robin/error.hpp"

#include <algorithm>
#include <deque>
#include <random>
#include <thread>
#include <tuple>

namespace robin::scanner {

namespace {

char lower(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

std::string random_canary() {
    static constexpr char kAlnum[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    thread_local std::mt19937_64 rng{std::random_device{}()};
    std::uniform_int_distribution<int> pick(0, 61);
    std::string s(16, 'x');
    for (auto& c : s) c = kAlnum[pick(rng)];
    return s;
}

std::string encode_pairs(const std::vector<std::pair<std::string, std::string>>& fields) {
    std::string out;
    for (const auto& [k, v] : fields) {
        if (!out.empty()) out += '&';
        out += coder::transform(coder::Codec::url_percent, coder::Direction::encode, k) + "=" +
               coder::transform(coder::Codec::url_percent, coder::Direction::encode, v);
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> decode_query(std::string_view q) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t pos = 0;
    while (pos < q.size()) {
        auto amp = q.find('&', pos);
        if (amp == std::string_view::npos) amp = q.size();
        auto pair = q.substr(pos, amp - pos);
        auto eq = pair.find('=');
        auto dec = [](std::string_view s) {
            try {
                return coder::transform(coder::Codec::url_percent, coder::Direction::decode, s);
            } catch (const Error&) {
                return std::string(s);
            }
        };
        if (!pair.empty())
            out.emplace_back(dec(pair.substr(0, eq)), eq == std::string_view::npos ? "" : dec(pair.substr(eq + 1)));
        pos = amp + 1;
    }
    return out;
}

std::string strip_query(const std::string& url) {
    return url.substr(0, url.find('?'));
}

std::string remove_dot_segments(std::string_view path) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    bool trailing = false;
    while (pos <= path.size()) {
        auto slash = path.find('/', pos);
        if (slash == std::string_view::npos) slash = path.size();
        auto seg = path.substr(pos, slash - pos);
        trailing = false;
        if (seg == "..") {
            if (!out.empty()) out.pop_back();
            trailing = true;
        } else if (seg == ".") {
            trailing = true;
        } else if (!seg.empty() || slash == path.size()) {
            out.emplace_back(seg);
        }
        pos = slash + 1;
    }
    std::string result;
    for (const auto& s : out) result += "/" + s;
    if (result.empty() || (trailing && result.back() != '/')) result += "/";
    return result;
}

struct Tag {
    std::string name;
    std::vector<std::pair<std::string, std::string>> attrs;
    std::optional<std::string> attr(std::string_view n) const {
        for (const auto& [k, v] : attrs)
            if (k == n) return v;
        return std::nullopt;
    }
};

std::string unescape_attr(std::string_view v) {
    try {
        return coder::transform(coder::Codec::html_entity, coder::Direction::decode, v);
    } catch (const Error&) {
        return std::string(v);
    }
}

// Next start tag at or after `pos`, skipping comments. Sets pos past it.
std::optional<Tag> next_tag(std::string_view html, std::size_t& pos) {
    while (true) {
        auto lt = html.find('<', pos);
        if (lt == std::string_view::npos) return std::nullopt;
        if (html.substr(lt, 4) == "<!--") {
            auto end = html.find("-->", lt + 4);
            pos = end == std::string_view::npos ? html.size() : end + 3;
            continue;
        }
        std::size_t p = lt + 1;
        Tag tag;
        bool closing = p < html.size() && html[p] == '/';
        if (closing) ++p;
        while (p < html.size() && (std::isalnum(static_cast<unsigned char>(html[p])) || html[p] == '-'))
            tag.name += lower(html[p++]);
        if (tag.name.empty()) {
            pos = lt + 1;
            continue;
        }
        if (closing) tag.name = "/" + tag.name;
        while (p < html.size() && html[p] != '>') {
            if (std::isspace(static_cast<unsigned char>(html[p])) || html[p] == '/') {
                ++p;
                continue;
            }
            std::string name;
            while (p < html.size() && !std::isspace(static_cast<unsigned char>(html[p])) && html[p] != '=' &&
                   html[p] != '>' && html[p] != '/')
                name += lower(html[p++]);
            while (p < html.size() && std::isspace(static_cast<unsigned char>(html[p]))) ++p;
            std::string value;
            if (p < html.size() && html[p] == '=') {
                ++p;
                while (p < html.size() && std::isspace(static_cast<unsigned char>(html[p]))) ++p;
                if (p < html.size() && (html[p] == '"' || html[p] == '\'')) {
                    char q = html[p++];
                    auto end = html.find(q, p);
                    if (end == std::string_view::npos) end = html.size();
                    value = unescape_attr(html.substr(p, end - p));
                    p = std::min(end + 1, html.size());
                } else {
                    auto start = p;
                    while (p < html.size() && !std::isspace(static_cast<unsigned char>(html[p])) && html[p] != '>') ++p;
                    value = unescape_attr(html.substr(start, p - start));
                }
            }
            if (name.empty()) {
                ++p;
                continue;
            }
            tag.attrs.emplace_back(std::move(name), std::move(value));
        }
        pos = std::min(p + 1, html.size());
        return tag;
    }
}

} // namespace

std::optional<http::Target> resolve_url(std::string_view ref, const http::Target& base) {
    while (!ref.empty() && std::isspace(static_cast<unsigned char>(ref.front()))) ref.remove_prefix(1);
    while (!ref.empty() && std::isspace(static_cast<unsigned char>(ref.back()))) ref.remove_suffix(1);
    ref = ref.substr(0, ref.find('#'));

    auto colon = ref.find(':');
    auto first_delim = ref.find_first_of("/?");
    if (colon != std::string_view::npos && colon > 0 && (first_delim == std::string_view::npos || colon < first_delim)) {
        auto scheme = http::to_lower(ref.substr(0, colon));
        if (scheme != "http" && scheme != "https") return std::nullopt;
        try {
            auto t = http::parse_url(ref);
            auto q = t.path_and_query.find('?');
            t.path_and_query = remove_dot_segments(std::string_view(t.path_and_query).substr(0, q)) +
                               (q == std::string::npos ? "" : t.path_and_query.substr(q));
            return t;
        } catch (const Error&) {
            return std::nullopt;
        }
    }
    if (ref.starts_with("//")) {
        try {
            return http::parse_url(std::string(http::to_string(base.scheme)) + ":" + std::string(ref));
        } catch (const Error&) {
            return std::nullopt;
        }
    }
    http::Target t = base;
    std::string_view base_pq = base.path_and_query;
    auto base_path = base_pq.substr(0, base_pq.find('?'));
    if (ref.empty()) {
        t.path_and_query = std::string(base_pq);
        return t;
    }
    std::string path, query;
    auto q = ref.find('?');
    auto ref_path = ref.substr(0, q);
    if (q != std::string_view::npos) query = std::string(ref.substr(q));
    if (ref_path.empty()) {
        path = std::string(base_path);
    } else if (ref_path.front() == '/') {
        path = remove_dot_segments(ref_path);
    } else {
        auto dir = base_path.substr(0, base_path.rfind('/') + 1);
        path = remove_dot_segments(std::string(dir) + std::string(ref_path));
    }
    t.path_and_query = path + query;
    return t;
}

PageLinks extract_links(std::string_view html, const http::Target& base) {
    PageLinks links;
    std::size_t pos = 0;
    std::optional<PageLinks::Form> form;
    while (auto tag = next_tag(html, pos)) {
        if (tag->name == "script" || tag->name == "style") {
            auto end = html.find("</" + tag->name, pos);
            pos = end == std::string_view::npos ? html.size() : end;
            continue;
        }
        if (tag->name == "a" || tag->name == "area") {
            if (auto href = tag->attr("href"))
                if (auto t = resolve_url(*href, base)) links.anchors.push_back(t->url());
        } else if (tag->name == "form") {
            if (form) links.forms.push_back(std::move(*form));
            form.emplace();
            auto action = tag->attr("action").value_or("");
            auto t = resolve_url(action, base);
            form->action = t ? t->url() : std::string();
            auto method = tag->attr("method").value_or("GET");
            std::transform(method.begin(), method.end(), method.begin(),
                           [](char c) { return static_cast<char>(std::toupper(static_cast<unsigned char>(c))); });
            form->method = method == "POST" ? "POST" : "GET";
        } else if (tag->name == "/form") {
            if (form) links.forms.push_back(std::move(*form));
            form.reset();
        } else if (form && (tag->name == "input" || tag->name == "textarea" || tag->name == "select")) {
            auto name = tag->attr("name");
            auto type = http::to_lower(tag->attr("type").value_or("text"));
            if (name && !name->empty() && type != "submit" && type != "button" && type != "image" && type != "reset")
                form->fields.emplace_back(*name, tag->attr("value").value_or(""));
        }
    }
    if (form) links.forms.push_back(std::move(*form));
    links.forms.erase(std::remove_if(links.forms.begin(), links.forms.end(),
                                     [](const PageLinks::Form& f) { return f.action.empty(); }),
                      links.forms.end());
    return links;
}

ProbeOutcome probe_reflection(Requester& requester, const std::string& target_url, const std::string& param,
                              const std::string& method,
                              const std::vector<std::pair<std::string, std::string>>& other_fields) {
    ProbeOutcome out;
    out.canary = random_canary();
    const std::string payload = "<" + out.canary + ">";
    std::vector<std::pair<std::string, std::string>> fields;
    for (const auto& f : other_fields)
        if (f.first != param) fields.push_back(f);
    fields.emplace_back(param, payload);

    auto base = strip_query(target_url);
    http::Request req;
    if (method == "POST") {
        req = client::make_get(base);
        req.method = "POST";
        req.body = encode_pairs(fields);
        req.headers.add("Content-Type", "application/x-www-form-urlencoded");
        req.headers.add("Content-Length", std::to_string(req.body.size()));
        req.framing = http::Framing::content_length;
    } else {
        req = client::make_get(base + "?" + encode_pairs(fields));
    }
    auto rec = requester.fetch(req);
    out.exchange_id = rec.id;
    if (rec.state != ExchangeState::completed || !rec.response) {
        out.errored = true;
        out.error = rec.failure_reason.value_or("no response");
        return out;
    }
    const auto& resp = *rec.response;
    auto ct = http::to_lower(resp.headers.get("Content-Type").value_or("text/html"));
    auto at = resp.body.find(payload);
    if (at == std::string::npos || ct.find("html") == std::string::npos) return out;

    const auto* check = find_check("reflected-input");
    ScanFinding f;
    f.check_id = check->check_id;
    f.severity = check->severity;
    f.wiki_key = check->wiki_key;
    f.exchange_ids = {rec.id};
    f.evidence_spans = {{rec.id, Location::response_body, at, payload.size()}};
    f.url = base;
    f.parameter = param;
    f.summary = "parameter " + param + " is reflected unencoded into the HTML response of " + method + " " + base;
    f.finding_id = compute_finding_id(f);
    out.finding = std::move(f);
    return out;
}

ScanReport active_scan(const ActiveScanJob& job, Requester& requester, const client::OriginAllowList& allow,
                       const ActiveScanHooks& hooks) {
    auto base = http::parse_url(job.base_url);
    allow.require(base);
    if (job.max_pages == 0) throw Error(ErrorCode::invalid_argument, "max_pages must be at least 1");
    for (const auto& p : job.probes) {
        const auto* c = find_check(p);
        if (!c || !c->active) throw Error(ErrorCode::invalid_argument, "unknown active probe '" + p + "'");
    }
    const auto origin = client::OriginAllowList::canonical_origin(base);
    auto in_scope = [&](const http::Target& t) {
        return client::OriginAllowList::canonical_origin(t) == origin && allow.allows(t);
    };
    auto cancelled = [&] { return hooks.cancelled && hooks.cancelled(); };

    ScanReport report;
    std::set<std::tuple<std::string, std::string, std::string>> finding_keys;
    auto add_finding = [&](ScanFinding f) {
        if (!finding_keys.emplace(f.check_id, strip_query(f.url), f.parameter).second) return;
        if (hooks.on_finding) hooks.on_finding(f);
        report.findings.push_back(std::move(f));
    };
    auto progress = [&] {
        if (hooks.on_progress) hooks.on_progress(report.pages_visited, report.probes_fired);
    };
    bool first_request = true;
    auto pace = [&] {
        if (!first_request && job.politeness_delay.count() > 0) std::this_thread::sleep_for(job.politeness_delay);
        first_request = false;
    };

    struct Candidate {
        std::string url, param, method;
        std::vector<std::pair<std::string, std::string>> fields;
    };
    std::vector<Candidate> candidates;
    std::set<std::tuple<std::string, std::string, std::string>> candidate_keys;
    auto add_candidates = [&](const std::string& url, const std::string& method,
                              const std::vector<std::pair<std::string, std::string>>& fields) {
        for (const auto& [name, value] : fields)
            if (candidate_keys.emplace(method, strip_query(url), name).second)
                candidates.push_back({strip_query(url), name, method, fields});
    };

    std::deque<std::string> queue{base.url()};
    std::set<std::string> seen{base.url()};
    auto enqueue = [&](const http::Target& t) {
        if (!in_scope(t)) return;
        if (seen.insert(t.url()).second) queue.push_back(t.url());
    };

    std::vector<ExchangeRecord> crawled;
    while (!queue.empty() && report.pages_visited < job.max_pages && !cancelled()) {
        auto url = queue.front();
        queue.pop_front();
        pace();
        auto rec = requester.fetch(client::make_get(url));
        ++report.pages_visited;
        report.visited_urls.push_back(url);
        if (rec.state != ExchangeState::completed || !rec.response) {
            auto reason = rec.failure_reason.value_or("no response");
            if (report.pages_visited == 1)
                throw Error(ErrorCode::base_unreachable, "base URL " + url + " unreachable: " + reason);
            report.errors.push_back(url + ": " + reason);
            progress();
            continue;
        }
        for (auto& f : passive_scan(rec)) add_finding(std::move(f));
        const auto& resp = *rec.response;
        const auto& page = rec.request.target;
        if (resp.status >= 300 && resp.status < 400)
            if (auto loc = resp.headers.get("Location"))
                if (auto t = resolve_url(*loc, page)) enqueue(*t);
        auto ct = http::to_lower(resp.headers.get("Content-Type").value_or(""));
        if (ct.find("html") != std::string::npos) {
            auto links = extract_links(resp.body, page);
            for (const auto& a : links.anchors) {
                auto t = http::parse_url(a);
                if (!in_scope(t)) continue;
                enqueue(t);
                auto q = t.path_and_query.find('?');
                if (q != std::string::npos) add_candidates(t.url(), "GET", decode_query(t.path_and_query.substr(q + 1)));
            }
            for (const auto& form : links.forms) {
                auto t = http::parse_url(form.action);
                if (in_scope(t)) add_candidates(t.url(), form.method, form.fields);
            }
        }
        crawled.push_back(std::move(rec));
        progress();
    }

    for (auto& f : detect_enumerable_id(crawled)) add_finding(std::move(f));

    if (job.probes.count("reflected-input")) {
        for (const auto& c : candidates) {
            if (cancelled()) break;
            pace();
            auto outcome = probe_reflection(requester, c.url, c.param, c.method, c.fields);
            ++report.probes_fired;
            report.probes.push_back(
                {c.url, c.param, c.method, "reflected-input", outcome.exchange_id, outcome.errored, outcome.error});
            if (outcome.errored) report.errors.push_back(c.method + " " + c.url + " probe " + c.param + ": " + outcome.error);
            if (outcome.finding) add_finding(std::move(*outcome.finding));
            progress();
        }
    }
    return report;
}

nlohmann::json to_json(const ScanReport& r) {
    nlohmann::json findings = nlohmann::json::array();
    for (const auto& f : r.findings) findings.push_back(to_json(f));
    nlohmann::json probes = nlohmann::json::array();
    for (const auto& p : r.probes)
        probes.push_back({{"url", p.url},
                          {"parameter", p.parameter},
                          {"method", p.method},
                          {"check_id", p.check_id},
                          {"exchange_id", p.exchange_id},
                          {"errored", p.errored},
                          {"error", p.error}});
    return {{"findings", findings},
            {"pages_visited", r.pages_visited},
            {"probes_fired", r.probes_fired},
            {"errors", r.errors},
            {"visited_urls", r.visited_urls},
            {"probes", probes}};
}

} // namespace robin::scanner
