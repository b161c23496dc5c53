#include "robin/scanner.hpp"

#include "robin/coder.hpp"
#include "robin/error.hpp"

#include <algorithm>
#include <set>

namespace robin::scanner {

namespace {

const std::vector<CheckInfo> kCatalog = {
    {"missing-hsts", Severity::medium, "missing-hsts", true, false,
     "HTTPS response without Strict-Transport-Security"},
    {"missing-xcto", Severity::low, "missing-xcto", true, false,
     "response body without X-Content-Type-Options: nosniff"},
    {"missing-frame-protection", Severity::medium, "missing-frame-protection", true, false,
     "HTML response without X-Frame-Options or CSP frame-ancestors"},
    {"insecure-cookie", Severity::medium, "insecure-cookie", true, false,
     "Set-Cookie without HttpOnly, or without Secure over HTTPS"},
    {"verbose-banner", Severity::info, "verbose-banner", true, false,
     "Server or X-Powered-By header discloses a version"},
    {"sensitive-email", Severity::low, "sensitive-email", true, false, "email address in response body"},
    {"sensitive-pan", Severity::high, "sensitive-pan", true, false,
     "Luhn-valid 13-19 digit card number in response body"},
    {"sensitive-token", Severity::medium, "sensitive-token", true, false, "JSON Web Token in response body"},
    {"enumerable-identifier", Severity::high, "idor", true, false,
     "sequential identifiers return distinct records"},
    {"reflected-input", Severity::high, "xss-reflected", true, true, "parameter reflected unencoded into HTML"},
};

bool is_alnum(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}
bool is_digit(char c) {
    return c >= '0' && c <= '9';
}
bool is_b64url(char c) {
    return is_alnum(c) || c == '-' || c == '_';
}
bool is_local_char(char c) {
    return is_alnum(c) || c == '.' || c == '_' || c == '%' || c == '+' || c == '-';
}
bool is_domain_char(char c) {
    return is_alnum(c) || c == '.' || c == '-';
}

bool textual(const http::Headers& h) {
    auto ct = h.get("Content-Type");
    if (!ct) return true;
    auto t = http::to_lower(*ct);
    static const char* kinds[] = {"text/", "json", "xml", "javascript", "x-www-form-urlencoded", "csv"};
    return std::any_of(std::begin(kinds), std::end(kinds), [&](const char* k) { return t.find(k) != std::string::npos; });
}

struct Match {
    std::size_t offset, length;
};

std::vector<Match> find_emails(std::string_view s) {
    std::vector<Match> out;
    std::size_t at = 0;
    std::size_t last_end = 0;
    while ((at = s.find('@', at)) != std::string_view::npos) {
        std::size_t b = at;
        while (b > last_end && is_local_char(s[b - 1])) --b;
        while (b < at && s[b] == '.') ++b;
        std::size_t e = at + 1;
        while (e < s.size() && is_domain_char(s[e])) ++e;
        while (e > at + 1 && (s[e - 1] == '.' || s[e - 1] == '-')) --e;
        auto domain = s.substr(at + 1, e - at - 1);
        auto dot = domain.rfind('.');
        bool ok = b < at && dot != std::string_view::npos && dot > 0 && domain.find("..") == std::string_view::npos;
        if (ok) {
            auto tld = domain.substr(dot + 1);
            ok = tld.size() >= 2 && std::all_of(tld.begin(), tld.end(), [](char c) {
                     return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
                 });
            // Retina asset names such as logo@2x.png.
            static const std::set<std::string, std::less<>> kAssetExtensions = {
                "png", "jpg", "jpeg", "gif", "svg", "webp", "avif", "ico", "bmp", "css", "js"};
            if (ok && kAssetExtensions.count(http::to_lower(tld))) ok = false;
        }
        if (ok) {
            out.push_back({b, e - b});
            last_end = e;
            at = e;
        } else {
            ++at;
        }
    }
    return out;
}

std::vector<Match> find_pans(std::string_view s) {
    std::vector<Match> out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (!is_digit(s[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < s.size() && is_digit(s[j])) ++j;
        auto run = s.substr(i, j - i);
        // Card numbers start with an issuer major industry digit 2-6; this
        // also keeps millisecond timestamps out.
        if (run.size() >= 13 && run.size() <= 19 && run[0] >= '2' && run[0] <= '6' && luhn_valid(run))
            out.push_back({i, run.size()});
        i = j;
    }
    return out;
}

std::vector<Match> find_jwts(std::string_view s) {
    std::vector<Match> out;
    std::size_t at = 0;
    while ((at = s.find("eyJ", at)) != std::string_view::npos) {
        if (at > 0 && is_b64url(s[at - 1])) {
            at += 3;
            continue;
        }
        std::size_t seg_start[3], seg_end[3];
        std::size_t p = at;
        bool ok = true;
        for (int k = 0; k < 3 && ok; ++k) {
            seg_start[k] = p;
            while (p < s.size() && is_b64url(s[p])) ++p;
            seg_end[k] = p;
            if (seg_end[k] == seg_start[k]) ok = false;
            if (k < 2) {
                if (p < s.size() && s[p] == '.') ++p;
                else ok = false;
            }
        }
        if (ok && p < s.size() && s[p] == '.') ok = false;  // more than three segments
        if (ok) {
            try {
                auto header = coder::transform(coder::Codec::base64url, coder::Direction::decode,
                                               s.substr(seg_start[0], seg_end[0] - seg_start[0]));
                auto j = nlohmann::json::parse(header, nullptr, false);
                ok = j.is_object() && j.contains("alg");
                auto payload = coder::transform(coder::Codec::base64url, coder::Direction::decode,
                                                s.substr(seg_start[1], seg_end[1] - seg_start[1]));
                ok = ok && nlohmann::json::parse(payload, nullptr, false).is_object();
            } catch (const Error&) {
                ok = false;
            }
        }
        if (ok) {
            out.push_back({at, p - at});
            at = p;
        } else {
            at += 3;
        }
    }
    return out;
}

// Offset of header `index` inside serialize_head(resp).
EvidenceSpan header_span(ExchangeId id, const http::Response& resp, std::size_t index) {
    std::size_t pos = http::serialize_head(http::Response{resp.status, resp.reason, resp.version, {}, {}, {}}).size() - 2;
    for (std::size_t i = 0; i < resp.headers.size(); ++i) {
        const auto& h = resp.headers.items()[i];
        std::size_t len = h.name.size() + 2 + h.value.size();
        if (i == index) return {id, Location::response_header, pos, len};
        pos += len + 2;
    }
    return {id, Location::response_header, 0, 0};
}

std::string finding_url(const ExchangeRecord& r) {
    const auto& t = r.effective_request().target;
    auto path = t.path_and_query.substr(0, t.path_and_query.find('?'));
    return t.origin() + path;
}

ScanFinding make_finding(const CheckInfo& check, const ExchangeRecord& r, std::string summary,
                         std::vector<EvidenceSpan> spans, std::string parameter = {}) {
    ScanFinding f;
    f.check_id = check.check_id;
    f.severity = check.severity;
    f.wiki_key = check.wiki_key;
    f.exchange_ids = {r.id};
    f.evidence_spans = std::move(spans);
    f.summary = std::move(summary);
    f.url = finding_url(r);
    f.parameter = std::move(parameter);
    return f;
}

} // namespace

std::string_view to_string(Location l) noexcept {
    switch (l) {
    case Location::request_header: return "request_header";
    case Location::response_header: return "response_header";
    case Location::request_body: return "request_body";
    case Location::response_body: return "response_body";
    case Location::url: return "url";
    }
    return "url";
}

const std::vector<CheckInfo>& catalog() {
    return kCatalog;
}

const CheckInfo* find_check(std::string_view id) {
    for (const auto& c : kCatalog)
        if (c.check_id == id) return &c;
    return nullptr;
}

void assert_catalog_closure(const wiki::WikiCatalog& wiki) {
    for (const auto& c : kCatalog)
        if (!wiki.get(c.wiki_key))
            throw Error(ErrorCode::missing_wiki_entry,
                        "check " + c.check_id + " refers to missing wiki entry '" + c.wiki_key + "'");
}

bool luhn_valid(std::string_view digits) noexcept {
    if (digits.empty()) return false;
    int sum = 0;
    bool dbl = false;
    for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
        if (!is_digit(*it)) return false;
        int d = *it - '0';
        if (dbl) {
            d *= 2;
            if (d > 9) d -= 9;
        }
        sum += d;
        dbl = !dbl;
    }
    return sum % 10 == 0;
}

std::string compute_finding_id(const ScanFinding& f) {
    std::string key = f.check_id + "\n" + f.url + "\n" + f.parameter + "\n";
    for (auto id : f.exchange_ids) key += std::to_string(id) + ",";
    for (const auto& s : f.evidence_spans)
        key += std::to_string(s.exchange_id) + ":" + std::string(to_string(s.location)) + ":" +
               std::to_string(s.offset) + ":" + std::to_string(s.length) + ";";
    return f.check_id + "-" + coder::digest(coder::DigestScheme::sha256, key).substr(0, 16);
}

std::vector<ScanFinding> passive_scan(const ExchangeRecord& r) {
    std::vector<ScanFinding> out;
    const auto* resp = r.effective_response();
    if (!resp || r.state != ExchangeState::completed) return out;
    const bool https = r.effective_request().target.scheme == http::Scheme::https;
    const auto& h = resp->headers;
    const bool has_body = !resp->body.empty() || r.response_body_size > 0;
    const bool partial = r.response_truncated && !r.edited_response;

    if (https && !h.contains("Strict-Transport-Security"))
        out.push_back(make_finding(*find_check("missing-hsts"), r, "HTTPS response lacks Strict-Transport-Security", {}));

    auto xcto = h.get("X-Content-Type-Options");
    if (has_body && !(xcto && http::iequals(*xcto, "nosniff")))
        out.push_back(make_finding(*find_check("missing-xcto"), r,
                                   "response with a body lacks X-Content-Type-Options: nosniff", {}));

    auto ct = h.get("Content-Type");
    if (ct && http::to_lower(*ct).starts_with("text/html")) {
        auto xfo = h.get("X-Frame-Options");
        bool framed_ok = xfo && (http::iequals(*xfo, "DENY") || http::iequals(*xfo, "SAMEORIGIN"));
        for (const auto& csp : h.get_all("Content-Security-Policy"))
            if (http::to_lower(csp).find("frame-ancestors") != std::string::npos) framed_ok = true;
        if (!framed_ok)
            out.push_back(make_finding(*find_check("missing-frame-protection"), r,
                                       "HTML response can be framed by any origin", {}));
    }

    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto& hd = h.items()[i];
        if (http::iequals(hd.name, "Set-Cookie")) {
            std::string_view v = hd.value;
            auto name = std::string(v.substr(0, std::min(v.find('='), v.find(';'))));
            bool httponly = false, secure = false;
            std::string_view attrs = v.find(';') == std::string_view::npos ? std::string_view{} : v.substr(v.find(';') + 1);
            while (!attrs.empty()) {
                auto semi = attrs.find(';');
                auto attr = attrs.substr(0, semi);
                while (!attr.empty() && attr.front() == ' ') attr.remove_prefix(1);
                auto aname = attr.substr(0, attr.find('='));
                while (!aname.empty() && aname.back() == ' ') aname.remove_suffix(1);
                if (http::iequals(aname, "HttpOnly")) httponly = true;
                if (http::iequals(aname, "Secure")) secure = true;
                if (semi == std::string_view::npos) break;
                attrs.remove_prefix(semi + 1);
            }
            std::vector<std::string> missing;
            if (!httponly) missing.push_back("HttpOnly");
            if (https && !secure) missing.push_back("Secure");
            if (!missing.empty()) {
                std::string what = missing[0] + (missing.size() > 1 ? " and " + missing[1] : "");
                out.push_back(make_finding(*find_check("insecure-cookie"), r, "cookie " + name + " set without " + what,
                                           {header_span(r.id, *resp, i)}, name));
            }
        } else if (http::iequals(hd.name, "Server") || http::iequals(hd.name, "X-Powered-By")) {
            if (std::any_of(hd.value.begin(), hd.value.end(), is_digit))
                out.push_back(make_finding(*find_check("verbose-banner"), r, hd.name + " discloses '" + hd.value + "'",
                                           {header_span(r.id, *resp, i)}, hd.name));
        }
    }

    if (has_body && textual(h)) {
        std::string_view body = resp->body;
        auto spans_of = [&](const std::vector<Match>& ms) {
            std::vector<EvidenceSpan> spans;
            for (const auto& m : ms) {
                // A match running into the cut of a truncated capture may be
                // a fragment; skip it.
                if (partial && m.offset + m.length == body.size()) continue;
                spans.push_back({r.id, Location::response_body, m.offset, m.length});
            }
            return spans;
        };
        auto emit = [&](const char* check, const std::vector<Match>& ms, const char* what) {
            auto spans = spans_of(ms);
            if (spans.empty()) return;
            out.push_back(make_finding(*find_check(check), r,
                                       std::to_string(spans.size()) + " " + what + " in response body", std::move(spans)));
        };
        emit("sensitive-email", find_emails(body), "email address(es)");
        emit("sensitive-pan", find_pans(body), "card number(s)");
        emit("sensitive-token", find_jwts(body), "JSON Web Token(s)");
    }

    for (auto& f : out) {
        f.partial_scan = partial;
        f.finding_id = compute_finding_id(f);
    }
    return out;
}

nlohmann::json to_json(const ScanFinding& f) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : f.evidence_spans)
        spans.push_back({{"exchange_id", s.exchange_id},
                         {"location", std::string(to_string(s.location))},
                         {"offset", s.offset},
                         {"length", s.length}});
    return {{"finding_id", f.finding_id},
            {"check_id", f.check_id},
            {"severity", std::string(wiki::to_string(f.severity))},
            {"exchange_ids", f.exchange_ids},
            {"evidence_spans", spans},
            {"wiki_key", f.wiki_key},
            {"summary", f.summary},
            {"url", f.url},
            {"parameter", f.parameter},
            {"partial_scan", f.partial_scan}};
}

ScanFinding finding_from_json(const nlohmann::json& j) {
    try {
        ScanFinding f;
        f.finding_id = j.value("finding_id", std::string());
        f.check_id = j.at("check_id").get<std::string>();
        auto sev = wiki::parse_severity(j.value("severity", std::string("info")));
        if (!sev) throw Error(ErrorCode::schema_violation, "unknown severity");
        f.severity = *sev;
        f.exchange_ids = j.value("exchange_ids", std::vector<ExchangeId>{});
        for (const auto& s : j.value("evidence_spans", nlohmann::json::array())) {
            EvidenceSpan span;
            span.exchange_id = s.at("exchange_id").get<ExchangeId>();
            auto loc = s.at("location").get<std::string>();
            bool known = false;
            for (auto l : {Location::request_header, Location::response_header, Location::request_body,
                           Location::response_body, Location::url})
                if (to_string(l) == loc) {
                    span.location = l;
                    known = true;
                }
            if (!known) throw Error(ErrorCode::schema_violation, "unknown location " + loc);
            span.offset = s.at("offset").get<std::size_t>();
            span.length = s.at("length").get<std::size_t>();
            f.evidence_spans.push_back(span);
        }
        f.wiki_key = j.value("wiki_key", std::string());
        f.summary = j.value("summary", std::string());
        f.url = j.value("url", std::string());
        f.parameter = j.value("parameter", std::string());
        f.partial_scan = j.value("partial_scan", false);
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::schema_violation, std::string("bad finding: ") + e.what());
    }
}

wiki::WikiEntry explain(const ScanFinding& finding, const wiki::WikiCatalog& wiki) {
    auto e = wiki.get(finding.wiki_key);
    if (!e) throw Error(ErrorCode::missing_wiki_entry, "no wiki entry for key '" + finding.wiki_key + "'");
    return *e;
}

} // namespace robin::scanner
