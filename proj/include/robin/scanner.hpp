#pragma once

#include "robin/exchange.hpp"
#include "robin/requester.hpp"
#include "robin/wiki.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace robin::intercept {
class HistoryStore;
}

namespace robin::scanner {

using wiki::Severity;
using client::Requester;

enum class Location { request_header, response_header, request_body, response_body, url };
std::string_view to_string(Location l) noexcept;

struct EvidenceSpan {
    ExchangeId exchange_id = 0;
    Location location = Location::response_body;
    std::size_t offset = 0;
    std::size_t length = 0;
    bool operator==(const EvidenceSpan&) const = default;
};

struct ScanFinding {
    std::string finding_id;
    std::string check_id;
    Severity severity = Severity::info;
    std::vector<ExchangeId> exchange_ids;
    std::vector<EvidenceSpan> evidence_spans;
    std::string wiki_key;
    std::string summary;
    // Origin and path (no query) the finding belongs to, plus the parameter,
    // cookie or header name when the check is about one.
    std::string url;
    std::string parameter;
    bool partial_scan = false;
};

// Stable id derived from check, url, parameter, exchanges and spans.
std::string compute_finding_id(const ScanFinding& f);

nlohmann::json to_json(const ScanFinding& f);
ScanFinding finding_from_json(const nlohmann::json& j);

struct CheckInfo {
    std::string check_id;
    Severity severity;
    std::string wiki_key;
    bool enabled = true;
    bool active = false;  // needs to send traffic
    std::string description;
};

const std::vector<CheckInfo>& catalog();
const CheckInfo* find_check(std::string_view check_id);
// Every catalog wiki_key must resolve. Throws Error(missing_wiki_entry).
void assert_catalog_closure(const wiki::WikiCatalog& wiki);

// Header, cookie, banner and sensitive-data checks on one completed
// exchange. Captured-but-truncated bodies are scanned as far as they go and
// the findings carry partial_scan=true.
std::vector<ScanFinding> passive_scan(const ExchangeRecord& exchange);

// Exchanges whose request carries a decimal identifier at the same
// structural position (path segment, query or form parameter, JSON field,
// optionally behind a constant prefix) emit one "enumerable-identifier"
// finding per position when at least two 2xx responses with different
// bodies cover values within max-min <= 10 * count.
std::vector<ScanFinding> detect_enumerable_id(const std::vector<ExchangeRecord>& exchanges);
std::vector<ScanFinding> detect_enumerable_id(const intercept::HistoryStore& history, ExchangeId first,
                                              ExchangeId last);

// Luhn checksum over an ASCII digit string.
bool luhn_valid(std::string_view digits) noexcept;

struct ProbeOutcome {
    std::optional<ScanFinding> finding;
    ExchangeId exchange_id = 0;
    bool errored = false;
    std::string error;
    std::string canary;
};

// Sends `param` set to "<" + canary + ">" where canary is 16 random
// alphanumerics. A verbatim, unencoded echo in the response body is a
// reflected-input finding. `method` GET puts the parameter in the query,
// POST sends an urlencoded form with `other_fields`.
ProbeOutcome probe_reflection(Requester& requester, const std::string& target_url, const std::string& param,
                              const std::string& method = "GET",
                              const std::vector<std::pair<std::string, std::string>>& other_fields = {});

struct ActiveScanJob {
    std::string base_url;
    std::size_t max_pages = 50;
    std::set<std::string> probes{"reflected-input"};
    std::chrono::milliseconds politeness_delay{0};
};

struct ProbeRecord {
    std::string url;
    std::string parameter;
    std::string method;
    std::string check_id;
    ExchangeId exchange_id = 0;
    bool errored = false;
    std::string error;
};

struct ScanReport {
    std::vector<ScanFinding> findings;
    std::size_t pages_visited = 0;
    std::size_t probes_fired = 0;
    std::vector<std::string> errors;
    std::vector<std::string> visited_urls;
    std::vector<ProbeRecord> probes;
};

nlohmann::json to_json(const ScanReport& r);

struct ActiveScanHooks {
    std::function<void(const ScanFinding&)> on_finding;
    std::function<void(std::size_t pages, std::size_t probes)> on_progress;
    std::function<bool()> cancelled;
};

// Breadth-first same-origin crawl with passive checks on every fetched
// exchange and reflection probes on discovered parameters. Throws
// Error(origin_not_allowed), Error(base_unreachable), Error(invalid_argument).
ScanReport active_scan(const ActiveScanJob& job, Requester& requester, const client::OriginAllowList& allow,
                       const ActiveScanHooks& hooks = {});

// Throws Error(missing_wiki_entry).
wiki::WikiEntry explain(const ScanFinding& finding, const wiki::WikiCatalog& wiki);

// Links found in an HTML page, resolved against `base`.
struct PageLinks {
    std::vector<std::string> anchors;
    struct Form {
        std::string action;
        std::string method;
        std::vector<std::pair<std::string, std::string>> fields;
    };
    std::vector<Form> forms;
};
PageLinks extract_links(std::string_view html, const http::Target& base);
// Resolves a reference against a base URL; nullopt for non-http(s) schemes.
std::optional<http::Target> resolve_url(std::string_view ref, const http::Target& base);

} // namespace robin::scanner
