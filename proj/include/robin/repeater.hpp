#pragma once

#include "robin/coder.hpp"
#include "robin/requester.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace robin::repeater {

// A {{name}} position inside the raw template bytes. offset/length cover the
// whole marker including braces.
struct Marker {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
};

struct RequestTemplate {
    std::string raw;
    std::vector<Marker> markers;  // in byte order
    http::Scheme scheme = http::Scheme::http;

    std::vector<std::string> names() const;
    // Raw bytes with every marker replaced. Content-Length, when present or
    // when a body exists, is rewritten to the substituted body size.
    std::string substitute(const std::map<std::string, std::string>& values) const;
};

// Throws Error(duplicate_marker_name), Error(unbalanced_braces) and
// Error(malformed_request) when the message does not parse with markers set
// to "0". A template without markers is returned as-is; it cannot be run
// (require_markers throws Error(no_markers)).
RequestTemplate parse_template(std::string_view raw, http::Scheme scheme = http::Scheme::http);
void require_markers(const RequestTemplate& t);

struct Transform {
    enum class Kind { codec, digest } kind = Kind::codec;
    coder::Codec codec = coder::Codec::base64;
    coder::Direction direction = coder::Direction::encode;
    coder::DigestScheme digest = coder::DigestScheme::md5;

    std::string apply(std::string_view in) const;
};

struct PayloadSource {
    enum class Kind { numeric_range, wordlist, literal_list } kind = Kind::literal_list;
    std::int64_t start = 0, end = 0, step = 1;
    int zero_pad = 0;
    std::string path;
    std::vector<std::string> literals;
    std::vector<Transform> transforms;

    static PayloadSource range(std::int64_t start, std::int64_t end, std::int64_t step = 1, int zero_pad = 0);
    static PayloadSource list(std::vector<std::string> values);
    static PayloadSource wordlist(std::string path);

    // Throws Error(invalid_argument), Error(wordlist_unreadable).
    std::vector<std::string> values() const;
};

enum class Mode { sequential, product };
enum class Stop { none, first_diff };

struct RepeaterJob {
    RequestTemplate tmpl;
    Mode mode = Mode::sequential;
    // Sequential mode with a single source drives every marker with it;
    // otherwise one source per marker name.
    std::map<std::string, PayloadSource> sources;
    std::size_t max_in_flight = 1;
    double rate_limit = 0;  // requests per second, 0 = unlimited
    Stop stop = Stop::none;
    std::size_t length_tolerance = 0;
    bool capture_bodies = false;
};

// Marker values for one attempt, in template marker order.
using Assignment = std::vector<std::pair<std::string, std::string>>;

struct ExpandedRequest {
    Assignment assignment;
    http::Request request;
};

// Throws Error(no_markers), Error(source_length_mismatch),
// Error(invalid_argument), Error(malformed_request).
std::vector<ExpandedRequest> expand(const RepeaterJob& job);

struct AttemptResult {
    std::size_t index = 0;
    Assignment assignment;
    ExchangeId exchange_id = 0;
    std::optional<int> status;
    std::size_t body_length = 0;
    double duration_ms = 0;
    std::string body_sha256;
    bool differs_from_baseline = false;
    std::optional<std::string> error;
    std::optional<std::string> body;  // capture_bodies only
};

struct RunResult {
    std::vector<std::string> marker_names;
    std::vector<AttemptResult> results;  // payload order; results[0] is the baseline
    std::size_t expanded = 0;
    bool stopped_early = false;
    bool cancelled = false;
    const AttemptResult* baseline() const { return results.empty() ? nullptr : &results.front(); }
};

struct RunHooks {
    std::function<void(const AttemptResult&, std::size_t done, std::size_t total)> on_result;
    std::function<bool()> cancelled;
    // Replaceable for tests.
    std::function<std::chrono::steady_clock::time_point()> now;
    std::function<void(std::chrono::steady_clock::duration)> sleep;
};

// Throws Error(origin_not_allowed) before sending anything when any expanded
// request targets an origin outside the allow-list, plus the expand errors.
RunResult run(const RepeaterJob& job, client::Requester& requester, const client::OriginAllowList& allow,
              const RunHooks& hooks = {});

nlohmann::json to_json(const AttemptResult& r);
nlohmann::json to_json(const RunResult& r);
std::string to_csv(const RunResult& r);

nlohmann::json job_to_json(const RepeaterJob& job);
// Throws Error(schema_violation) plus parse_template errors.
RepeaterJob job_from_json(const nlohmann::json& j);

} // namespace robin::repeater
