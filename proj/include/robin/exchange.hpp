#pragma once

#include "robin/http.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>

namespace robin {

using Clock = std::chrono::system_clock;
using TimePoint = Clock::time_point;
using ExchangeId = std::uint64_t;

enum class ExchangeState { open, paused_request, paused_response, completed, failed, dropped };

std::string_view to_string(ExchangeState state) noexcept;
std::optional<ExchangeState> parse_exchange_state(std::string_view name);
bool is_terminal(ExchangeState state) noexcept;

// RFC 3339 UTC with millisecond precision, e.g. 2026-10-14T09:30:00.123Z.
std::string format_rfc3339(TimePoint t);
std::optional<TimePoint> parse_rfc3339(std::string_view text);

struct TlsInfo {
    std::string sni;
    std::string client_protocol;
    std::string client_cipher;
    std::string upstream_protocol;
    std::string upstream_cipher;
    std::string leaf_serial;
};

struct Timings {
    double send_ms = 0;
    double wait_ms = 0;
    double receive_ms = 0;
};

// One proxied request/response pair. `request`/`response` hold what was
// received; edited_* hold what was forwarded after an operator edit.
struct ExchangeRecord {
    ExchangeId id = 0;
    std::string client_addr;
    http::Scheme scheme = http::Scheme::http;
    http::Request request;
    std::optional<http::Response> response;
    std::optional<http::Request> edited_request;
    std::optional<http::Response> edited_response;
    ExchangeState state = ExchangeState::open;
    TimePoint t_request_start{};
    std::optional<TimePoint> t_response_done;
    std::optional<std::string> failure_reason;
    Timings timings;
    std::optional<TlsInfo> tls;
    bool edited = false;
    bool tunneled = false;
    bool request_truncated = false;
    bool response_truncated = false;
    // Full on-the-wire body sizes (captured bodies may be shorter).
    std::size_t request_body_size = 0;
    std::size_t response_body_size = 0;

    const http::Request& effective_request() const { return edited_request ? *edited_request : request; }
    const http::Response* effective_response() const {
        if (edited_response) return &*edited_response;
        return response ? &*response : nullptr;
    }
    double duration_ms() const;
};

struct ExchangeSummary {
    ExchangeId id = 0;
    std::string method;
    std::string host;
    std::string path;
    std::optional<int> status;
    http::Scheme scheme = http::Scheme::http;
    std::size_t request_size = 0;
    std::size_t response_size = 0;
    double duration_ms = 0;
    ExchangeState state = ExchangeState::open;
};

ExchangeSummary summarize(const ExchangeRecord& record);

// Bodies are emitted as {"body": text, "body_encoding": "utf8"|"base64"}.
bool is_valid_utf8(std::string_view s) noexcept;

nlohmann::json to_json(const http::Request& request);
nlohmann::json to_json(const http::Response& response);
nlohmann::json to_json(const ExchangeRecord& record);
nlohmann::json to_json(const ExchangeSummary& summary);

http::Request request_from_json(const nlohmann::json& j);
http::Response response_from_json(const nlohmann::json& j);
ExchangeRecord record_from_json(const nlohmann::json& j);

} // namespace robin
