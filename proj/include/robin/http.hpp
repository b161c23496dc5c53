#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace robin::net {
class BufferedReader;
}

namespace robin::http {

enum class Scheme { http, https };

std::string_view to_string(Scheme scheme) noexcept;
std::uint16_t default_port(Scheme scheme) noexcept;

struct Header {
    std::string name;
    std::string value;

    bool operator==(const Header&) const = default;
};

// Ordered header list preserving case, order and duplicates.
class Headers {
public:
    Headers() = default;
    Headers(std::initializer_list<Header> init) : items_(init) {}

    std::optional<std::string> get(std::string_view name) const;
    std::vector<std::string> get_all(std::string_view name) const;
    bool contains(std::string_view name) const;
    // True when a comma-separated header `name` lists `token` (case-insensitive).
    bool has_token(std::string_view name, std::string_view token) const;
    void add(std::string name, std::string value);
    // Replaces the first occurrence in place (removing later ones) or appends.
    void set(std::string_view name, std::string value);
    std::size_t remove(std::string_view name);

    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    const std::vector<Header>& items() const noexcept { return items_; }

    bool operator==(const Headers&) const = default;

private:
    std::vector<Header> items_;
};

bool iequals(std::string_view a, std::string_view b) noexcept;
std::string to_lower(std::string_view s);

// How a body was delimited on the wire.
enum class Framing { none, content_length, chunked, until_close };

enum class TargetForm { origin, absolute, authority, asterisk };

struct Target {
    Scheme scheme = Scheme::http;
    std::string host;
    std::uint16_t port = 80;
    std::string path_and_query = "/";

    // scheme://host[:port]
    std::string origin() const;
    std::string url() const;
    std::string authority() const;
    bool operator==(const Target&) const = default;
};

// Parses an absolute http(s) URL. Throws Error(invalid_argument).
Target parse_url(std::string_view url);

struct Request {
    std::string method = "GET";
    Target target;
    std::string version = "HTTP/1.1";
    Headers headers;
    std::string body;
    Framing framing = Framing::none;
    TargetForm form = TargetForm::origin;

    bool operator==(const Request&) const = default;
};

struct Response {
    int status = 200;
    std::string reason = "OK";
    std::string version = "HTTP/1.1";
    Headers headers;
    std::string body;
    Framing framing = Framing::none;

    bool operator==(const Response&) const = default;
};

bool is_token(std::string_view s) noexcept;

// Throws Error(malformed_request) describing the first violation.
void validate(const Request& request);
void validate(const Response& response);

// Head of a request as it appears on the wire for the given form.
std::string serialize_head(const Request& request, TargetForm form);
std::string serialize_head(const Response& response);

// Full message. Chunked bodies are re-framed as a single chunk; messages with
// recompute_length=true get Content-Length rewritten to match the body.
std::string serialize(const Request& request, TargetForm form, bool recompute_length = false);
std::string serialize(const Response& response, bool recompute_length = false);

// Reads one request from a client connection. `tunnel` supplies scheme/host/port
// for origin-form requests arriving inside a CONNECT tunnel; without it the
// Host header is used. Returns nullopt on clean EOF before the request line.
// Throws Error(malformed_request) and propagates timeouts.
struct ReadLimits {
    std::size_t max_line = 64 * 1024;
    std::size_t max_headers = 256;
};
std::optional<Request> read_request(net::BufferedReader& in, const Target* tunnel = nullptr,
                                    const ReadLimits& limits = {});

// Parses only the request line + headers; body is left in the reader.
std::optional<Request> read_request_head(net::BufferedReader& in, const Target* tunnel = nullptr,
                                         const ReadLimits& limits = {});
void read_request_body(net::BufferedReader& in, Request& request);

// Reads one response. `request_method` decides HEAD handling; interim 1xx
// responses other than 101 are skipped.
Response read_response(net::BufferedReader& in, std::string_view request_method);

// Parses a complete request held in memory (e.g. an operator edit or a
// repeater template). `default_scheme` applies to origin-form targets.
Request parse_request(std::string_view raw, Scheme default_scheme = Scheme::http);
Response parse_response(std::string_view raw, std::string_view request_method = "GET");

// Hop-by-hop rewrite for forwarding: drops Proxy-Connection, Keep-Alive,
// Proxy-Authorization, Connection and every header Connection names.
void strip_hop_by_hop(Headers& headers);

bool body_allowed(int status, std::string_view request_method) noexcept;

} // namespace robin::http
