#pragma once

#include "robin/exchange.hpp"
#include "robin/intercept.hpp"
#include "robin/net.hpp"

#include <atomic>
#include <string>
#include <vector>

namespace robin::client {

// Origins that active tooling (scanner probes, repeater runs) may contact.
// Patterns are globs over "scheme://host:port" with the port always written
// out, e.g. "http://127.0.0.1:*".
class OriginAllowList {
public:
    OriginAllowList() = default;
    // Throws Error(invalid_glob).
    explicit OriginAllowList(std::vector<std::string> patterns);

    static std::string canonical_origin(const http::Target& target);
    bool allows(const http::Target& target) const;
    // Throws Error(origin_not_allowed).
    void require(const http::Target& target) const;
    const std::vector<std::string>& patterns() const noexcept { return patterns_; }
    bool empty() const noexcept { return patterns_.empty(); }

private:
    std::vector<std::string> patterns_;
};

struct RequesterOptions {
    net::Seconds connect_timeout{10};
    net::Seconds response_timeout{30};
    std::string ca_file;  // verify upstream TLS when set
};

class Requester {
public:
    virtual ~Requester() = default;
    // Sends one request on a fresh connection. Network failures are reported
    // in the record (state=failed, failure_reason), never thrown.
    virtual ExchangeRecord fetch(const http::Request& request) = 0;
};

// Issues requests directly and, when given hooks, records every exchange in
// the shared history (ids, events and session file) the way proxied traffic
// is recorded. Without hooks ids come from a local counter.
class HttpRequester final : public Requester {
public:
    explicit HttpRequester(intercept::InterceptHooks* hooks = nullptr, RequesterOptions options = {});
    ExchangeRecord fetch(const http::Request& request) override;

private:
    intercept::InterceptHooks* hooks_;
    RequesterOptions options_;
    std::atomic<ExchangeId> local_ids_{0};
};

// GET request for an absolute URL with Host set. Throws Error(invalid_argument).
http::Request make_get(std::string_view url);

} // namespace robin::client
