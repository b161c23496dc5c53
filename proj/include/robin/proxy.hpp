#pragma once

#include "robin/ca.hpp"
#include "robin/intercept.hpp"
#include "robin/net.hpp"

#include <filesystem>
#include <memory>

namespace robin::proxy {

struct ProxyConfig {
    net::Endpoint listen{"127.0.0.1", 8888};
    std::filesystem::path ca_dir = "robin-ca";
    net::Seconds upstream_connect_timeout{10};
    // Longest wait for an upstream response before the client gets a 504.
    net::Seconds upstream_response_timeout{30};
    // Client read timeout between requests; also bounds the drain on stop().
    net::Seconds idle_timeout{30};
    std::size_t max_captured_body = 10 * 1024 * 1024;
    bool intercept_default = false;
    // Upstream certificates are not verified unless a CA bundle is given.
    std::string upstream_ca_file;
};

// Throws Error(invalid_argument) for non-positive timeouts.
void validate(const ProxyConfig& config);

enum class Route { plain_http, tls_tunnel, reject };

struct RouteResult {
    Route route = Route::reject;
    std::string host;
    std::uint16_t port = 0;
    // The parsed head (body unread) for plain_http; the CONNECT request for
    // tls_tunnel.
    std::optional<http::Request> request;
    std::string reason;
};

// Reads the first request head from a new client connection. CONNECT is
// answered with "200 Connection Established"; a malformed head gets a 400.
// A timeout or EOF before any byte yields reject with no response written.
RouteResult route_connection(net::BufferedReader& in, net::Stream& client);

class ProxyHandle {
public:
    ~ProxyHandle();
    ProxyHandle(const ProxyHandle&) = delete;
    ProxyHandle& operator=(const ProxyHandle&) = delete;

    net::Endpoint address() const;
    // Stops accepting, lets in-flight exchanges drain for up to idle_timeout,
    // then closes remaining connections. Paused exchanges are not released
    // here; shut the intercept engine down first.
    void stop();
    std::size_t active_connections() const;

    struct Impl;

private:
    friend std::unique_ptr<ProxyHandle> start_proxy(const ProxyConfig&, std::shared_ptr<ca::CertAuthority>,
                                                    intercept::InterceptHooks&);
    explicit ProxyHandle(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<Impl> impl_;
};

// Throws Error(address_in_use) and Error(ca_unavailable) when `ca` is null.
std::unique_ptr<ProxyHandle> start_proxy(const ProxyConfig& config, std::shared_ptr<ca::CertAuthority> ca,
                                         intercept::InterceptHooks& hooks);
// Loads or creates the CA in config.ca_dir first; any CA failure is reported
// as Error(ca_unavailable).
std::unique_ptr<ProxyHandle> start_proxy(const ProxyConfig& config, intercept::InterceptHooks& hooks);

} // namespace robin::proxy
