#pragma once

#include "robin/ca.hpp"
#include "robin/error.hpp"
#include "robin/events.hpp"
#include "robin/intercept.hpp"
#include "robin/proxy.hpp"
#include "robin/requester.hpp"
#include "robin/scanner.hpp"
#include "robin/wiki.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace robin::control {

inline constexpr int kProtocolVersion = 1;

// {v, type, id, payload}. Replies reuse the command id and carry
// type "reply" (ok) or "error" with payload {code, message, ...}.
struct ControlMessage {
    int v = kProtocolVersion;
    std::string type;
    std::string id;
    nlohmann::json payload = nlohmann::json::object();
};

// Throws Error(schema_violation).
ControlMessage parse_message(const nlohmann::json& j);
nlohmann::json to_json(const ControlMessage& m);

// Error with extra fields merged into the error payload (e.g. the index of
// the offending rule).
class CommandError : public Error {
public:
    CommandError(ErrorCode code, const std::string& message, nlohmann::json detail)
        : Error(code, message), detail_(std::move(detail)) {}
    const nlohmann::json& detail() const noexcept { return detail_; }

private:
    nlohmann::json detail_;
};

nlohmann::json error_payload(const Error& e);
// HTTP status for an error reply on the REST endpoints.
int http_status(ErrorCode code) noexcept;

// Runs a coder.* or ping command without a Service (no CA, proxy or
// history). Throws Error(unknown_type) for anything else.
nlohmann::json call_offline(std::string_view type, const nlohmann::json& payload);

struct ServiceOptions {
    std::filesystem::path ca_dir = "robin-ca";
    std::vector<std::string> allow_origins;
    std::filesystem::path session_out;  // empty = off
    std::optional<std::filesystem::path> wiki_dir;  // default: bundled catalog
    intercept::InterceptEngine::Options engine;
    client::RequesterOptions requester;
    // Passive checks on every finished exchange, findings kept in memory.
    bool passive_on_traffic = true;
};

// Owns the modules and routes control commands to them.
class Service {
public:
    // Throws Error(ca_unavailable), Error(invalid_glob), wiki load errors and
    // Error(missing_wiki_entry) when a check has no wiki entry.
    explicit Service(ServiceOptions options);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Never throws; failures become "error" replies.
    ControlMessage dispatch(const ControlMessage& command);
    // Same routing, throwing Error on failure and returning the reply payload.
    nlohmann::json call(std::string_view type, const nlohmann::json& payload = nlohmann::json::object());
    static const std::vector<std::string>& command_types();

    proxy::ProxyHandle& start_proxy(proxy::ProxyConfig config);
    proxy::ProxyHandle* proxy() noexcept { return proxy_.get(); }
    void stop_proxy();
    // Stops the proxy, releases paused exchanges and cancels running jobs.
    void shutdown();

    EventBus& bus() noexcept { return bus_; }
    intercept::InterceptEngine& engine() noexcept { return *engine_; }
    ca::CertAuthority& authority() noexcept { return *ca_; }
    std::shared_ptr<ca::CertAuthority> authority_ptr() const { return ca_; }
    const wiki::WikiCatalog& wiki() const noexcept { return wiki_; }
    const client::OriginAllowList& allow_list() const noexcept { return allow_; }
    client::Requester& requester() noexcept { return *requester_; }
    std::vector<scanner::ScanFinding> findings() const;

    // Called after every exchange reaches a terminal state.
    void on_exchange_finished(std::function<void(const ExchangeRecord&)> callback);

private:
    using Handler = std::function<nlohmann::json(const nlohmann::json&)>;
    void register_handlers();
    void record_finding(const scanner::ScanFinding& f, std::optional<std::uint64_t> job_id);
    std::uint64_t begin_job(std::shared_ptr<std::atomic<bool>> cancel);
    void end_job(std::uint64_t id);

    ServiceOptions options_;
    EventBus bus_;
    std::shared_ptr<ca::CertAuthority> ca_;
    wiki::WikiCatalog wiki_;
    client::OriginAllowList allow_;
    std::unique_ptr<intercept::InterceptEngine> engine_;
    std::unique_ptr<client::HttpRequester> requester_;
    std::unique_ptr<proxy::ProxyHandle> proxy_;
    std::map<std::string, Handler, std::less<>> handlers_;

    mutable std::mutex mu_;
    std::vector<scanner::ScanFinding> findings_;
    std::set<std::string> finding_ids_;
    std::vector<std::function<void(const ExchangeRecord&)>> finished_listeners_;
    std::map<std::uint64_t, std::shared_ptr<std::atomic<bool>>> jobs_;
    std::uint64_t next_job_ = 1;
};

struct ApiOptions {
    net::Endpoint listen{"127.0.0.1", 8889};
    // Required for a non-loopback listen address; a bearer token is then
    // generated (or taken from `token`) and demanded on every /api request.
    bool expose = false;
    std::string token;
    // Static UI assets served at "/". A placeholder page is served when the
    // directory is missing.
    std::filesystem::path ui_dir;
};

// HTTP + WebSocket control API (REST endpoints under /api, event stream at
// /api/stream). Throws Error(address_in_use), Error(invalid_argument) when
// a non-loopback address is requested without expose.
class ApiServer {
public:
    ApiServer(Service& service, ApiOptions options);
    ~ApiServer();
    ApiServer(const ApiServer&) = delete;
    ApiServer& operator=(const ApiServer&) = delete;

    net::Endpoint address() const;
    const std::string& token() const noexcept;
    std::size_t stream_clients() const;
    void stop();

    struct Impl;

private:
    std::shared_ptr<Impl> impl_;
};

} // namespace robin::control
