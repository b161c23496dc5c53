#include "robin/robin.h"

#include "robin/control.hpp"

#include <cstring>

using json = nlohmann::json;
using robin::Error;
using robin::ErrorCode;

struct robin_service {
    std::unique_ptr<robin::control::Service> service;
};

struct robin_api {
    std::unique_ptr<robin::control::ApiServer> server;
    std::string address;
};

namespace {

thread_local std::string last_error;

char* dup(const std::string& s) {
    auto* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

robin_status fail(ErrorCode code, const std::string& message) {
    last_error = message;
    return static_cast<robin_status>(code);
}

json parse_arg(const char* text) {
    if (!text || !*text) return json::object();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_violation, std::string("argument is not JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::schema_violation, "argument must be a JSON object");
    return j;
}

// Runs `fn`, mapping exceptions to status codes.
template <typename Fn>
robin_status guarded(Fn&& fn) {
    last_error.clear();
    try {
        fn();
        return ROBIN_OK;
    } catch (const Error& e) {
        return fail(e.code(), e.what());
    } catch (const json::exception& e) {
        return fail(ErrorCode::schema_violation, e.what());
    } catch (const std::exception& e) {
        return fail(ErrorCode::internal, e.what());
    }
}

robin::control::ServiceOptions service_options(const json& j) {
    robin::control::ServiceOptions o;
    if (j.contains("ca_dir")) o.ca_dir = j["ca_dir"].get<std::string>();
    if (j.contains("allow_origins")) o.allow_origins = j["allow_origins"].get<std::vector<std::string>>();
    if (j.contains("session_out")) o.session_out = j["session_out"].get<std::string>();
    if (j.contains("wiki_dir")) o.wiki_dir = j["wiki_dir"].get<std::string>();
    o.engine.intercept_default = j.value("intercept_default", false);
    if (j.contains("pause_timeout_ms")) {
        auto ms = j["pause_timeout_ms"].get<std::int64_t>();
        if (ms <= 0) throw Error(ErrorCode::invalid_argument, "pause_timeout_ms must be positive");
        o.engine.pause_timeout = std::chrono::milliseconds(ms);
    }
    if (j.contains("max_captured_body")) o.engine.max_captured_body = j["max_captured_body"].get<std::size_t>();
    o.passive_on_traffic = j.value("passive_on_traffic", true);
    if (j.contains("upstream_ca_file")) o.requester.ca_file = j["upstream_ca_file"].get<std::string>();
    return o;
}

} // namespace

extern "C" {

const char* robin_version(void) {
    return "1.0.0";
}

const char* robin_status_name(robin_status status) {
    // to_string returns views into string literals.
    return robin::to_string(static_cast<ErrorCode>(status)).data();
}

const char* robin_last_error(void) {
    return last_error.c_str();
}

void robin_free(char* s) {
    std::free(s);
}

robin_status robin_service_create(const char* options_json, robin_service** out) {
    if (!out) return fail(ErrorCode::invalid_argument, "out is NULL");
    *out = nullptr;
    return guarded([&] {
        auto opts = service_options(parse_arg(options_json));
        auto svc = std::make_unique<robin_service>();
        svc->service = std::make_unique<robin::control::Service>(std::move(opts));
        *out = svc.release();
    });
}

void robin_service_destroy(robin_service* service) {
    delete service;
}

void robin_service_shutdown(robin_service* service) {
    if (service) service->service->shutdown();
}

robin_status robin_call(robin_service* service, const char* type, const char* payload_json, char** result_json) {
    if (!service || !type || !result_json) return fail(ErrorCode::invalid_argument, "NULL argument");
    *result_json = nullptr;
    json result;
    auto status = guarded([&] { result = service->service->call(type, parse_arg(payload_json)); });
    if (status != ROBIN_OK) {
        result = {{"code", robin_status_name(status)}, {"message", last_error}};
    }
    *result_json = dup(result.dump());
    return status;
}

robin_status robin_dispatch(robin_service* service, const char* message_json, char** reply_json) {
    if (!service || !message_json || !reply_json) return fail(ErrorCode::invalid_argument, "NULL argument");
    robin::control::ControlMessage reply;
    try {
        reply = service->service->dispatch(robin::control::parse_message(json::parse(message_json)));
    } catch (const std::exception& e) {
        reply.type = "error";
        reply.payload = {{"code", "SchemaViolation"}, {"message", e.what()}};
    }
    *reply_json = dup(robin::control::to_json(reply).dump());
    return ROBIN_OK;
}

robin_status robin_call_offline(const char* type, const char* payload_json, char** result_json) {
    if (!type || !result_json) return fail(ErrorCode::invalid_argument, "NULL argument");
    json result;
    auto status = guarded([&] { result = robin::control::call_offline(type, parse_arg(payload_json)); });
    if (status != ROBIN_OK) result = {{"code", robin_status_name(status)}, {"message", last_error}};
    *result_json = dup(result.dump());
    return status;
}

robin_status robin_proxy_start(robin_service* service, const char* config_json, char** bound_out) {
    if (!service) return fail(ErrorCode::invalid_argument, "service is NULL");
    return guarded([&] {
        auto j = parse_arg(config_json);
        robin::proxy::ProxyConfig cfg;
        if (j.contains("listen")) cfg.listen = robin::net::parse_endpoint(j["listen"].get<std::string>());
        if (j.contains("upstream_connect_timeout"))
            cfg.upstream_connect_timeout = robin::net::Seconds(j["upstream_connect_timeout"].get<double>());
        if (j.contains("upstream_response_timeout"))
            cfg.upstream_response_timeout = robin::net::Seconds(j["upstream_response_timeout"].get<double>());
        if (j.contains("idle_timeout")) cfg.idle_timeout = robin::net::Seconds(j["idle_timeout"].get<double>());
        if (j.contains("upstream_ca_file")) cfg.upstream_ca_file = j["upstream_ca_file"].get<std::string>();
        cfg.max_captured_body = service->service->engine().options().max_captured_body;
        cfg.intercept_default = service->service->engine().options().intercept_default;
        cfg.ca_dir = service->service->authority().directory();
        robin::proxy::validate(cfg);
        auto& handle = service->service->start_proxy(cfg);
        if (bound_out) *bound_out = dup(handle.address().to_string());
    });
}

void robin_proxy_stop(robin_service* service) {
    if (service) service->service->stop_proxy();
}

robin_status robin_api_start(robin_service* service, const char* options_json, robin_api** out) {
    if (!service || !out) return fail(ErrorCode::invalid_argument, "NULL argument");
    *out = nullptr;
    return guarded([&] {
        auto j = parse_arg(options_json);
        robin::control::ApiOptions opts;
        if (j.contains("listen")) opts.listen = robin::net::parse_endpoint(j["listen"].get<std::string>());
        opts.expose = j.value("expose", false);
        opts.token = j.value("token", std::string());
        if (j.contains("ui_dir")) opts.ui_dir = j["ui_dir"].get<std::string>();
        auto api = std::make_unique<robin_api>();
        api->server = std::make_unique<robin::control::ApiServer>(*service->service, opts);
        api->address = api->server->address().to_string();
        *out = api.release();
    });
}

const char* robin_api_address(const robin_api* api) {
    return api ? api->address.c_str() : "";
}

const char* robin_api_token(const robin_api* api) {
    return api ? api->server->token().c_str() : "";
}

void robin_api_destroy(robin_api* api) {
    if (!api) return;
    api->server->stop();
    delete api;
}

robin_status robin_subscribe(robin_service* service, robin_event_fn fn, void* user, uint64_t* token) {
    if (!service || !fn) return fail(ErrorCode::invalid_argument, "NULL argument");
    return guarded([&] {
        auto t = service->service->bus().subscribe([fn, user](const robin::Event& e) {
            json j = {{"seq", e.seq}, {"type", std::string(robin::to_string(e.kind))}, {"payload", e.payload}};
            fn(j.dump().c_str(), user);
        });
        if (token) *token = t;
    });
}

void robin_unsubscribe(robin_service* service, uint64_t token) {
    if (service) service->service->bus().unsubscribe(token);
}

robin_status robin_on_exchange_finished(robin_service* service, robin_exchange_fn fn, void* user) {
    if (!service || !fn) return fail(ErrorCode::invalid_argument, "NULL argument");
    return guarded([&] {
        service->service->on_exchange_finished([fn, user](const robin::ExchangeRecord& r) {
            fn(robin::to_json(robin::summarize(r)).dump().c_str(), user);
        });
    });
}

} // extern "C"
