#pragma once

#include "robin/net.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <memory>
#include <optional>
#include <string>

namespace robin::testing {

// Synchronous client for the /api/stream WebSocket. A background reader
// queues every incoming frame.
class StreamClient {
public:
    explicit StreamClient(const net::Endpoint& api, const std::string& token = "");
    ~StreamClient();

    void send(const nlohmann::json& message);
    // Next frame, or nullopt after `timeout`.
    std::optional<nlohmann::json> next(std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
    // Skips frames until one of the given type arrives.
    std::optional<nlohmann::json> next_of(const std::string& type,
                                          std::chrono::milliseconds timeout = std::chrono::milliseconds(5000));
    // Sends a command and waits for the reply with the same id, queueing the
    // frames seen meanwhile.
    nlohmann::json call(const std::string& type, const nlohmann::json& payload, const std::string& id);
    void close();

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

} // namespace robin::testing
