#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string_view>

namespace robin {

enum class EventKind {
    exchange_open,
    exchange_paused,
    exchange_completed,
    exchange_failed,
    finding_emitted,
    job_progress,
    job_done,
    auto_forwarded,
};

std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> parse_event_kind(std::string_view name);

struct Event {
    std::uint64_t seq = 0;
    EventKind kind = EventKind::exchange_open;
    nlohmann::json payload;
};

// Fan-out of server events with a global, strictly increasing sequence
// number. Subscribers are invoked synchronously under the publish order lock,
// so every subscriber observes events in seq order.
class EventBus {
public:
    using Handler = std::function<void(const Event&)>;

    std::uint64_t publish(EventKind kind, nlohmann::json payload);
    std::uint64_t subscribe(Handler handler);
    void unsubscribe(std::uint64_t token);
    std::uint64_t last_seq() const;

private:
    mutable std::recursive_mutex mu_;
    std::uint64_t seq_ = 0;
    std::uint64_t next_token_ = 1;
    std::map<std::uint64_t, Handler> handlers_;
};

} // namespace robin
