#include "robin/events.hpp"

namespace robin {

std::string_view to_string(EventKind kind) noexcept {
    switch (kind) {
    case EventKind::exchange_open: return "exchange_open";
    case EventKind::exchange_paused: return "exchange_paused";
    case EventKind::exchange_completed: return "exchange_completed";
    case EventKind::exchange_failed: return "exchange_failed";
    case EventKind::finding_emitted: return "finding_emitted";
    case EventKind::job_progress: return "job_progress";
    case EventKind::job_done: return "job_done";
    case EventKind::auto_forwarded: return "auto_forwarded";
    }
    return "?";
}

std::optional<EventKind> parse_event_kind(std::string_view name) {
    for (auto k : {EventKind::exchange_open, EventKind::exchange_paused, EventKind::exchange_completed,
                   EventKind::exchange_failed, EventKind::finding_emitted, EventKind::job_progress,
                   EventKind::job_done, EventKind::auto_forwarded})
        if (to_string(k) == name) return k;
    return std::nullopt;
}

std::uint64_t EventBus::publish(EventKind kind, nlohmann::json payload) {
    std::lock_guard lock(mu_);
    Event e{++seq_, kind, std::move(payload)};
    for (auto& [token, handler] : handlers_) handler(e);
    return e.seq;
}

std::uint64_t EventBus::subscribe(Handler handler) {
    std::lock_guard lock(mu_);
    auto token = next_token_++;
    handlers_.emplace(token, std::move(handler));
    return token;
}

void EventBus::unsubscribe(std::uint64_t token) {
    std::lock_guard lock(mu_);
    handlers_.erase(token);
}

std::uint64_t EventBus::last_seq() const {
    std::lock_guard lock(mu_);
    return seq_;
}

} // namespace robin
