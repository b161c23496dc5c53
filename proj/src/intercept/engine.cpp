#include "robin/error.hpp"
#include "robin/intercept.hpp"

#include <algorithm>

namespace robin::intercept {

using nlohmann::json;

struct InterceptEngine::Slot {
    PendingExchange pending;
    std::mutex mu;
    std::condition_variable cv;
    std::optional<Verdict> verdict;

    void resolve(Verdict v) {
        {
            std::lock_guard lock(mu);
            verdict = std::move(v);
        }
        cv.notify_all();
    }
};

namespace {

json message_json(const std::variant<http::Request, http::Response>& m) {
    if (const auto* req = std::get_if<http::Request>(&m)) return to_json(*req);
    return to_json(std::get<http::Response>(m));
}

std::string raw_message(const std::variant<http::Request, http::Response>& m) {
    if (const auto* req = std::get_if<http::Request>(&m)) {
        auto form = req->form == http::TargetForm::absolute ? http::TargetForm::absolute : http::TargetForm::origin;
        return http::serialize(*req, form);
    }
    return http::serialize(std::get<http::Response>(m));
}

std::string exchange_event_summary_state(const ExchangeRecord& r) {
    return std::string(to_string(r.state));
}

} // namespace

json to_json(const PendingExchange& p) {
    return {{"exchange_id", p.exchange_id},
            {"direction", std::string(to_string(p.direction))},
            {"paused_at", format_rfc3339(p.paused_at)},
            {"deadline", format_rfc3339(p.deadline)},
            {"message", message_json(p.editable_message)},
            {"raw", raw_message(p.editable_message)}};
}

InterceptEngine::InterceptEngine(EventBus& bus) : InterceptEngine(bus, Options{}) {}

InterceptEngine::InterceptEngine(EventBus& bus, Options options)
    : bus_(bus), options_(options), clock_([] { return Clock::now(); }) {
    if (options_.intercept_default) rules_.push_back(InterceptRule{});
}

InterceptEngine::~InterceptEngine() {
    stop_sweeper();
    shutdown();
}

void InterceptEngine::set_rules(std::vector<InterceptRule> rules) {
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (!valid_glob(rules[i].host_glob))
            throw Error(ErrorCode::invalid_glob,
                        "rule " + std::to_string(i) + ": invalid host_glob '" + rules[i].host_glob + "'");
    }
    std::lock_guard lock(rules_mu_);
    rules_ = std::move(rules);
}

std::vector<InterceptRule> InterceptEngine::rules() const {
    std::lock_guard lock(rules_mu_);
    return rules_;
}

void InterceptEngine::set_clock(std::function<TimePoint()> clock) {
    std::lock_guard lock(clock_mu_);
    clock_ = std::move(clock);
}

TimePoint InterceptEngine::now() const {
    std::lock_guard lock(clock_mu_);
    return clock_();
}

void InterceptEngine::set_session_writer(std::shared_ptr<SessionWriter> writer) {
    session_ = std::move(writer);
}

void InterceptEngine::on_finished(std::function<void(const ExchangeRecord&)> callback) {
    finished_cb_ = std::move(callback);
}

ExchangeId InterceptEngine::open(ExchangeRecord seed) {
    seed.state = ExchangeState::open;
    std::lock_guard lock(open_mu_);
    ExchangeId id = history_.append(std::move(seed));
    auto snap = history_.get(id);
    json summary = to_json(summarize(*snap));
    bus_.publish(EventKind::exchange_open,
                 {{"exchange_id", id}, {"client_addr", snap->client_addr}, {"summary", std::move(summary)}});
    return id;
}

InterceptEngine::OnMessage InterceptEngine::on_message(ExchangeId id, Direction direction,
                                                       const http::Request& request, const http::Response* response) {
    bool match = false;
    {
        std::lock_guard lock(rules_mu_);
        match = std::any_of(rules_.begin(), rules_.end(),
                            [&](const InterceptRule& r) { return r.matches(direction, request); });
    }
    if (!match) return {};

    auto slot = std::make_shared<Slot>();
    slot->pending.exchange_id = id;
    slot->pending.direction = direction;
    slot->pending.paused_at = now();
    slot->pending.deadline = slot->pending.paused_at + options_.pause_timeout;
    if (direction == Direction::request || !response)
        slot->pending.editable_message = request;
    else
        slot->pending.editable_message = *response;

    {
        std::lock_guard lock(pending_mu_);
        if (shut_down_) return {};
        auto dup = std::find_if(queue_.begin(), queue_.end(), [&](const auto& s) {
            return s->pending.exchange_id == id && s->pending.direction == direction;
        });
        if (dup != queue_.end()) throw Error(ErrorCode::internal, "exchange already paused in this direction");
        history_.update(id, [&](ExchangeRecord& r) {
            r.state = direction == Direction::request ? ExchangeState::paused_request : ExchangeState::paused_response;
        });
        queue_.push_back(slot);
        // Published while holding the queue lock: event order equals queue order.
        bus_.publish(EventKind::exchange_paused, to_json(slot->pending));
    }
    OnMessage out;
    out.paused = true;
    out.pending = slot->pending;
    out.ticket = slot;
    return out;
}

Verdict InterceptEngine::await(const std::shared_ptr<void>& ticket) {
    auto slot = std::static_pointer_cast<Slot>(ticket);
    std::unique_lock lock(slot->mu);
    slot->cv.wait(lock, [&] { return slot->verdict.has_value(); });
    Verdict v = std::move(*slot->verdict);
    lock.unlock();
    if (!v.shutdown) {
        history_.update(slot->pending.exchange_id, [](ExchangeRecord& r) { r.state = ExchangeState::open; });
    }
    return v;
}

Verdict InterceptEngine::intercept(ExchangeId id, Direction direction, const http::Request& request,
                                   const http::Response* response) {
    auto m = on_message(id, direction, request, response);
    if (!m.paused) return {};
    return await(m.ticket);
}

void InterceptEngine::resume(ExchangeId id, Direction direction, EditAction action) {
    std::shared_ptr<Slot> slot;
    {
        std::lock_guard lock(pending_mu_);
        auto it = std::find_if(queue_.begin(), queue_.end(), [&](const auto& s) {
            return s->pending.exchange_id == id && s->pending.direction == direction;
        });
        if (it == queue_.end())
            throw Error(ErrorCode::not_pending, "exchange " + std::to_string(id) + " has no pending " +
                                                    std::string(to_string(direction)));
        if (action.kind == EditAction::Kind::forward_edited) {
            try {
                if (direction == Direction::request) {
                    const auto* req = std::get_if<http::Request>(&action.message);
                    if (!req) throw Error(ErrorCode::invalid_edited_message, "request edit expected");
                    http::validate(*req);
                    // Re-serializing must yield a parseable message.
                    http::parse_request(http::serialize(*req, http::TargetForm::absolute, true));
                } else {
                    const auto* resp = std::get_if<http::Response>(&action.message);
                    if (!resp) throw Error(ErrorCode::invalid_edited_message, "response edit expected");
                    http::validate(*resp);
                }
            } catch (const Error& e) {
                if (e.code() == ErrorCode::invalid_edited_message) throw;
                throw Error(ErrorCode::invalid_edited_message, e.what());
            }
        }
        slot = *it;
        queue_.erase(it);
    }
    if (action.kind == EditAction::Kind::forward_edited) {
        history_.update(id, [&](ExchangeRecord& r) {
            r.edited = true;
            if (auto* req = std::get_if<http::Request>(&action.message)) r.edited_request = *req;
            if (auto* resp = std::get_if<http::Response>(&action.message)) r.edited_response = *resp;
        });
    }
    Verdict v;
    v.kind = action.kind;
    v.message = std::move(action.message);
    slot->resolve(std::move(v));
}

void InterceptEngine::resume_raw(ExchangeId id, Direction direction, std::string_view raw) {
    std::optional<PendingExchange> found;
    {
        std::lock_guard lock(pending_mu_);
        for (const auto& s : queue_)
            if (s->pending.exchange_id == id && s->pending.direction == direction) found = s->pending;
    }
    if (!found)
        throw Error(ErrorCode::not_pending,
                    "exchange " + std::to_string(id) + " has no pending " + std::string(to_string(direction)));
    try {
        if (direction == Direction::request) {
            const auto& original = std::get<http::Request>(found->editable_message);
            http::Request edited = http::parse_request(raw, original.target.scheme);
            // Origin-form edits inside a tunnel keep the tunnel's destination.
            if (edited.form == http::TargetForm::origin && original.target.scheme == http::Scheme::https) {
                edited.target.scheme = original.target.scheme;
                if (!edited.headers.get("Host") || http::iequals(*edited.headers.get("Host"), original.target.authority())) {
                    edited.target.host = original.target.host;
                    edited.target.port = original.target.port;
                }
            }
            edited.form = original.form;
            resume(id, direction, EditAction::edited(std::move(edited)));
        } else {
            const auto& original_request = history_.get(id)->request;
            http::Response edited = http::parse_response(raw, original_request.method);
            resume(id, direction, EditAction::edited(std::move(edited)));
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::not_pending || e.code() == ErrorCode::invalid_edited_message) throw;
        throw Error(ErrorCode::invalid_edited_message, e.what());
    }
}

std::vector<ExchangeId> InterceptEngine::sweep_timeouts(TimePoint now) {
    std::vector<std::shared_ptr<Slot>> expired;
    {
        std::lock_guard lock(pending_mu_);
        for (auto it = queue_.begin(); it != queue_.end();) {
            if ((*it)->pending.deadline <= now) {
                expired.push_back(*it);
                it = queue_.erase(it);
            } else {
                ++it;
            }
        }
        for (const auto& slot : expired) {
            bus_.publish(EventKind::auto_forwarded, {{"exchange_id", slot->pending.exchange_id},
                                                     {"direction", std::string(to_string(slot->pending.direction))},
                                                     {"deadline", format_rfc3339(slot->pending.deadline)}});
        }
    }
    std::vector<ExchangeId> ids;
    for (const auto& slot : expired) {
        Verdict v;
        v.auto_forwarded = true;
        slot->resolve(std::move(v));
        ids.push_back(slot->pending.exchange_id);
    }
    return ids;
}

std::vector<PendingExchange> InterceptEngine::pending() const {
    std::lock_guard lock(pending_mu_);
    std::vector<PendingExchange> out;
    for (const auto& s : queue_) out.push_back(s->pending);
    return out;
}

void InterceptEngine::start_sweeper(std::chrono::milliseconds interval) {
    std::lock_guard lock(sweeper_mu_);
    if (sweeper_.joinable()) return;
    sweeper_stop_ = false;
    sweeper_ = std::thread([this, interval] {
        std::unique_lock lock(sweeper_mu_);
        while (!sweeper_stop_) {
            sweeper_cv_.wait_for(lock, interval);
            if (sweeper_stop_) break;
            lock.unlock();
            sweep_timeouts(now());
            lock.lock();
        }
    });
}

void InterceptEngine::stop_sweeper() {
    {
        std::lock_guard lock(sweeper_mu_);
        sweeper_stop_ = true;
    }
    sweeper_cv_.notify_all();
    if (sweeper_.joinable()) sweeper_.join();
}

void InterceptEngine::shutdown() {
    std::deque<std::shared_ptr<Slot>> drained;
    {
        std::lock_guard lock(pending_mu_);
        shut_down_ = true;
        drained.swap(queue_);
    }
    for (auto& slot : drained) {
        Verdict v;
        v.shutdown = true;
        v.kind = EditAction::Kind::drop;
        slot->resolve(std::move(v));
    }
}

void InterceptEngine::update(ExchangeId id, const std::function<void(ExchangeRecord&)>& mutate) {
    history_.update(id, mutate);
}

void InterceptEngine::finish(ExchangeId id, ExchangeState state, std::optional<std::string> failure_reason) {
    auto snap = history_.update(id, [&](ExchangeRecord& r) {
        r.state = state;
        if (failure_reason) r.failure_reason = failure_reason;
        if (state == ExchangeState::failed && !r.failure_reason) r.failure_reason = "unknown failure";
        if (state == ExchangeState::dropped) {
            r.response.reset();
            r.edited_response.reset();
        }
        if (!r.t_response_done) r.t_response_done = Clock::now();
    });
    if (!snap) return;
    json payload = {{"exchange_id", id}, {"state", exchange_event_summary_state(*snap)}, {"summary", to_json(summarize(*snap))}};
    if (snap->failure_reason) payload["failure_reason"] = *snap->failure_reason;
    bus_.publish(state == ExchangeState::completed ? EventKind::exchange_completed : EventKind::exchange_failed,
                 std::move(payload));
    if (session_) session_->write(*snap);
    if (finished_cb_) finished_cb_(*snap);
}

} // namespace robin::intercept
