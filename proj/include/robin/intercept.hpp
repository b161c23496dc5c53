#pragma once

#include "robin/events.hpp"
#include "robin/exchange.hpp"

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <thread>
#include <variant>
#include <vector>

namespace robin::intercept {

using robin::to_json;

// "*" matches any run (including empty), "?" one character. Matching is
// ASCII case-insensitive. Character classes and braces are rejected.
bool valid_glob(std::string_view pattern) noexcept;
bool glob_match(std::string_view pattern, std::string_view text) noexcept;

enum class Direction { request, response };
enum class RuleDirection { request, response, both };

std::string_view to_string(Direction d) noexcept;
std::optional<Direction> parse_direction(std::string_view name);
std::optional<RuleDirection> parse_rule_direction(std::string_view name);

struct InterceptRule {
    RuleDirection direction = RuleDirection::request;
    std::string host_glob = "*";
    std::string path_prefix;
    std::set<std::string> methods;  // empty = all
    bool enabled = true;

    bool matches(Direction d, const http::Request& request) const;
};

nlohmann::json to_json(const InterceptRule& rule);
// Throws Error(schema_violation) on shape errors and Error(invalid_glob).
InterceptRule rule_from_json(const nlohmann::json& j);

struct EditAction {
    enum class Kind { forward_unchanged, forward_edited, drop } kind = Kind::forward_unchanged;
    std::variant<std::monostate, http::Request, http::Response> message;

    static EditAction forward() { return {}; }
    static EditAction drop() { return {Kind::drop, {}}; }
    static EditAction edited(http::Request r) { return {Kind::forward_edited, std::move(r)}; }
    static EditAction edited(http::Response r) { return {Kind::forward_edited, std::move(r)}; }
};

struct PendingExchange {
    ExchangeId exchange_id = 0;
    Direction direction = Direction::request;
    TimePoint paused_at{};
    TimePoint deadline{};
    std::variant<http::Request, http::Response> editable_message;
};

nlohmann::json to_json(const PendingExchange& pending);

struct Verdict {
    EditAction::Kind kind = EditAction::Kind::forward_unchanged;
    bool auto_forwarded = false;
    bool shutdown = false;
    std::variant<std::monostate, http::Request, http::Response> message;
};

struct HistoryFilter {
    std::optional<std::string> host_contains;
    std::optional<std::string> method;
    std::optional<int> status_class;  // 1..5
    std::optional<http::Scheme> scheme;
    std::optional<TimePoint> from;
    std::optional<TimePoint> to;
    std::optional<std::string> body_contains;
    std::optional<ExchangeId> id_min;
    std::optional<ExchangeId> id_max;
    std::optional<ExchangeState> state;

    bool matches(const ExchangeRecord& r) const;
};

// Throws Error(schema_violation). Accepts the query keys documented in
// docs/protocol.md (host, method, status, scheme, from, to, text, id_min,
// id_max, state).
HistoryFilter filter_from_json(const nlohmann::json& j);

// Append-only exchange history. Records may be updated only until they reach
// a terminal state.
class HistoryStore {
public:
    ExchangeId append(ExchangeRecord record);
    // Applies `mutate` when the record exists and is not terminal. Returns the
    // updated snapshot.
    std::optional<ExchangeRecord> update(ExchangeId id, const std::function<void(ExchangeRecord&)>& mutate);
    std::optional<ExchangeRecord> get(ExchangeId id) const;
    std::vector<ExchangeRecord> query(const HistoryFilter& filter = {}) const;
    std::vector<ExchangeSummary> summaries(const HistoryFilter& filter = {}) const;
    std::size_t size() const;

private:
    mutable std::mutex mu_;
    std::vector<ExchangeRecord> records_;
    ExchangeId next_id_ = 1;
};

// HAR 1.2 document for the given records.
nlohmann::json export_har(const std::vector<ExchangeRecord>& records, std::string_view creator_version = "1.0");

// Appends terminal records as JSON Lines.
class SessionWriter {
public:
    explicit SessionWriter(const std::filesystem::path& path);
    void write(const ExchangeRecord& record);

private:
    std::mutex mu_;
    std::ofstream out_;
};

inline constexpr auto kDefaultPauseTimeout = std::chrono::seconds(300);

// Proxy-facing hook surface. relay_exchange calls these at its hook points.
class InterceptHooks {
public:
    virtual ~InterceptHooks() = default;
    // Assigns the exchange id and records it in state=open.
    virtual ExchangeId open(ExchangeRecord seed) = 0;
    // Blocks while the exchange is paused; returns the operator's verdict.
    virtual Verdict intercept(ExchangeId id, Direction direction, const http::Request& request,
                              const http::Response* response) = 0;
    virtual void update(ExchangeId id, const std::function<void(ExchangeRecord&)>& mutate) = 0;
    // Moves the record to a terminal state and emits the terminal event.
    virtual void finish(ExchangeId id, ExchangeState state, std::optional<std::string> failure_reason = {}) = 0;
};

class InterceptEngine final : public InterceptHooks {
public:
    struct Options {
        std::chrono::milliseconds pause_timeout = kDefaultPauseTimeout;
        bool intercept_default = false;  // pause everything when no rules are set
        std::size_t max_captured_body = 10 * 1024 * 1024;
    };

    InterceptEngine(EventBus& bus, Options options);
    explicit InterceptEngine(EventBus& bus);
    ~InterceptEngine() override;

    // Atomically replaces the rule set. Throws Error(invalid_glob) with the
    // offending index in the message; the previous rules stay active.
    void set_rules(std::vector<InterceptRule> rules);
    std::vector<InterceptRule> rules() const;

    struct OnMessage {
        bool paused = false;
        std::shared_ptr<void> ticket;
        std::optional<PendingExchange> pending;
    };
    // Non-blocking rule evaluation. On a match the exchange moves to
    // paused_request/paused_response and an exchange_paused event is emitted.
    OnMessage on_message(ExchangeId id, Direction direction, const http::Request& request,
                         const http::Response* response);
    Verdict await(const std::shared_ptr<void>& ticket);

    // Throws Error(not_pending) or Error(invalid_edited_message); in the
    // latter case the entry stays pending.
    void resume(ExchangeId id, Direction direction, EditAction action);
    // Parses an operator's raw-text edit for the pending entry and resumes.
    void resume_raw(ExchangeId id, Direction direction, std::string_view raw_message);

    std::vector<ExchangeId> sweep_timeouts(TimePoint now);
    std::vector<PendingExchange> pending() const;

    // Background sweeper using the wall clock.
    void start_sweeper(std::chrono::milliseconds interval = std::chrono::milliseconds(100));
    void stop_sweeper();
    // Releases all paused pipelines (verdict.shutdown = true).
    void shutdown();

    void set_clock(std::function<TimePoint()> clock);
    void set_session_writer(std::shared_ptr<SessionWriter> writer);
    // Invoked after an exchange reaches a terminal state.
    void on_finished(std::function<void(const ExchangeRecord&)> callback);

    HistoryStore& history() noexcept { return history_; }
    const HistoryStore& history() const noexcept { return history_; }
    const Options& options() const noexcept { return options_; }
    EventBus& bus() noexcept { return bus_; }

    // InterceptHooks
    ExchangeId open(ExchangeRecord seed) override;
    Verdict intercept(ExchangeId id, Direction direction, const http::Request& request,
                      const http::Response* response) override;
    void update(ExchangeId id, const std::function<void(ExchangeRecord&)>& mutate) override;
    void finish(ExchangeId id, ExchangeState state, std::optional<std::string> failure_reason = {}) override;

private:
    struct Slot;

    EventBus& bus_;
    Options options_;
    HistoryStore history_;
    std::mutex open_mu_;  // keeps exchange_open events in id order

    mutable std::mutex rules_mu_;
    std::vector<InterceptRule> rules_;

    mutable std::mutex pending_mu_;
    std::deque<std::shared_ptr<Slot>> queue_;
    bool shut_down_ = false;

    TimePoint now() const;
    mutable std::mutex clock_mu_;
    std::function<TimePoint()> clock_;
    std::shared_ptr<SessionWriter> session_;
    std::function<void(const ExchangeRecord&)> finished_cb_;

    std::mutex sweeper_mu_;
    std::condition_variable sweeper_cv_;
    bool sweeper_stop_ = false;
    std::thread sweeper_;
};

} // namespace robin::intercept
