#include "robin/error.hpp"
#include "robin/intercept.hpp"

namespace robin::intercept {

namespace {

char fold(char c) noexcept {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

} // namespace

bool valid_glob(std::string_view pattern) noexcept {
    if (pattern.empty()) return false;
    for (unsigned char c : pattern) {
        if (c <= 0x20 || c == 0x7f) return false;
        if (c == '[' || c == ']' || c == '{' || c == '}' || c == '\\') return false;
    }
    return true;
}

bool glob_match(std::string_view pattern, std::string_view text) noexcept {
    std::size_t p = 0, t = 0;
    std::size_t star = std::string_view::npos, resume = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || fold(pattern[p]) == fold(text[t]))) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            resume = t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++resume;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

std::string_view to_string(Direction d) noexcept {
    return d == Direction::request ? "request" : "response";
}

std::optional<Direction> parse_direction(std::string_view name) {
    if (name == "request") return Direction::request;
    if (name == "response") return Direction::response;
    return std::nullopt;
}

std::optional<RuleDirection> parse_rule_direction(std::string_view name) {
    if (name == "request") return RuleDirection::request;
    if (name == "response") return RuleDirection::response;
    if (name == "both") return RuleDirection::both;
    return std::nullopt;
}

bool InterceptRule::matches(Direction d, const http::Request& request) const {
    if (!enabled) return false;
    if (direction == RuleDirection::request && d != Direction::request) return false;
    if (direction == RuleDirection::response && d != Direction::response) return false;
    if (!glob_match(host_glob, request.target.host)) return false;
    if (!request.target.path_and_query.starts_with(path_prefix)) return false;
    if (!methods.empty() && !methods.count(request.method)) return false;
    return true;
}

nlohmann::json to_json(const InterceptRule& rule) {
    const char* dir = rule.direction == RuleDirection::request    ? "request"
                      : rule.direction == RuleDirection::response ? "response"
                                                                  : "both";
    return {{"direction", dir},
            {"host_glob", rule.host_glob},
            {"path_prefix", rule.path_prefix},
            {"methods", rule.methods},
            {"enabled", rule.enabled}};
}

InterceptRule rule_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::schema_violation, "rule must be an object");
    InterceptRule rule;
    try {
        if (j.contains("direction")) {
            auto d = parse_rule_direction(j.at("direction").get<std::string>());
            if (!d) throw Error(ErrorCode::schema_violation, "direction must be request, response or both");
            rule.direction = *d;
        }
        rule.host_glob = j.value("host_glob", std::string("*"));
        rule.path_prefix = j.value("path_prefix", std::string());
        if (j.contains("methods")) {
            for (const auto& m : j.at("methods")) rule.methods.insert(m.get<std::string>());
        }
        rule.enabled = j.value("enabled", true);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::schema_violation, std::string("bad rule: ") + e.what());
    }
    if (!valid_glob(rule.host_glob)) throw Error(ErrorCode::invalid_glob, "invalid host_glob '" + rule.host_glob + "'");
    return rule;
}

} // namespace robin::intercept
