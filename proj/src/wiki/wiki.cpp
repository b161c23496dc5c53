#include "robin/wiki.hpp"

#include "robin/error.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace robin::wiki {

namespace detail {
// Generated at build time from wiki/*.md.
const std::vector<std::pair<std::string, std::string>>& bundled_files();
} // namespace detail

namespace {

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        auto line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.emplace_back(line);
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return lines;
}

[[noreturn]] void malformed(const std::string& source, const std::string& why) {
    throw Error(ErrorCode::malformed_entry, source + ": " + why);
}

} // namespace

std::string_view to_string(Severity s) noexcept {
    switch (s) {
    case Severity::info: return "info";
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
    case Severity::critical: return "critical";
    }
    return "info";
}

std::optional<Severity> parse_severity(std::string_view name) {
    for (auto s : {Severity::info, Severity::low, Severity::medium, Severity::high, Severity::critical})
        if (to_string(s) == name) return s;
    return std::nullopt;
}

nlohmann::json to_json(const WikiEntry& e) {
    return {{"key", e.key},
            {"title", e.title},
            {"severity", std::string(to_string(e.severity))},
            {"how_it_works", e.how_it_works},
            {"how_to_exploit", e.how_to_exploit},
            {"how_to_protect", e.how_to_protect},
            {"references", e.references}};
}

WikiEntry parse_entry(std::string_view text, const std::string& source) {
    auto lines = split_lines(text);
    std::size_t i = 0;
    while (i < lines.size() && trim(lines[i]).empty()) ++i;
    if (i == lines.size() || trim(lines[i]) != "---") malformed(source, "missing header block");
    ++i;

    WikiEntry e;
    bool have_severity = false, in_refs = false, closed = false;
    for (; i < lines.size(); ++i) {
        const auto& line = lines[i];
        if (trim(line) == "---") {
            closed = true;
            ++i;
            break;
        }
        if (trim(line).empty()) continue;
        auto t = trim(line);
        if (in_refs && t.starts_with("- ")) {
            e.references.push_back(trim(t.substr(2)));
            continue;
        }
        in_refs = false;
        auto colon = line.find(':');
        if (colon == std::string::npos) malformed(source, "header line without ':'");
        auto name = trim(std::string_view(line).substr(0, colon));
        auto value = trim(std::string_view(line).substr(colon + 1));
        if (name == "key") e.key = value;
        else if (name == "title") e.title = value;
        else if (name == "severity") {
            auto s = parse_severity(value);
            if (!s) malformed(source, "unknown severity '" + value + "'");
            e.severity = *s;
            have_severity = true;
        } else if (name == "references") {
            in_refs = true;
            if (!value.empty()) e.references.push_back(value);
        } else {
            malformed(source, "unknown header field '" + name + "'");
        }
    }
    if (!closed) malformed(source, "unterminated header block");
    if (e.key.empty()) malformed(source, "missing key");
    if (e.title.empty()) malformed(source, "missing title");
    if (!have_severity) malformed(source, "missing severity");

    std::map<std::string, std::string> sections;
    std::string* current = nullptr;
    for (; i < lines.size(); ++i) {
        const auto& line = lines[i];
        if (line.starts_with("## ")) {
            auto heading = trim(std::string_view(line).substr(3));
            if (sections.count(heading)) malformed(source, "repeated section '" + heading + "'");
            current = &sections[heading];
            continue;
        }
        if (!current) {
            if (!trim(line).empty()) malformed(source, "text before the first section");
            continue;
        }
        *current += line;
        *current += '\n';
    }
    auto take = [&](const char* heading, std::string& out) {
        auto it = sections.find(heading);
        if (it == sections.end()) malformed(source, std::string("missing section '") + heading + "'");
        out = trim(it->second);
        if (out.empty()) malformed(source, std::string("empty section '") + heading + "'");
        sections.erase(it);
    };
    take("How it works", e.how_it_works);
    take("How to exploit", e.how_to_exploit);
    take("How to protect", e.how_to_protect);
    if (!sections.empty()) malformed(source, "unexpected section '" + sections.begin()->first + "'");
    return e;
}

WikiCatalog WikiCatalog::from_files(const std::vector<std::pair<std::string, std::string>>& files) {
    WikiCatalog c;
    std::map<std::string, std::string> origin;
    for (const auto& [name, text] : files) {
        auto e = parse_entry(text, name);
        if (origin.count(e.key))
            throw Error(ErrorCode::duplicate_key, "wiki key '" + e.key + "' defined in " + origin[e.key] + " and " + name);
        origin[e.key] = name;
        auto key = e.key;
        c.entries_.emplace(std::move(key), std::move(e));
    }
    return c;
}

WikiCatalog WikiCatalog::load(const std::filesystem::path& dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec))
        throw Error(ErrorCode::io_error, "wiki directory not found: " + dir.string());
    std::vector<std::filesystem::path> paths;
    for (const auto& de : std::filesystem::directory_iterator(dir))
        if (de.is_regular_file() && de.path().extension() == ".md") paths.push_back(de.path());
    std::sort(paths.begin(), paths.end());
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& p : paths) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw Error(ErrorCode::io_error, "cannot read " + p.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        files.emplace_back(p.string(), ss.str());
    }
    return from_files(files);
}

const WikiCatalog& WikiCatalog::bundled() {
    static const WikiCatalog catalog = from_files(detail::bundled_files());
    return catalog;
}

std::optional<WikiEntry> WikiCatalog::get(std::string_view key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

} // namespace robin::wiki
