#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace robin::wiki {

enum class Severity { info, low, medium, high, critical };

std::string_view to_string(Severity s) noexcept;
std::optional<Severity> parse_severity(std::string_view name);

struct WikiEntry {
    std::string key;
    std::string title;
    Severity severity = Severity::info;
    std::string how_it_works;
    std::string how_to_exploit;
    std::string how_to_protect;
    std::vector<std::string> references;
};

nlohmann::json to_json(const WikiEntry& entry);

// Entry file format:
//
//   ---
//   key: idor
//   title: Insecure Direct Object Reference
//   severity: high
//   references:
//     - https://example.org/a
//   ---
//   ## How it works
//   ...
//   ## How to exploit
//   ...
//   ## How to protect
//   ...
//
// Throws Error(malformed_entry) naming `source`.
WikiEntry parse_entry(std::string_view text, const std::string& source);

class WikiCatalog {
public:
    // Every *.md file in the directory. Throws Error(duplicate_key),
    // Error(malformed_entry) and Error(io_error).
    static WikiCatalog load(const std::filesystem::path& dir);
    static WikiCatalog from_files(const std::vector<std::pair<std::string, std::string>>& files);
    // The catalog compiled into the library.
    static const WikiCatalog& bundled();

    std::optional<WikiEntry> get(std::string_view key) const;
    const std::map<std::string, WikiEntry, std::less<>>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

private:
    std::map<std::string, WikiEntry, std::less<>> entries_;
};

} // namespace robin::wiki
