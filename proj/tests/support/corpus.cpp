#include "corpus.hpp"

#include "robin/error.hpp"
#include "robin/http.hpp"
#include "robin/scanner.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

namespace robin::testing {

namespace {

constexpr std::string_view kSeparator = "\n=== response ===\n";

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, "cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// CRLF head plus verbatim body, Content-Length rewritten when a body exists.
std::string normalize(std::string_view msg) {
    auto end = msg.find("\n\n");
    auto head = msg.substr(0, end);
    std::string body = end == std::string_view::npos ? "" : std::string(msg.substr(end + 2));
    std::string out;
    std::size_t p = 0;
    while (p <= head.size()) {
        auto nl = head.find('\n', p);
        auto line = head.substr(p, nl == std::string_view::npos ? std::string_view::npos : nl - p);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        bool is_length = line.size() > 15 && http::iequals(line.substr(0, 15), "Content-Length:");
        if (!is_length && !line.empty()) out += std::string(line) + "\r\n";
        if (nl == std::string_view::npos) break;
        p = nl + 1;
    }
    if (!body.empty()) out += "Content-Length: " + std::to_string(body.size()) + "\r\n";
    return out + "\r\n" + body;
}

} // namespace

ExchangeRecord parse_case(const std::string& text, ExchangeId id) {
    auto sep = text.find(kSeparator);
    if (sep == std::string::npos) throw Error(ErrorCode::malformed_entry, "case lacks the response separator");
    ExchangeRecord r;
    r.id = id;
    r.request = http::parse_request(normalize(std::string_view(text).substr(0, sep)));
    r.scheme = r.request.target.scheme;
    r.response = http::parse_response(normalize(std::string_view(text).substr(sep + kSeparator.size())),
                                      r.request.method);
    r.response_body_size = r.response->body.size();
    r.request_body_size = r.request.body.size();
    r.state = ExchangeState::completed;
    return r;
}

std::vector<CorpusCase> load_corpus(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.path().extension() == ".http") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<CorpusCase> out;
    ExchangeId id = 1;
    for (const auto& f : files) {
        try {
            out.push_back({f.filename().string(), parse_case(slurp(f), id++)});
        } catch (const Error& e) {
            throw Error(e.code(), f.string() + ": " + e.what());
        }
    }
    return out;
}

std::multiset<FindingKey> load_expected(const std::filesystem::path& file) {
    auto j = nlohmann::json::parse(slurp(file));
    std::multiset<FindingKey> out;
    for (const auto& f : j.at("findings")) {
        auto cases = f.at("cases").get<std::vector<std::string>>();
        std::sort(cases.begin(), cases.end());
        out.insert({f.at("check_id").get<std::string>(), cases});
    }
    return out;
}

std::multiset<FindingKey> scan_corpus(const std::vector<CorpusCase>& cases) {
    std::map<ExchangeId, std::string> names;
    std::vector<ExchangeRecord> records;
    for (const auto& c : cases) {
        names[c.record.id] = c.name;
        records.push_back(c.record);
    }
    auto findings = scanner::detect_enumerable_id(records);
    for (const auto& r : records) {
        auto more = scanner::passive_scan(r);
        findings.insert(findings.end(), more.begin(), more.end());
    }
    std::multiset<FindingKey> out;
    for (const auto& f : findings) {
        std::vector<std::string> hit;
        for (auto id : f.exchange_ids) hit.push_back(names.at(id));
        std::sort(hit.begin(), hit.end());
        hit.erase(std::unique(hit.begin(), hit.end()), hit.end());
        out.insert({f.check_id, hit});
    }
    return out;
}

std::filesystem::path corpus_dir() {
    return std::filesystem::path(ROBIN_SOURCE_DIR) / "corpus";
}

} // namespace robin::testing
