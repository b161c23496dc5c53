// robin: intercepting proxy, scanner and coder front end over librobin.

#include "robin/robin.h"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <pthread.h>

using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct RuntimeError {
    std::string message;
};
struct UsageError {
    std::string message;
};

std::string take(char* s) {
    std::string out = s ? s : "";
    robin_free(s);
    return out;
}

bool usage_status(robin_status s) {
    return s == ROBIN_SCHEMA_VIOLATION || s == ROBIN_UNKNOWN_TYPE || s == ROBIN_INVALID_ARGUMENT;
}

json check(robin_status status, const std::string& out) {
    json j = out.empty() ? json::object() : json::parse(out);
    if (status == ROBIN_OK) return j;
    std::string msg = robin_status_name(status) + std::string(": ") + j.value("message", std::string(robin_last_error()));
    if (usage_status(status)) throw UsageError{msg};
    throw RuntimeError{msg};
}

json call(robin_service* svc, const std::string& type, const json& payload) {
    char* out = nullptr;
    auto status = robin_call(svc, type.c_str(), payload.dump().c_str(), &out);
    return check(status, take(out));
}

json call_offline(const std::string& type, const json& payload) {
    char* out = nullptr;
    auto status = robin_call_offline(type.c_str(), payload.dump().c_str(), &out);
    return check(status, take(out));
}

std::string from_hex(const std::string& hex) {
    std::string out;
    for (std::size_t i = 0; i + 1 < hex.size(); i += 2) out += static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16));
    return out;
}

std::string read_stdin() {
    return {std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
}

// "scheme://host:port" with the default port written out.
std::string origin_of(const std::string& url) {
    auto sep = url.find("://");
    if (sep == std::string::npos) throw UsageError{"not an absolute URL: " + url};
    auto scheme = url.substr(0, sep);
    for (auto& c : scheme) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    auto rest = url.substr(sep + 3);
    auto authority = rest.substr(0, rest.find_first_of("/?#"));
    auto at = authority.rfind('@');
    if (at != std::string::npos) authority = authority.substr(at + 1);
    bool has_port = authority.rfind(':') != std::string::npos && authority.back() != ']';
    if (!has_port) authority += scheme == "https" ? ":443" : ":80";
    for (auto& c : authority) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return scheme + "://" + authority;
}

struct Service {
    robin_service* svc = nullptr;
    explicit Service(const json& options) {
        check(robin_service_create(options.dump().c_str(), &svc), "");
    }
    ~Service() { robin_service_destroy(svc); }
};

std::mutex out_mu;

void print_summary(const char* summary_json, void*) {
    auto s = json::parse(summary_json);
    auto status = s["status"].is_null() ? std::string("-") : std::to_string(s["status"].get<int>());
    std::lock_guard lock(out_mu);
    std::printf("%llu %s %s %s %s %zu %.0fms\n", static_cast<unsigned long long>(s["id"].get<std::uint64_t>()),
                s["method"].get<std::string>().c_str(), s["host"].get<std::string>().c_str(),
                s["path"].get<std::string>().c_str(), status.c_str(), s["response_size"].get<std::size_t>(),
                s["duration_ms"].get<double>());
    std::fflush(stdout);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robin: intercepting proxy, scanner, repeater and coder"};
    app.set_version_flag("--version", robin_version());

    std::string listen = "127.0.0.1:8888", api = "127.0.0.1:8889", ca_dir = "./robin-ca";
    std::vector<std::string> allow;
    std::string session_out, har_out, ui_dir, api_token, wiki_dir;
    bool headless = false, api_expose = false, intercept = false;
    double pause_timeout = 300;
    app.add_option("--listen", listen, "Proxy listen address")->capture_default_str();
    app.add_option("--api", api, "Control API listen address")->capture_default_str();
    app.add_option("--ca-dir", ca_dir, "Certificate authority directory")->capture_default_str();
    app.add_option("--allow-origin", allow, "Origin glob scanner and repeater may target (repeatable)");
    app.add_option("--session-out", session_out, "Append finished exchanges as JSON Lines");
    app.add_option("--har-out", har_out, "Write a HAR of the session on exit");
    app.add_flag("--headless", headless, "Print one line per finished exchange");
    app.add_flag("--api-expose", api_expose, "Allow a non-loopback --api address (bearer token enforced)");
    app.add_option("--api-token", api_token, "Bearer token for an exposed API (generated when omitted)");
    app.add_option("--ui-dir", ui_dir, "Static UI assets served at /");
    app.add_option("--wiki-dir", wiki_dir, "Wiki entries directory (default: bundled)");
    app.add_flag("--intercept", intercept, "Pause every request until resumed");
    app.add_option("--pause-timeout", pause_timeout, "Seconds before a paused exchange auto-forwards")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    auto* scan = app.add_subcommand("scan", "Active scan of a site; prints the JSON report");
    std::string scan_url;
    std::size_t max_pages = 50;
    scan->add_option("url", scan_url, "Base URL")->required();
    scan->add_option("--max-pages", max_pages, "Crawl limit")->capture_default_str();

    auto* coder = app.add_subcommand("coder", "Encode, decode, digest or xor");
    std::string op, algo;
    std::vector<std::string> operands;
    bool hex_in = false, hex_out = false;
    coder->add_option("op", op, "encode | decode | digest | xor")
        ->required()
        ->check(CLI::IsMember({"encode", "decode", "digest", "xor"}));
    coder->add_option("algorithm", algo, "Codec (base64, base64url, url, hex, html) or scheme (md5, sha1, sha256)");
    coder->add_option("input", operands, "Input ('-' reads standard input); xor takes two hex operands");
    coder->add_flag("--hex-in", hex_in, "Input is hex");
    coder->add_flag("--hex-out", hex_out, "Print output as hex");

    auto* crack = app.add_subcommand("crack", "Dictionary attack on a hex digest");
    std::string digest, wordlist, scheme = "md5";
    std::vector<std::string> rules;
    crack->add_option("digest", digest, "Hex digest")->required();
    crack->add_option("--wordlist", wordlist, "One candidate per line")->required();
    crack->add_option("--scheme", scheme, "md5 | sha1 | sha256")->capture_default_str();
    crack->add_option("--rules", rules, "Mangling rules: as_is, lowercase, uppercase");

    app.require_subcommand(0, 1);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    json options = {{"ca_dir", ca_dir}, {"intercept_default", intercept},
                    {"pause_timeout_ms", static_cast<std::int64_t>(pause_timeout * 1000)}};
    if (!wiki_dir.empty()) options["wiki_dir"] = wiki_dir;
    if (!session_out.empty()) options["session_out"] = session_out;

    try {
        if (*coder) {
            auto input_at = [&](std::size_t i) {
                if (i >= operands.size()) throw UsageError{"coder " + op + ": missing input"};
                return operands[i] == "-" ? read_stdin() : operands[i];
            };
            json result;
            if (op == "xor") {
                if (!algo.empty()) operands.insert(operands.begin(), algo);
                result = call_offline("coder.xor", {{"a_hex", input_at(0)}, {"b_hex", input_at(1)}});
            } else {
                if (algo.empty()) throw UsageError{"coder " + op + ": missing algorithm"};
                json payload;
                payload[hex_in ? "input_hex" : "input"] = input_at(0);
                if (op == "digest") {
                    payload["scheme"] = algo;
                    std::cout << call_offline("coder.digest", payload)["hex"].get<std::string>() << "\n";
                    return kExitOk;
                }
                payload["codec"] = algo;
                payload["direction"] = op;
                result = call_offline("coder.transform", payload);
            }
            auto hex = result["output_hex"].get<std::string>();
            if (hex_out || op == "xor") std::cout << hex << "\n";
            else std::cout << from_hex(hex) << (op == "encode" ? "\n" : "");
            return kExitOk;
        }

        if (*crack) {
            json payload = {{"digest", digest}, {"scheme", scheme}, {"wordlist", wordlist}};
            if (!rules.empty()) payload["rules"] = rules;
            auto result = call_offline("coder.crack", payload);
            if (result["found"].get<bool>()) {
                std::cout << result["word"].get<std::string>() << "\n";
                return kExitOk;
            }
            std::cerr << "robin: no candidate matched after " << result["candidates_tried"] << " tries\n";
            return kExitRuntime;
        }

        if (*scan) {
            allow.push_back(origin_of(scan_url));
            options["allow_origins"] = allow;
            Service svc(options);
            auto report = call(svc.svc, "scan.active", {{"base_url", scan_url}, {"max_pages", max_pages}});
            report.erase("job_id");
            std::cout << report.dump(2) << "\n";
            return kExitOk;
        }

        // Serve: proxy plus control API until SIGINT/SIGTERM.
        sigset_t signals;
        sigemptyset(&signals);
        sigaddset(&signals, SIGINT);
        sigaddset(&signals, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &signals, nullptr);

        options["allow_origins"] = allow;
        Service svc(options);
        if (headless) check(robin_on_exchange_finished(svc.svc, print_summary, nullptr), "");

        char* bound = nullptr;
        check(robin_proxy_start(svc.svc, json{{"listen", listen}}.dump().c_str(), &bound), "");
        auto proxy_addr = take(bound);
        robin_api* api_handle = nullptr;
        json api_opts = {{"listen", api}, {"expose", api_expose}, {"token", api_token}};
        if (!ui_dir.empty()) api_opts["ui_dir"] = ui_dir;
        check(robin_api_start(svc.svc, api_opts.dump().c_str(), &api_handle), "");
        {
            std::lock_guard lock(out_mu);
            auto port = proxy_addr.substr(proxy_addr.rfind(':') + 1);
            std::printf("proxy listening on %s (port %s)\n", proxy_addr.c_str(), port.c_str());
            std::printf("api listening on %s\n", robin_api_address(api_handle));
            if (*robin_api_token(api_handle)) std::printf("api token %s\n", robin_api_token(api_handle));
            std::fflush(stdout);
        }

        int sig = 0;
        sigwait(&signals, &sig);

        // Jobs are cancelled and pauses released before the API drains.
        robin_proxy_stop(svc.svc);
        robin_service_shutdown(svc.svc);
        int code = kExitOk;
        if (!har_out.empty()) {
            auto har = call(svc.svc, "har.export", json::object());
            std::ofstream out(har_out, std::ios::binary | std::ios::trunc);
            out << har.dump(2) << "\n";
            if (!out) {
                std::cerr << "robin: cannot write " << har_out << "\n";
                code = kExitRuntime;
            }
        }
        robin_api_destroy(api_handle);
        return code;
    } catch (const UsageError& e) {
        std::cerr << "robin: " << e.message << "\n";
        return kExitUsage;
    } catch (const RuntimeError& e) {
        std::cerr << "robin: " << e.message << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "robin: " << e.what() << "\n";
        return kExitRuntime;
    }
}
