// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include "robin/control.hpp"
#include "robin/scanner.hpp"

#include "corpus.hpp"
#include "harness.hpp"
#include "stream_client.hpp"
#include "target_server.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <latch>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <sys/wait.h>

using namespace robin;
using namespace robin::testing;
using json = nlohmann::json;
using SteadyClock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

// Collects failed checks; the first few are reported.
class Checks {
public:
    bool expect(bool ok, const std::string& what) {
        if (!ok) failures_.push_back(what);
        return ok;
    }
    Outcome outcome(const std::string& summary) const {
        if (failures_.empty()) return {true, summary};
        std::string d = summary + "; failed: ";
        for (std::size_t i = 0; i < failures_.size() && i < 5; ++i) d += (i ? " | " : "") + failures_[i];
        if (failures_.size() > 5) d += " | (+" + std::to_string(failures_.size() - 5) + " more)";
        return {false, d};
    }

private:
    std::vector<std::string> failures_;
};

double seconds_since(SteadyClock::time_point t0) {
    return std::chrono::duration<double>(SteadyClock::now() - t0).count();
}

std::string fmt(double v, int digits = 2) {
    std::ostringstream out;
    out.precision(digits);
    out << std::fixed << v;
    return out.str();
}

std::string random_bytes(std::mt19937& rng, std::size_t n) {
    std::uniform_int_distribution<int> byte(0, 255);
    std::string s(n, '\0');
    for (auto& c : s) c = static_cast<char>(byte(rng));
    return s;
}

std::string to_hex(std::string_view s) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned char c : s) {
        out += digits[c >> 4];
        out += digits[c & 15];
    }
    return out;
}

std::string host_port(std::uint16_t port) {
    return "127.0.0.1:" + std::to_string(port);
}

// Service, proxy and control API on ephemeral loopback ports. Everything the
// criteria observe goes through the API (REST or the event stream).
struct Rig {
    TempDir dir{"robin-acceptance"};
    std::unique_ptr<control::Service> service;
    std::unique_ptr<control::ApiServer> api;
    std::unique_ptr<httplib::Client> http;
    net::Endpoint proxy;

    explicit Rig(control::ServiceOptions opts = {}, proxy::ProxyConfig cfg = {}) {
        opts.ca_dir = dir.path() / "ca";
        if (opts.allow_origins.empty()) opts.allow_origins = {"http://127.0.0.1:*"};
        service = std::make_unique<control::Service>(opts);
        control::ApiOptions api_opts;
        api_opts.listen = {"127.0.0.1", 0};
        api = std::make_unique<control::ApiServer>(*service, api_opts);
        http = std::make_unique<httplib::Client>("127.0.0.1", api->address().port);
        http->set_read_timeout(120);
        cfg.listen = {"127.0.0.1", 0};
        cfg.ca_dir = opts.ca_dir;
        proxy = service->start_proxy(cfg).address();
    }
    ~Rig() {
        service->shutdown();
        api->stop();
    }

    std::pair<int, std::string> get(const std::string& path) {
        auto r = http->Get(path);
        if (!r) throw std::runtime_error("GET " + path + " failed: " + httplib::to_string(r.error()));
        return {r->status, r->body};
    }
    json get_json(const std::string& path) {
        auto [status, body] = get(path);
        if (status != 200) throw std::runtime_error("GET " + path + " -> " + std::to_string(status) + " " + body);
        return json::parse(body);
    }
    json post(const std::string& path, const json& body) {
        auto r = http->Post(path, body.dump(), "application/json");
        if (!r) throw std::runtime_error("POST " + path + " failed: " + httplib::to_string(r.error()));
        if (r->status != 200)
            throw std::runtime_error("POST " + path + " -> " + std::to_string(r->status) + " " + r->body);
        return json::parse(r->body);
    }
};

std::pair<int, std::string> run_command(const std::string& cmd) {
    std::string out;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return {-1, ""};
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
    int status = ::pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

// 1. HTTPS interception fidelity.
Outcome mitm_fidelity() {
    constexpr int kTunnels = 200;
    constexpr int kPerTunnel = 5;
    constexpr int kWorkers = 4;
    constexpr double kBudget = 60.0;

    EchoServer::Options eo;
    eo.tls = true;
    EchoServer echo(eo);
    TempDir tmp("robin-acceptance-c1");
    proxy::ProxyConfig cfg;
    cfg.upstream_ca_file = write_file(tmp.path() / "upstream-root.pem", echo.root_pem()).string();
    Rig rig({}, cfg);
    auto [pem_status, pem] = rig.get("/api/ca.pem");
    auto root = write_file(tmp.path() / "exported-root.pem", pem).string();
    auto hp = host_port(echo.port());

    std::atomic<int> next{0}, handshake_failures{0}, upstream_failures{0}, mismatches{0}, identical{0};
    std::mutex mu;
    std::string first_error;
    auto note = [&](const std::string& e) {
        std::lock_guard lock(mu);
        if (first_error.empty()) first_error = e;
    };
    auto t0 = SteadyClock::now();
    std::vector<std::thread> workers;
    for (int w = 0; w < kWorkers; ++w) {
        workers.emplace_back([&] {
            for (int t; (t = next++) < kTunnels;) {
                std::unique_ptr<ProxyClient> client;
                try {
                    client = std::make_unique<ProxyClient>(rig.proxy);
                    client->connect_tunnel("127.0.0.1", echo.port(), root);
                } catch (const std::exception& e) {
                    ++handshake_failures;
                    note(std::string("handshake: ") + e.what());
                    continue;
                }
                std::mt19937 rng(static_cast<unsigned>(t));
                std::uniform_int_distribution<std::size_t> len(0, 8192);
                for (int k = 0; k < kPerTunnel; ++k) {
                    auto body = random_bytes(rng, len(rng));
                    std::string req = "POST /echo/" + std::to_string(t) + "/" + std::to_string(k) +
                                      " HTTP/1.1\r\nHost: " + hp +
                                      "\r\nContent-Type: application/octet-stream\r\nContent-Length: " +
                                      std::to_string(body.size()) + "\r\n\r\n" + body;
                    try {
                        auto resp = client->roundtrip(req, "POST");
                        if (resp.status == 502) {
                            ++upstream_failures;
                            note("upstream: " + resp.body);
                        } else if (resp.status != 200 || resp.body != req) {
                            ++mismatches;
                            note("exchange " + std::to_string(t) + "/" + std::to_string(k) + " status " +
                                 std::to_string(resp.status));
                        } else {
                            ++identical;
                        }
                    } catch (const std::exception& e) {
                        ++mismatches;
                        note(e.what());
                        break;
                    }
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    double elapsed = seconds_since(t0);

    constexpr int kTotal = kTunnels * kPerTunnel;
    wait_until([&] { return rig.service->engine().history().size() >= static_cast<std::size_t>(kTotal); });
    auto history = rig.get_json("/api/history?state=completed")["exchanges"];
    std::size_t https = 0;
    for (const auto& s : history)
        if (s["scheme"] == "https") ++https;

    Checks c;
    c.expect(pem_status == 200, "root export status " + std::to_string(pem_status));
    c.expect(handshake_failures == 0, std::to_string(handshake_failures.load()) + " client handshake failures");
    c.expect(upstream_failures == 0, std::to_string(upstream_failures.load()) + " upstream TLS failures");
    c.expect(mismatches == 0, std::to_string(mismatches.load()) + " non-identical bodies");
    c.expect(identical == kTotal, std::to_string(identical.load()) + " identical of " + std::to_string(kTotal));
    c.expect(https == static_cast<std::size_t>(kTotal), std::to_string(https) + " completed https records");
    c.expect(elapsed < kBudget, "wall time " + fmt(elapsed) + " s");
    if (!first_error.empty()) c.expect(false, first_error);
    return c.outcome(std::to_string(identical.load()) + "/" + std::to_string(kTotal) +
                     " byte-identical over " + std::to_string(kTunnels) + " tunnels, " +
                     std::to_string(handshake_failures.load()) + " handshake failures, " + fmt(elapsed) + " s");
}

// 2. Edit, drop and timeout through the control API.
Outcome intercept_round_trip() {
    Checks c;
    std::string detail;
    json hold_rule = json::array({{{"host_glob", "127.0.0.1"}, {"path_prefix", "/held"}}});
    {
        Rig rig;
        StreamClient ws(rig.api->address());
        c.expect(ws.next_of("hello").has_value(), "no hello frame");
        auto set = ws.call("rules.set", {{"rules", hold_rule}}, "rules");
        c.expect(set["type"] == "reply", "rules.set: " + set.dump());

        // Edit.
        EchoServer echo({});
        auto hp = host_port(echo.port());
        auto original = "GET /held/original HTTP/1.1\r\nHost: " + hp + "\r\n\r\n";
        auto edited = "POST /held/edited?x=%41&y= HTTP/1.1\r\nHost: " + hp +
                      "\r\nX-Edit: 1  2\t3\r\nContent-Type: text/plain\r\nContent-Length: 11\r\n\r\nhello\r\nedit";
        auto fut = std::async(std::launch::async, [&] {
            ProxyClient client(rig.proxy);
            return client.roundtrip(original);
        });
        auto paused = ws.next_of("exchange_paused");
        if (c.expect(paused.has_value(), "edit: no exchange_paused event")) {
            auto id = (*paused)["payload"]["exchange_id"];
            auto reply = rig.post("/api/resume", {{"exchange_id", id}, {"action", "edit"}, {"raw", edited}});
            auto resp = fut.get();
            auto received = echo.received();
            c.expect(received.size() == 1 && received[0] == edited, "edit: upstream bytes differ from the edit");
            c.expect(resp.body == edited, "edit: echoed body differs");
            auto rec = rig.get_json("/api/history/" + id.dump());
            c.expect(rec.value("edited", false), "edit: record not flagged edited");
        }

        // Drop.
        EchoServer sink({});
        auto shp = host_port(sink.port());
        auto dropped = std::async(std::launch::async, [&] {
            ProxyClient client(rig.proxy);
            client.send("GET /held/drop HTTP/1.1\r\nHost: " + shp + "\r\n\r\n");
            return client.closed_without_response();
        });
        paused = ws.next_of("exchange_paused");
        if (c.expect(paused.has_value(), "drop: no exchange_paused event")) {
            rig.post("/api/resume", {{"exchange_id", (*paused)["payload"]["exchange_id"]}, {"action", "drop"}});
            c.expect(dropped.get(), "drop: client got a response");
            std::this_thread::sleep_for(std::chrono::milliseconds(300));
            c.expect(sink.connections() == 0, "drop: " + std::to_string(sink.connections()) + " upstream connections");
        }
    }

    // Default 300 s timeout against a controllable clock.
    {
        Rig rig;
        auto base = Clock::now();
        std::atomic<std::int64_t> offset_ms{0};
        rig.service->engine().set_clock([&] { return base + std::chrono::milliseconds(offset_ms.load()); });
        rig.post("/api/rules", {{"rules", hold_rule}});
        EchoServer echo({});
        auto hp = host_port(echo.port());
        auto req = "GET /held/abandoned HTTP/1.1\r\nHost: " + hp + "\r\n\r\n";
        auto fut = std::async(std::launch::async, [&] {
            ProxyClient client(rig.proxy, net::Seconds(30));
            return client.roundtrip(req);
        });
        c.expect(wait_until([&] { return rig.get_json("/api/pending")["pending"].size() == 1; }),
                 "timeout: request never paused");
        offset_ms = 299'000;
        std::this_thread::sleep_for(std::chrono::milliseconds(400));
        bool held = rig.get_json("/api/pending")["pending"].size() == 1 && echo.connections() == 0;
        c.expect(held, "timeout: released before 299 s");
        offset_ms = 301'000;
        bool released = fut.wait_for(std::chrono::seconds(5)) == std::future_status::ready;
        if (c.expect(released, "timeout: still paused at 301 s")) {
            auto resp = fut.get();
            c.expect(resp.body == req, "timeout: forwarded request differs from the original");
        }
        detail += "300 s default: held at 299 s, forwarded by 301 s";
    }

    // Shortened configured timeout on the real clock.
    {
        control::ServiceOptions opts;
        opts.engine.pause_timeout = std::chrono::seconds(2);
        Rig rig(opts);
        rig.post("/api/rules", {{"rules", hold_rule}});
        StreamClient ws(rig.api->address());
        ws.next_of("hello");
        EchoServer echo({});
        auto hp = host_port(echo.port());
        auto req = "GET /held/short HTTP/1.1\r\nHost: " + hp + "\r\n\r\n";
        auto fut = std::async(std::launch::async, [&] {
            ProxyClient client(rig.proxy, net::Seconds(30));
            return client.roundtrip(req);
        });
        auto paused = ws.next_of("exchange_paused");
        auto t0 = SteadyClock::now();
        if (c.expect(paused.has_value(), "short timeout: no exchange_paused event")) {
            auto auto_fwd = ws.next_of("auto_forwarded", std::chrono::milliseconds(10000));
            double waited = seconds_since(t0);
            c.expect(auto_fwd.has_value(), "short timeout: no auto_forwarded event");
            c.expect(std::abs(waited - 2.0) <= 1.0, "short timeout: released after " + fmt(waited) + " s");
            auto resp = fut.get();
            c.expect(resp.body == req, "short timeout: forwarded request differs");
            detail += "; 2 s configured: released after " + fmt(waited) + " s";
        }
    }
    return c.outcome("edit verbatim upstream, drop with 0 upstream connections, " + detail);
}

// 3. Account enumeration against the vulnerable target.
Outcome case_study() {
    constexpr double kBudget = 30.0;
    target::TargetServer server;
    Rig rig;
    auto t0 = SteadyClock::now();
    const auto& accounts = server.accounts();
    json job = {{"template_raw", "GET /api/users/{{id}} HTTP/1.1\r\nHost: " + host_port(server.port()) + "\r\n\r\n"},
                {"sources",
                 {{"id", {{"kind", "numeric_range"}, {"start", accounts.front().id}, {"end", accounts.back().id}}}}},
                {"max_in_flight", 4},
                {"capture_bodies", true}};
    auto result = rig.post("/api/repeater", {{"job", job}});
    std::map<std::string, std::string> expected;
    for (const auto& a : accounts) expected[std::to_string(a.id)] = target::account_json(a);

    Checks c;
    std::set<std::string> bodies;
    std::size_t matching = 0;
    for (const auto& r : result["results"]) {
        if (!r.contains("body")) continue;
        auto body = r["body"].get<std::string>();
        bodies.insert(body);
        auto id = r["payload"]["id"].get<std::string>();
        if (expected.count(id) && expected[id] == body && r["status"] == 200) ++matching;
    }
    auto scan = rig.post("/api/scan/enumerable", json::object());
    double elapsed = seconds_since(t0);
    const auto& findings = scan["findings"];
    c.expect(accounts.size() == 50, std::to_string(accounts.size()) + " seeded accounts");
    c.expect(bodies.size() == 50, std::to_string(bodies.size()) + " distinct bodies");
    c.expect(matching == 50, std::to_string(matching) + " bodies equal the seeded accounts");
    c.expect(findings.size() == 1, std::to_string(findings.size()) + " findings");
    std::size_t referenced = 0;
    if (findings.size() == 1) {
        c.expect(findings[0]["check_id"] == "enumerable-identifier", "check_id " + findings[0]["check_id"].dump());
        referenced = findings[0]["exchange_ids"].size();
        c.expect(referenced >= 2, "finding references " + std::to_string(referenced) + " exchanges");
    }
    c.expect(elapsed < kBudget, "runtime " + fmt(elapsed) + " s");
    return c.outcome(std::to_string(bodies.size()) + " distinct account bodies, " + std::to_string(findings.size()) +
                     " enumerable-identifier finding over " + std::to_string(referenced) + " exchanges, " +
                     fmt(elapsed) + " s");
}

// 4. Passive scanner on the labelled corpus.
Outcome corpus_precision_recall() {
    auto seeded = load_corpus(corpus_dir() / "seeded");
    auto clean = load_corpus(corpus_dir() / "clean");
    auto expected = load_expected(corpus_dir() / "seeded" / "expected.json");
    auto got = scan_corpus(seeded);
    auto stray = scan_corpus(clean);

    std::set<std::string> vulnerable;
    for (const auto& [check, cases] : expected) vulnerable.insert(cases.begin(), cases.end());
    std::size_t true_pos = 0;
    for (const auto& k : got) true_pos += expected.count(k) ? 1 : 0;

    Checks c;
    c.expect(vulnerable.size() >= 10, std::to_string(vulnerable.size()) + " vulnerable responses");
    c.expect(clean.size() >= 20, std::to_string(clean.size()) + " clean responses");
    c.expect(got == expected, "seeded multiset differs (" + std::to_string(got.size()) + " found, " +
                                  std::to_string(expected.size()) + " expected)");
    for (const auto& [check, cases] : stray) c.expect(false, "clean " + cases.front() + ": " + check);
    return c.outcome(std::to_string(true_pos) + "/" + std::to_string(expected.size()) + " expected findings on " +
                     std::to_string(seeded.size()) + " seeded cases, " + std::to_string(stray.size()) +
                     " findings on " + std::to_string(clean.size()) + " clean cases");
}

// 5. Digest and cipher vectors, codec and cipher round trips.
Outcome coder_vectors() {
    Checks c;
    Rig rig;
    auto digest = [&](const std::string& scheme, const std::string& input) {
        return rig.post("/api/coder", {{"op", "digest"}, {"scheme", scheme}, {"input_hex", to_hex(input)}})["hex"]
            .get<std::string>();
    };
    // RFC 1321 appendix A.5.
    const std::pair<std::string, std::string> md5[] = {
        {"", "d41d8cd98f00b204e9800998ecf8427e"},
        {"a", "0cc175b9c0f1b6a831c399e269772661"},
        {"abc", "900150983cd24fb0d6963f7d28e17f72"},
        {"message digest", "f96b697d7cb7938d525a2f31aaf161d0"},
        {"abcdefghijklmnopqrstuvwxyz", "c3fcd3d76192e4007dfb496cca67e13b"},
        {"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789", "d174ab98d277d9f5a5611c2c9f419d9f"},
        {"12345678901234567890123456789012345678901234567890123456789012345678901234567890",
         "57edf4a22be3c955ac49da2e2107b67a"},
    };
    // FIPS 180 examples.
    const std::pair<std::string, std::string> sha256[] = {
        {"", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"},
        {"abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"},
        {"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
         "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"},
        {"abcdefghbcdefghicdefghijdefghijkefghijklfghijklmghijklmnhijklmnoijklmnopjklmnopqklmnopqrlmnopqrsmnopqrstnopqrstu",
         "cf5b16a778af8380036ce59e7b0492370b249b11e8f07a51afac45037afee9d1"},
        {std::string(1000000, 'a'), "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0"},
    };
    int vectors = 0;
    for (const auto& [in, hex] : md5) {
        c.expect(digest("md5", in) == hex, "md5 of \"" + in.substr(0, 16) + "\"");
        ++vectors;
    }
    for (const auto& [in, hex] : sha256) {
        c.expect(digest("sha256", in) == hex, "sha256 of " + std::to_string(in.size()) + " bytes");
        ++vectors;
    }

    // FIPS-197 C.1: with a zero IV the first CBC block is the bare block cipher.
    auto aes = rig.post("/api/coder", {{"op", "cipher"},
                                       {"algorithm", "aes128"},
                                       {"mode", "cbc"},
                                       {"direction", "encode"},
                                       {"key_hex", "000102030405060708090a0b0c0d0e0f"},
                                       {"iv_hex", std::string(32, '0')},
                                       {"input_hex", "00112233445566778899aabbccddeeff"}});
    auto block = aes["output_hex"].get<std::string>().substr(0, 32);
    c.expect(block == "69c4e0d86a7b0430d8cdb78070b4c55a", "AES-128 C.1 block " + block);

    // Round trips through the command dispatcher.
    constexpr int kTrials = 10000;
    std::mt19937 rng(20261014);
    std::uniform_int_distribution<std::size_t> len(0, 96);
    std::size_t trips = 0;
    for (std::string codec : {"base64", "base64url", "url", "hex", "html"}) {
        int bad = 0;
        for (int i = 0; i < kTrials; ++i) {
            auto in = to_hex(random_bytes(rng, len(rng)));
            auto enc = control::call_offline(
                "coder.transform", {{"codec", codec}, {"direction", "encode"}, {"input_hex", in}})["output_hex"];
            auto dec = control::call_offline(
                "coder.transform", {{"codec", codec}, {"direction", "decode"}, {"input_hex", enc}})["output_hex"];
            bad += dec != in;
            ++trips;
        }
        c.expect(bad == 0, codec + ": " + std::to_string(bad) + " round-trip failures");
    }
    for (std::string alg : {"aes128", "aes256"}) {
        for (std::string mode : {"cbc", "gcm"}) {
            int bad = 0;
            for (int i = 0; i < kTrials; ++i) {
                json spec = {{"algorithm", alg},
                             {"mode", mode},
                             {"key_hex", to_hex(random_bytes(rng, alg == "aes128" ? 16 : 32))},
                             {"iv_hex", to_hex(random_bytes(rng, mode == "cbc" ? 16 : 12))}};
                auto in = to_hex(random_bytes(rng, len(rng)));
                auto enc = spec;
                enc["direction"] = "encode";
                enc["input_hex"] = in;
                auto dec = spec;
                dec["direction"] = "decode";
                dec["input_hex"] = control::call_offline("coder.cipher", enc)["output_hex"];
                bad += control::call_offline("coder.cipher", dec)["output_hex"] != in;
                ++trips;
            }
            c.expect(bad == 0, alg + "-" + mode + ": " + std::to_string(bad) + " round-trip failures");
        }
    }
    return c.outcome(std::to_string(vectors) + " digest vectors, FIPS-197 C.1, " + std::to_string(trips) +
                     " random round trips");
}

std::string md5_hex(const std::string& s) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int n = 0;
    EVP_Digest(s.data(), s.size(), md, &n, EVP_md5(), nullptr);
    return to_hex({reinterpret_cast<char*>(md), n});
}

// 6. Dictionary attack.
Outcome crack() {
    constexpr std::size_t kLines = 10000;
    constexpr double kBudget = 5.0;
    Rig rig;
    auto seed = std::random_device{}();
    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> letter('a', 'z');
    std::uniform_int_distribution<std::size_t> len(6, 12);
    std::set<std::string> seen;
    std::vector<std::string> words;
    while (words.size() < kLines) {
        std::string w(len(rng), 'a');
        for (auto& ch : w) ch = static_cast<char>(letter(rng));
        if (seen.insert(w).second) words.push_back(w);
    }
    std::ostringstream list;
    for (const auto& w : words) list << w << "\n";
    auto path = write_file(rig.dir.path() / "words.txt", list.str()).string();
    auto pos = std::uniform_int_distribution<std::size_t>(0, kLines - 1)(rng);

    auto t0 = SteadyClock::now();
    auto hit = rig.post("/api/coder", {{"op", "crack"}, {"digest", md5_hex(words[pos])}, {"wordlist", path}});
    double elapsed = seconds_since(t0);
    // Digits never occur in the list.
    auto miss = rig.post("/api/coder", {{"op", "crack"}, {"digest", md5_hex("absent-0")}, {"wordlist", path}});

    Checks c;
    c.expect(hit["found"] == true, "word at line " + std::to_string(pos + 1) + " not found");
    c.expect(hit.value("word", "") == words[pos], "recovered " + hit.value("word", std::string("nothing")));
    c.expect(hit.value("line", std::size_t{0}) == pos + 1, "reported line " + hit.value("line", json()).dump());
    c.expect(elapsed < kBudget, "crack took " + fmt(elapsed, 3) + " s");
    c.expect(miss["found"] == false, "absent word reported found");
    c.expect(miss["candidates_tried"] == kLines, "absent search tried " + miss["candidates_tried"].dump());
    return c.outcome("line " + std::to_string(pos + 1) + " of " + std::to_string(kLines) + " (seed " +
                     std::to_string(seed) + ") recovered in " + fmt(elapsed, 3) + " s, absent word exhausted after " +
                     miss["candidates_tried"].dump() + " candidates");
}

// 7. HAR export of a 100-exchange session.
Outcome har_export() {
    constexpr int kPlain = 70;
    constexpr int kTls = 30;
    Rig rig;
    EchoServer plain({});
    EchoServer::Options eo;
    eo.tls = true;
    EchoServer secure(eo);
    auto root = write_file(rig.dir.path() / "root.pem", rig.get("/api/ca.pem").second).string();
    std::vector<std::string> sent;
    std::mt19937 rng(7);

    ProxyClient client(rig.proxy);
    auto php = host_port(plain.port());
    for (int i = 0; i < kPlain; ++i) {
        std::string path = "/plain/" + std::to_string(i) + "?q=" + std::to_string(i * 7) + "&tag=a%20b";
        std::string req;
        if (i % 3 == 0) {
            auto body = i % 2 ? random_bytes(rng, 64) : json{{"n", i}, {"s", "x"}}.dump();
            req = "POST http://" + php + path + " HTTP/1.1\r\nHost: " + php +
                  "\r\nContent-Type: application/json\r\nCookie: sid=" + std::to_string(i) +
                  "\r\nContent-Length: " + std::to_string(body.size()) + "\r\n\r\n" + body;
            client.roundtrip(req, "POST");
        } else {
            req = "GET http://" + php + path + " HTTP/1.1\r\nHost: " + php + "\r\n\r\n";
            client.roundtrip(req);
        }
        sent.push_back("http://" + php + path);
    }
    ProxyClient tls(rig.proxy);
    tls.connect_tunnel("127.0.0.1", secure.port(), root);
    auto shp = host_port(secure.port());
    for (int i = 0; i < kTls; ++i) {
        std::string path = "/secure/" + std::to_string(i);
        tls.roundtrip("GET " + path + " HTTP/1.1\r\nHost: " + shp + "\r\n\r\n");
        sent.push_back("https://" + shp + path);
    }

    Checks c;
    c.expect(wait_until([&] { return rig.service->engine().history().size() == sent.size(); }),
             "history holds " + std::to_string(rig.service->engine().history().size()) + " exchanges");
    auto [status, body] = rig.get("/api/har");
    c.expect(status == 200, "GET /api/har -> " + std::to_string(status));
    auto har_path = rig.dir.path() / "session.har";
    write_file(har_path, body);

    auto [rc, out] = run_command(std::string(ROBIN_PYTHON) + " " + ROBIN_ACCEPTANCE_DIR + "/validate_har.py " +
                                 ROBIN_ACCEPTANCE_DIR + "/har-1.2.schema.json " + har_path.string() + " 2>&1");
    c.expect(rc == 0, "schema validation: " + out.substr(0, 400));
    std::vector<std::string> validated;
    std::istringstream lines(out);
    for (std::string line; std::getline(lines, line);) validated.push_back(line);

    auto har = json::parse(body);
    std::vector<std::string> urls;
    for (const auto& e : har["log"]["entries"]) urls.push_back(e["request"]["url"]);
    c.expect(urls.size() == sent.size(), std::to_string(urls.size()) + " entries");
    c.expect(urls == sent, "entry URLs differ from the requested URLs");
    if (rc == 0) c.expect(validated == sent, "URLs read back by the validator differ");
    return c.outcome(std::to_string(urls.size()) + " entries valid against HAR 1.2, URLs round-trip");
}

// 8. Id and event ordering under concurrency.
Outcome ordering() {
    constexpr int kClients = 100;
    Rig rig;
    EchoServer echo({});
    auto hp = host_port(echo.port());
    StreamClient ws(rig.api->address());
    Checks c;
    c.expect(ws.next_of("hello").has_value(), "no hello frame");

    std::latch go(kClients);
    std::atomic<int> ok{0};
    std::vector<std::thread> clients;
    for (int i = 0; i < kClients; ++i) {
        clients.emplace_back([&, i] {
            bool arrived = false;
            try {
                ProxyClient client(rig.proxy, net::Seconds(30));
                go.arrive_and_wait();
                arrived = true;
                auto resp = client.roundtrip("GET http://" + hp + "/c/" + std::to_string(i) + " HTTP/1.1\r\nHost: " +
                                             hp + "\r\n\r\n");
                if (resp.status == 200) ++ok;
            } catch (const std::exception&) {
                if (!arrived) go.count_down();
            }
        });
    }
    for (auto& t : clients) t.join();

    std::vector<ExchangeId> opens;
    std::map<ExchangeId, std::vector<std::string>> per_exchange;
    std::uint64_t last_seq = 0;
    bool seq_increasing = true;
    std::size_t terminals = 0;
    auto deadline = SteadyClock::now() + std::chrono::seconds(30);
    while (terminals < static_cast<std::size_t>(kClients) && SteadyClock::now() < deadline) {
        auto f = ws.next(std::chrono::milliseconds(2000));
        if (!f) continue;
        if (!f->contains("seq")) continue;
        auto seq = (*f)["seq"].get<std::uint64_t>();
        seq_increasing = seq_increasing && seq > last_seq;
        last_seq = seq;
        const auto& p = (*f)["payload"];
        if (!p.is_object() || !p.contains("exchange_id")) continue;
        auto id = p["exchange_id"].get<ExchangeId>();
        std::string type = (*f)["type"];
        per_exchange[id].push_back(type);
        if (type == "exchange_open") opens.push_back(id);
        if (type == "exchange_completed" || type == "exchange_failed" || type == "exchange_dropped") ++terminals;
    }

    bool increasing = std::adjacent_find(opens.begin(), opens.end(),
                                         [](ExchangeId a, ExchangeId b) { return a >= b; }) == opens.end();
    std::size_t well_ordered = 0;
    for (const auto& [id, types] : per_exchange) {
        bool good = types.size() >= 2 && types.front() == "exchange_open" &&
                    (types.back() == "exchange_completed" || types.back() == "exchange_failed");
        for (std::size_t i = 1; i + 1 < types.size(); ++i) good = good && types[i] != "exchange_open";
        well_ordered += good;
    }
    std::set<ExchangeId> distinct(opens.begin(), opens.end());
    auto history = rig.get_json("/api/history")["exchanges"];
    std::vector<ExchangeId> ids;
    for (const auto& s : history) ids.push_back(s["id"]);

    c.expect(ok == kClients, std::to_string(ok.load()) + " clients got 200");
    c.expect(opens.size() == kClients, std::to_string(opens.size()) + " exchange_open events");
    c.expect(distinct.size() == opens.size(), "duplicate ids in exchange_open events");
    c.expect(increasing, "exchange_open ids not strictly increasing in stream order");
    c.expect(seq_increasing, "stream seq not strictly increasing");
    c.expect(well_ordered == kClients, std::to_string(well_ordered) + " exchanges ordered open -> terminal");
    c.expect(ids.size() == kClients && std::set<ExchangeId>(ids.begin(), ids.end()).size() == ids.size(),
             "history ids not distinct");
    c.expect(std::is_sorted(ids.begin(), ids.end()), "history ids not increasing");
    return c.outcome(std::to_string(distinct.size()) + " distinct increasing ids, " + std::to_string(well_ordered) +
                     " open -> terminal sequences");
}

struct Criterion {
    int number;
    const char* name;
    std::function<Outcome()> run;
};

} // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "MITM fidelity", mitm_fidelity},
        {2, "intercept round-trip", intercept_round_trip},
        {3, "case-study enumeration", case_study},
        {4, "scanner precision/recall", corpus_precision_recall},
        {5, "coder vectors", coder_vectors},
        {6, "crack", crack},
        {7, "HAR export", har_export},
        {8, "ordering", ordering},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& cr : criteria) {
        if (!selected.empty() && !selected.count(cr.number)) continue;
        Outcome o;
        auto t0 = SteadyClock::now();
        try {
            o = cr.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << cr.number << " (" << cr.name << "): " << o.detail
                  << " [" << fmt(seconds_since(t0), 1) << " s]" << std::endl;
    }
    return failed ? 1 : 0;
}
