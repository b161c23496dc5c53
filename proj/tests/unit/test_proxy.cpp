#include "robin/error.hpp"
#include "robin/proxy.hpp"

#include "harness.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <future>

using namespace robin;
using namespace robin::testing;

namespace {

class ScriptStream final : public net::Stream {
public:
    explicit ScriptStream(std::string input) : input_(std::move(input)) {}
    std::size_t read_some(std::span<char> buffer) override {
        std::size_t n = std::min(buffer.size(), input_.size() - pos_);
        std::memcpy(buffer.data(), input_.data() + pos_, n);
        pos_ += n;
        return n;
    }
    void write_all(std::string_view bytes) override { written += bytes; }
    void shutdown() noexcept override {}
    void set_read_timeout(net::Seconds) override {}
    std::string written;

private:
    std::string input_;
    std::size_t pos_ = 0;
};

proxy::RouteResult route(const std::string& input, std::string* written = nullptr) {
    ScriptStream s(input);
    net::BufferedReader in(s);
    auto r = proxy::route_connection(in, s);
    if (written) *written = s.written;
    return r;
}

// De-chunking written independently of the library parser.
std::string dechunk(std::string_view raw) {
    std::string out;
    for (;;) {
        auto eol = raw.find("\r\n");
        std::size_t size = std::stoul(std::string(raw.substr(0, eol)), nullptr, 16);
        raw.remove_prefix(eol + 2);
        if (size == 0) return out;
        out += raw.substr(0, size);
        raw.remove_prefix(size + 2);
    }
}

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds limit = std::chrono::milliseconds(5000)) {
    auto until = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < until) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return pred();
}

struct Rig {
    TempDir dir{"robin-proxy-test"};
    EventBus bus;
    intercept::InterceptEngine engine;
    std::shared_ptr<ca::CertAuthority> ca;
    std::unique_ptr<proxy::ProxyHandle> handle;
    std::string root_file;

    explicit Rig(proxy::ProxyConfig cfg = {}, intercept::InterceptEngine::Options opts = {})
        : engine(bus, opts) {
        ca = ca::CertAuthority::init(dir.path() / "ca");
        root_file = write_file(dir.path() / "root.pem", ca->export_root_pem()).string();
        cfg.listen = {"127.0.0.1", 0};
        handle = proxy::start_proxy(cfg, ca, engine);
    }
    ~Rig() {
        engine.shutdown();
        handle->stop();
    }
    net::Endpoint addr() const { return handle->address(); }
};

std::string host_port(std::uint16_t port) {
    return "127.0.0.1:" + std::to_string(port);
}

} // namespace

TEST(Route, ProtocolForcedBranches) {
    auto r = route("GET http://example.org/ HTTP/1.1\r\nHost: example.org\r\n\r\n");
    EXPECT_EQ(r.route, proxy::Route::plain_http);
    EXPECT_EQ(r.host, "example.org");

    std::string written;
    r = route("CONNECT example.org:443 HTTP/1.1\r\nHost: example.org:443\r\n\r\n", &written);
    EXPECT_EQ(r.route, proxy::Route::tls_tunnel);
    EXPECT_EQ(r.host, "example.org");
    EXPECT_EQ(r.port, 443);
    EXPECT_EQ(written, "HTTP/1.1 200 Connection Established\r\n\r\n");

    r = route(std::string("FOO\0\0", 5), &written);
    EXPECT_EQ(r.route, proxy::Route::reject);
    EXPECT_TRUE(written.starts_with("HTTP/1.1 400 "));

    r = route("GET / HTTP/9.9\r\n\r\n", &written);
    EXPECT_EQ(r.route, proxy::Route::reject);
    EXPECT_TRUE(written.starts_with("HTTP/1.1 400 "));

    r = route("", &written);
    EXPECT_EQ(r.route, proxy::Route::reject);
    EXPECT_TRUE(written.empty());
}

TEST(Proxy, PlainPassThroughIsByteExact) {
    EchoServer echo({});
    Rig rig;
    ProxyClient client(rig.addr());
    std::string hp = host_port(echo.port());
    auto resp = client.roundtrip("GET http://" + hp + "/a/b?x=1&y=%20 HTTP/1.1\r\nHost: " + hp +
                                 "\r\nX-Dup: one\r\nx-dup: Two\r\nProxy-Connection: keep-alive\r\nAccept: */*\r\n\r\n");
    EXPECT_EQ(resp.status, 200);
    std::string expected = "GET /a/b?x=1&y=%20 HTTP/1.1\r\nHost: " + hp + "\r\nX-Dup: one\r\nx-dup: Two\r\nAccept: */*\r\n\r\n";
    EXPECT_EQ(resp.body, expected);

    // Keep-alive: a second request on the same client connection.
    resp = client.roundtrip("POST http://" + hp + "/p HTTP/1.1\r\nHost: " + hp +
                            "\r\nContent-Length: 5\r\n\r\nhello");
    EXPECT_EQ(resp.body, "POST /p HTTP/1.1\r\nHost: " + hp + "\r\nContent-Length: 5\r\n\r\nhello");

    ASSERT_TRUE(eventually([&] { return rig.engine.history().size() == 2; }));
    ASSERT_TRUE(eventually([&] { return rig.engine.history().get(2)->state == ExchangeState::completed; }));
    auto rec = rig.engine.history().get(1);
    EXPECT_EQ(rec->state, ExchangeState::completed);
    EXPECT_EQ(rec->response->body, expected);
    EXPECT_EQ(rec->request.target.path_and_query, "/a/b?x=1&y=%20");
    EXPECT_EQ(echo.connections(), 1u);
}

TEST(Proxy, ConnectionHeaderNamesAreStripped) {
    EchoServer echo({});
    Rig rig;
    ProxyClient client(rig.addr());
    std::string hp = host_port(echo.port());
    auto resp = client.roundtrip("GET http://" + hp + "/ HTTP/1.1\r\nHost: " + hp +
                                 "\r\nConnection: X-Secret, keep-alive\r\nX-Secret: 1\r\nKeep-Alive: 5\r\nX-Kept: 2\r\n\r\n");
    EXPECT_EQ(resp.body, "GET / HTTP/1.1\r\nHost: " + hp + "\r\nX-Kept: 2\r\n\r\n");
}

TEST(Proxy, ChunkedRequestBodyArrivesDechunked) {
    EchoServer echo({});
    Rig rig;
    ProxyClient client(rig.addr());
    std::string hp = host_port(echo.port());
    auto resp = client.roundtrip("POST http://" + hp + "/c HTTP/1.1\r\nHost: " + hp +
                                 "\r\nTransfer-Encoding: chunked\r\n\r\n1\r\na\r\n2\r\nbc\r\n0\r\n\r\n");
    auto head_end = resp.body.find("\r\n\r\n");
    ASSERT_NE(head_end, std::string::npos);
    EXPECT_NE(resp.body.substr(0, head_end).find("Transfer-Encoding: chunked"), std::string::npos);
    EXPECT_EQ(dechunk(resp.body.substr(head_end + 4)), "abc");
    ASSERT_TRUE(eventually([&] { return rig.engine.history().size() == 1; }));
    EXPECT_EQ(rig.engine.history().get(1)->request.body, "abc");
}

TEST(Proxy, HttpsMitmWithTrustedRoot) {
    EchoServer echo({.tls = true});
    Rig rig;
    ProxyClient client(rig.addr());
    client.connect_tunnel("127.0.0.1", echo.port(), rig.root_file);
    std::string hp = host_port(echo.port());
    std::string body(3000, 'z');
    std::string req = "PUT /secure HTTP/1.1\r\nHost: " + hp + "\r\nContent-Length: 3000\r\n\r\n" + body;
    auto resp = client.roundtrip(req);
    EXPECT_EQ(resp.body, req);
    resp = client.roundtrip("GET /again HTTP/1.1\r\nHost: " + hp + "\r\n\r\n");
    EXPECT_EQ(resp.body, "GET /again HTTP/1.1\r\nHost: " + hp + "\r\n\r\n");

    ASSERT_TRUE(eventually([&] {
        auto r = rig.engine.history().get(2);
        return r && r->state == ExchangeState::completed;
    }));
    auto rec = rig.engine.history().get(1);
    EXPECT_EQ(rec->scheme, http::Scheme::https);
    EXPECT_EQ(rec->request.target.url(), "https://" + hp + "/secure");
    ASSERT_TRUE(rec->tls);
    EXPECT_FALSE(rec->tls->client_protocol.empty());
    EXPECT_FALSE(rec->tls->upstream_protocol.empty());
    EXPECT_EQ(echo.connections(), 1u);
}

TEST(Proxy, ClientWithoutRootRejectsCertificate) {
    EchoServer echo({.tls = true});
    Rig rig;
    TempDir other("robin-other-ca");
    auto stranger = ca::CertAuthority::init(other.path());
    auto stranger_root = write_file(other.path() / "root.pem", stranger->export_root_pem()).string();
    ProxyClient client(rig.addr());
    EXPECT_THROW(client.connect_tunnel("127.0.0.1", echo.port(), stranger_root), Error);
    ASSERT_TRUE(eventually([&] { return rig.engine.history().size() == 1; }));
    ASSERT_TRUE(eventually([&] { return rig.engine.history().get(1)->state == ExchangeState::failed; }));
    auto rec = rig.engine.history().get(1);
    ASSERT_TRUE(rec->failure_reason);
    EXPECT_NE(rec->failure_reason->find("client rejected certificate"), std::string::npos) << *rec->failure_reason;
}

TEST(Proxy, ClosedUpstreamPortIsTlsFailure) {
    std::uint16_t closed_port;
    {
        net::Listener l({"127.0.0.1", 0});
        closed_port = l.local().port;
    }
    Rig rig;
    ProxyClient client(rig.addr());
    EXPECT_THROW(client.connect_tunnel("127.0.0.1", closed_port, rig.root_file), Error);
    ASSERT_TRUE(eventually([&] { return rig.engine.history().size() == 1; }));
    auto rec = rig.engine.history().get(1);
    EXPECT_EQ(rec->state, ExchangeState::failed);
    EXPECT_NE(rec->failure_reason->find("upstream TLS failure"), std::string::npos);
}

TEST(Proxy, SilentUpstreamYields504) {
    EchoServer echo({.silent = true});
    proxy::ProxyConfig cfg;
    cfg.upstream_response_timeout = net::Seconds(0.3);
    Rig rig(cfg);
    ProxyClient client(rig.addr());
    std::string hp = host_port(echo.port());
    auto resp = client.roundtrip("GET http://" + hp + "/slow HTTP/1.1\r\nHost: " + hp + "\r\n\r\n");
    EXPECT_EQ(resp.status, 504);
    ASSERT_TRUE(eventually([&] { return rig.engine.history().get(1)->state == ExchangeState::failed; }));
    EXPECT_TRUE(rig.engine.history().get(1)->failure_reason);
}

TEST(Proxy, AddressInUseAndCaUnavailable) {
    Rig rig;
    intercept::InterceptEngine other(rig.bus);
    proxy::ProxyConfig cfg;
    cfg.listen = rig.addr();
    try {
        proxy::start_proxy(cfg, rig.ca, other);
        FAIL() << "expected AddressInUse";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::address_in_use);
    }
    cfg.listen = {"127.0.0.1", 0};
    cfg.ca_dir = "/dev/null/robin-ca";
    try {
        proxy::start_proxy(cfg, other);
        FAIL() << "expected CaUnavailable";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ca_unavailable);
    }
    EXPECT_THROW(proxy::start_proxy(cfg, nullptr, other), Error);
}

TEST(Proxy, DropClosesWithoutUpstreamContact) {
    EchoServer echo({});
    intercept::InterceptEngine::Options opts;
    opts.intercept_default = true;
    Rig rig({}, opts);
    auto token = rig.bus.subscribe([&](const Event& e) {
        if (e.kind == EventKind::exchange_paused) {
            auto id = e.payload["exchange_id"].get<ExchangeId>();
            std::thread([&rig, id] { rig.engine.resume(id, intercept::Direction::request, intercept::EditAction::drop()); })
                .detach();
        }
    });
    ProxyClient client(rig.addr());
    std::string hp = host_port(echo.port());
    client.send("GET http://" + hp + "/never HTTP/1.1\r\nHost: " + hp + "\r\n\r\n");
    EXPECT_TRUE(client.closed_without_response());
    ASSERT_TRUE(eventually([&] { return rig.engine.history().get(1)->state == ExchangeState::dropped; }));
    EXPECT_FALSE(rig.engine.history().get(1)->response);
    EXPECT_EQ(echo.connections(), 0u);
    rig.bus.unsubscribe(token);
}

TEST(Proxy, EditedRequestArrivesVerbatim) {
    EchoServer echo({});
    intercept::InterceptEngine::Options opts;
    opts.intercept_default = true;
    Rig rig({}, opts);
    std::string hp = host_port(echo.port());
    std::string edited_raw = "POST /edited HTTP/1.1\r\nHost: " + hp + "\r\nX-Edited: yes\r\nContent-Length: 4\r\n\r\nBODY";
    rig.bus.subscribe([&](const Event& e) {
        if (e.kind == EventKind::exchange_paused) {
            auto id = e.payload["exchange_id"].get<ExchangeId>();
            std::thread([&rig, id, edited_raw] {
                rig.engine.resume_raw(id, intercept::Direction::request, edited_raw);
            }).detach();
        }
    });
    ProxyClient client(rig.addr());
    auto resp = client.roundtrip("GET http://" + hp + "/orig HTTP/1.1\r\nHost: " + hp + "\r\n\r\n");
    EXPECT_EQ(resp.body, edited_raw);
    ASSERT_TRUE(eventually([&] { return rig.engine.history().get(1)->state == ExchangeState::completed; }));
    auto rec = rig.engine.history().get(1);
    EXPECT_TRUE(rec->edited);
    EXPECT_EQ(rec->request.target.path_and_query, "/orig");
    EXPECT_EQ(rec->edited_request->target.path_and_query, "/edited");
}

TEST(Proxy, TruncatesCapturedBodyButRelaysAll) {
    EchoServer echo({});
    proxy::ProxyConfig cfg;
    cfg.max_captured_body = 16;
    Rig rig(cfg);
    ProxyClient client(rig.addr());
    std::string hp = host_port(echo.port());
    std::string body(100, 'q');
    std::string req = "POST http://" + hp + "/big HTTP/1.1\r\nHost: " + hp + "\r\nContent-Length: 100\r\n\r\n" + body;
    auto resp = client.roundtrip(req);
    EXPECT_NE(resp.body.find(body), std::string::npos);
    ASSERT_TRUE(eventually([&] { return rig.engine.history().get(1)->state == ExchangeState::completed; }));
    auto rec = rig.engine.history().get(1);
    EXPECT_TRUE(rec->request_truncated);
    EXPECT_EQ(rec->request.body.size(), 16u);
    EXPECT_EQ(rec->request_body_size, 100u);
    EXPECT_TRUE(rec->response_truncated);
}
