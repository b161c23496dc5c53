#include "robin/control.hpp"

#include "harness.hpp"
#include "stream_client.hpp"

#include <httplib.h>

#include <gtest/gtest.h>

#include <future>

using namespace robin;
using namespace robin::testing;
using json = nlohmann::json;

namespace {

struct ServiceRig {
    TempDir dir{"robin-control-test"};
    std::unique_ptr<control::Service> service;

    explicit ServiceRig(control::ServiceOptions opts = {}) {
        opts.ca_dir = dir.path() / "ca";
        if (opts.allow_origins.empty()) opts.allow_origins = {"http://127.0.0.1:*"};
        service = std::make_unique<control::Service>(opts);
    }
};

struct ApiRig : ServiceRig {
    std::unique_ptr<control::ApiServer> api;
    std::unique_ptr<httplib::Client> http;

    explicit ApiRig(control::ApiOptions opts = {}) {
        opts.listen = {"127.0.0.1", 0};
        api = std::make_unique<control::ApiServer>(*service, opts);
        http = std::make_unique<httplib::Client>("127.0.0.1", api->address().port);
        http->set_read_timeout(30);
    }
    ~ApiRig() {
        service->shutdown();
        api->stop();
    }
};

control::ControlMessage command(std::string type, json payload, std::string id = "c1") {
    control::ControlMessage m;
    m.type = std::move(type);
    m.payload = std::move(payload);
    m.id = std::move(id);
    return m;
}

proxy::ProxyConfig local_proxy() {
    proxy::ProxyConfig cfg;
    cfg.listen = {"127.0.0.1", 0};
    return cfg;
}

control::ApiOptions local_api() {
    control::ApiOptions opts;
    opts.listen = {"127.0.0.1", 0};
    return opts;
}

} // namespace

TEST(Dispatch, DigestMatchesRfc1321Vector) {
    ServiceRig rig;
    auto reply = rig.service->dispatch(command("coder.digest", {{"scheme", "md5"}, {"input_hex", "616263"}}));
    EXPECT_EQ(reply.type, "reply");
    EXPECT_EQ(reply.id, "c1");
    EXPECT_EQ(reply.payload["hex"], "900150983cd24fb0d6963f7d28e17f72");
}

TEST(Dispatch, UnknownTypeIsErrorReply) {
    ServiceRig rig;
    auto reply = rig.service->dispatch(command("nope", json::object(), "x9"));
    EXPECT_EQ(reply.type, "error");
    EXPECT_EQ(reply.id, "x9");
    EXPECT_EQ(reply.payload["code"], "UnknownType");
    EXPECT_TRUE(reply.payload["message"].is_string());
}

TEST(Dispatch, InvalidGlobCarriesRuleIndex) {
    ServiceRig rig;
    json rules = json::array({{{"host_glob", "*.example.org"}}, {{"host_glob", "[a-z].example.org"}}});
    auto reply = rig.service->dispatch(command("rules.set", {{"rules", rules}}));
    EXPECT_EQ(reply.type, "error");
    EXPECT_EQ(reply.payload["code"], "SchemaViolation");
    EXPECT_EQ(reply.payload["index"], 1);
    EXPECT_TRUE(rig.service->engine().rules().empty());
}

TEST(Dispatch, PayloadShapeErrors) {
    ServiceRig rig;
    EXPECT_EQ(rig.service->dispatch(command("coder.digest", {{"scheme", "md5"}})).payload["code"], "SchemaViolation");
    EXPECT_EQ(rig.service->dispatch(command("coder.digest", {{"scheme", "md7"}, {"input", "a"}})).payload["code"],
              "SchemaViolation");
    EXPECT_EQ(rig.service->dispatch(command("resume", {{"exchange_id", "seven"}})).payload["code"], "SchemaViolation");
    EXPECT_THROW(control::parse_message(json{{"type", "ping"}, {"v", 2}}), Error);
    EXPECT_THROW(control::parse_message(json::array()), Error);
    auto m = control::parse_message(json{{"type", "ping"}, {"id", "a"}});
    EXPECT_EQ(m.v, 1);
}

TEST(Dispatch, ResumeUnknownIsNotPending) {
    ServiceRig rig;
    auto reply = rig.service->dispatch(command("resume", {{"exchange_id", 42}, {"action", "forward"}}));
    EXPECT_EQ(reply.payload["code"], "NotPending");
    EXPECT_EQ(control::http_status(ErrorCode::not_pending), 404);
}

TEST(Dispatch, CoderRoundTripsThroughCommands) {
    ServiceRig rig;
    auto enc = rig.service->call("coder.transform", {{"codec", "base64"}, {"direction", "encode"}, {"input", "hi\x01"}});
    EXPECT_EQ(enc["output"], "aGkB");
    auto dec = rig.service->call("coder.transform", {{"codec", "base64"}, {"direction", "decode"}, {"input", "aGkB"}});
    EXPECT_EQ(dec["output_hex"], "686901");
    auto bin = rig.service->call("coder.transform", {{"codec", "hex_lower"}, {"direction", "decode"}, {"input", "ff00"}});
    EXPECT_FALSE(bin.contains("output"));
    EXPECT_EQ(bin["output_hex"], "ff00");
    auto x = rig.service->call("coder.xor", {{"a_hex", "0f0f"}, {"b_hex", "ff00"}});
    EXPECT_EQ(x["output_hex"], "f00f");
}

TEST(Api, CaPemIsPassThroughAndKeyNeverServed) {
    ApiRig rig;
    auto res = rig.http->Get("/api/ca.pem");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(res->body, rig.service->authority().export_root_pem());
    for (const char* path : {"/api/ca.pem", "/api/history", "/api/har", "/api/wiki", "/api/rules", "/api/pending",
                             "/api/findings", "/api/ping", "/", "/robin-ca.key.pem", "/api/robin-ca.key.pem"}) {
        auto r = rig.http->Get(path);
        ASSERT_TRUE(r) << path;
        EXPECT_EQ(r->body.find("PRIVATE KEY"), std::string::npos) << path;
    }
}

TEST(Api, ResumeUnknownIdIs404) {
    ApiRig rig;
    auto res = rig.http->Post("/api/resume", R"({"exchange_id": 999, "action": "forward"})", "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    auto body = json::parse(res->body);
    EXPECT_EQ(body["code"], "NotPending");
}

TEST(Api, RestErrorsAndRoutes) {
    ApiRig rig;
    auto r = rig.http->Post("/api/coder", R"({"op":"digest","scheme":"sha256","input":"abc"})", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(json::parse(r->body)["hex"], "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    r = rig.http->Post("/api/coder", "{not json", "application/json");
    EXPECT_EQ(r->status, 400);
    r = rig.http->Post("/api/rules", R"({"rules":[{"host_glob":"{a,b}"}]})", "application/json");
    EXPECT_EQ(r->status, 400);
    EXPECT_EQ(json::parse(r->body)["index"], 0);
    r = rig.http->Get("/api/nothing-here");
    EXPECT_EQ(r->status, 404);
    r = rig.http->Get("/api/wiki/idor");
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(json::parse(r->body)["key"], "idor");
    r = rig.http->Get("/api/wiki/absent-key");
    EXPECT_EQ(r->status, 404);
    r = rig.http->Get("/api/history/77");
    EXPECT_EQ(r->status, 404);
    r = rig.http->Post("/api/command", R"({"v":1,"type":"nope","id":"q"})", "application/json");
    EXPECT_EQ(r->status, 400);
    EXPECT_EQ(json::parse(r->body)["payload"]["code"], "UnknownType");
    r = rig.http->Post("/api/scan", R"({"base_url":"http://10.255.0.1:9/"})", "application/json");
    EXPECT_EQ(r->status, 403);
    EXPECT_EQ(json::parse(r->body)["code"], "OriginNotAllowed");
}

TEST(Api, CrossOriginRequestsRefused) {
    ApiRig rig;
    httplib::Headers h = {{"Origin", "http://evil.example"}};
    auto r = rig.http->Get("/api/history", h);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 403);
    std::string same = "http://127.0.0.1:" + std::to_string(rig.api->address().port);
    r = rig.http->Get("/api/history", {{"Origin", same}});
    EXPECT_EQ(r->status, 200);
}

TEST(Api, ExposureNeedsFlagAndToken) {
    ServiceRig rig;
    control::ApiOptions opts;
    opts.listen = {"0.0.0.0", 0};
    EXPECT_THROW(control::ApiServer(*rig.service, opts), Error);
    opts.expose = true;
    control::ApiServer api(*rig.service, opts);
    EXPECT_EQ(api.token().size(), 48u);
    httplib::Client c("127.0.0.1", api.address().port);
    auto r = c.Get("/api/history");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 401);
    r = c.Get("/api/history", {{"Authorization", "Bearer " + api.token()}});
    EXPECT_EQ(r->status, 200);
    api.stop();
    EXPECT_TRUE(net::is_loopback("127.0.0.1"));
    EXPECT_TRUE(net::is_loopback("::1"));
    EXPECT_FALSE(net::is_loopback("0.0.0.0"));
}

TEST(Api, AddressInUse) {
    ApiRig rig;
    control::ApiOptions opts;
    opts.listen = rig.api->address();
    try {
        control::ApiServer second(*rig.service, opts);
        FAIL() << "second bind succeeded";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::address_in_use);
    }
}

TEST(Api, StaticAssetsWithTraversalGuard) {
    TempDir ui("robin-ui");
    write_file(ui.path() / "index.html", "<html>ui</html>");
    write_file(ui.path() / "app.js", "console.log(1)");
    write_file(ui.path().parent_path() / "outside-secret.txt", "secret");
    control::ApiOptions opts;
    opts.ui_dir = ui.path();
    ApiRig rig(opts);
    auto r = rig.http->Get("/");
    EXPECT_EQ(r->body, "<html>ui</html>");
    r = rig.http->Get("/app.js");
    EXPECT_EQ(r->get_header_value("Content-Type"), "text/javascript");
    r = rig.http->Get("/../outside-secret.txt");
    EXPECT_EQ(r->status, 404);
    r = rig.http->Get("/%2e%2e/outside-secret.txt");
    EXPECT_EQ(r->status, 404);
    std::filesystem::remove(ui.path().parent_path() / "outside-secret.txt");

    ApiRig bare;
    r = bare.http->Get("/");
    EXPECT_EQ(r->status, 200);
    EXPECT_NE(r->body.find("docs/protocol.md"), std::string::npos);
}

TEST(Stream, HelloThenRepliesPairById) {
    ApiRig rig;
    StreamClient ws(rig.api->address());
    auto hello = ws.next();
    ASSERT_TRUE(hello);
    EXPECT_EQ((*hello)["type"], "hello");
    EXPECT_EQ((*hello)["v"], 1);
    ASSERT_TRUE(wait_until([&] { return rig.api->stream_clients() == 1; }));
    ws.send({{"v", 1}, {"type", "coder.digest"}, {"id", "a"}, {"payload", {{"scheme", "sha1"}, {"input", "abc"}}}});
    ws.send({{"v", 1}, {"type", "nope"}, {"id", "b"}, {"payload", json::object()}});
    std::map<std::string, json> replies;
    for (int i = 0; i < 2; ++i) {
        auto f = ws.next();
        ASSERT_TRUE(f);
        replies[(*f)["id"]] = *f;
    }
    EXPECT_EQ(replies["a"]["type"], "reply");
    EXPECT_EQ(replies["a"]["payload"]["hex"], "a9993e364706816aba3e25717850c26c9cd0d89d");
    EXPECT_EQ(replies["b"]["type"], "error");
    EXPECT_EQ(replies["b"]["payload"]["code"], "UnknownType");
    ws.send(json("garbage"));
    auto err = ws.next();
    ASSERT_TRUE(err);
    EXPECT_EQ((*err)["payload"]["code"], "SchemaViolation");
}

TEST(Stream, ProxiedExchangeYieldsOpenThenCompleted) {
    EchoServer echo({});
    ApiRig rig;
    auto& proxy = rig.service->start_proxy(local_proxy());
    StreamClient a(rig.api->address());
    StreamClient b(rig.api->address());
    ASSERT_TRUE(a.next_of("hello"));
    ASSERT_TRUE(b.next_of("hello"));
    ProxyClient client(proxy.address());
    std::string hp = "127.0.0.1:" + std::to_string(echo.port());
    auto resp = client.roundtrip("GET http://" + hp + "/x HTTP/1.1\r\nHost: " + hp + "\r\n\r\n");
    EXPECT_EQ(resp.status, 200);
    for (auto* ws : {&a, &b}) {
        auto open = ws->next_of("exchange_open");
        ASSERT_TRUE(open);
        auto done = ws->next_of("exchange_completed");
        ASSERT_TRUE(done);
        EXPECT_EQ((*open)["payload"]["exchange_id"], (*done)["payload"]["exchange_id"]);
        EXPECT_LT((*open)["seq"].get<std::uint64_t>(), (*done)["seq"].get<std::uint64_t>());
        EXPECT_EQ((*open)["id"], std::to_string((*open)["seq"].get<std::uint64_t>()));
    }
}

TEST(Stream, EditViaControlApiArrivesUpstream) {
    EchoServer echo({});
    control::ServiceOptions sopts;
    sopts.engine.intercept_default = true;
    ServiceRig srig(sopts);
    control::ApiServer api(*srig.service, local_api());
    auto& proxy = srig.service->start_proxy(local_proxy());
    StreamClient ws(api.address());
    ASSERT_TRUE(ws.next_of("hello"));
    std::string hp = "127.0.0.1:" + std::to_string(echo.port());
    auto fut = std::async(std::launch::async, [&] {
        ProxyClient client(proxy.address());
        return client.roundtrip("GET http://" + hp + "/orig HTTP/1.1\r\nHost: " + hp + "\r\n\r\n");
    });
    auto paused = ws.next_of("exchange_paused");
    ASSERT_TRUE(paused);
    auto id = (*paused)["payload"]["exchange_id"].get<ExchangeId>();
    std::string edited = "GET /orig HTTP/1.1\r\nHost: " + hp + "\r\nX-Robin: 1\r\n\r\n";
    auto reply = ws.call("resume", {{"exchange_id", id}, {"action", "edit"}, {"raw", edited}}, "r1");
    EXPECT_EQ(reply["type"], "reply") << reply.dump();
    auto resp = fut.get();
    EXPECT_EQ(resp.body, edited);
    srig.service->shutdown();
    api.stop();
}

TEST(Service, PassiveFindingsFromTrafficAreEmitted) {
    ServiceRig rig;
    std::vector<json> emitted;
    std::mutex mu;
    rig.service->bus().subscribe([&](const Event& e) {
        std::lock_guard lock(mu);
        if (e.kind == EventKind::finding_emitted) emitted.push_back(e.payload);
    });
    EchoServer echo({});
    auto& proxy = rig.service->start_proxy(local_proxy());
    ProxyClient client(proxy.address());
    std::string hp = "127.0.0.1:" + std::to_string(echo.port());
    client.roundtrip("GET http://" + hp + "/ HTTP/1.1\r\nHost: " + hp + "\r\n\r\n");
    ASSERT_TRUE(wait_until([&] { return !rig.service->findings().empty(); }));
    std::lock_guard lock(mu);
    ASSERT_FALSE(emitted.empty());
    EXPECT_EQ(emitted.size(), rig.service->findings().size());
    EXPECT_TRUE(emitted.front()["finding"].contains("check_id"));
}
