#include "robin/control.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <openssl/rand.h>

#include <sys/socket.h>

#include <condition_variable>
#include <deque>
#include <fstream>
#include <future>
#include <list>
#include <sstream>
#include <thread>

namespace robin::control {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace bhttp = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using json = nlohmann::json;

namespace {

constexpr std::size_t kMaxRequestBody = 64 * 1024 * 1024;
constexpr std::size_t kMaxQueuedFrames = 100000;

std::string random_token() {
    unsigned char buf[24];
    if (RAND_bytes(buf, sizeof buf) != 1) throw Error(ErrorCode::internal, "RAND_bytes failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned char c : buf) {
        out += hex[c >> 4];
        out += hex[c & 15];
    }
    return out;
}

std::string percent_decode(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '+') {
            out += ' ';
        } else if (s[i] == '%' && i + 2 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
                   std::isxdigit(static_cast<unsigned char>(s[i + 2]))) {
            out += static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16));
            i += 2;
        } else {
            out += s[i];
        }
    }
    return out;
}

struct Target {
    std::string path;
    std::map<std::string, std::string> query;
};

Target split_target(std::string_view t) {
    Target out;
    auto q = t.find('?');
    out.path = percent_decode(t.substr(0, q));
    if (q == std::string_view::npos) return out;
    auto rest = t.substr(q + 1);
    while (!rest.empty()) {
        auto amp = rest.find('&');
        auto pair = rest.substr(0, amp);
        auto eq = pair.find('=');
        if (!pair.empty())
            out.query[percent_decode(pair.substr(0, eq))] =
                eq == std::string_view::npos ? "" : percent_decode(pair.substr(eq + 1));
        if (amp == std::string_view::npos) break;
        rest = rest.substr(amp + 1);
    }
    return out;
}

std::string mime_for(const std::filesystem::path& p) {
    static const std::map<std::string, std::string> types = {
        {".html", "text/html; charset=utf-8"}, {".js", "text/javascript"}, {".mjs", "text/javascript"},
        {".css", "text/css"},                  {".json", "application/json"}, {".svg", "image/svg+xml"},
        {".png", "image/png"},                 {".ico", "image/x-icon"},      {".woff2", "font/woff2"},
        {".map", "application/json"},          {".txt", "text/plain; charset=utf-8"}};
    auto it = types.find(p.extension().string());
    return it == types.end() ? "application/octet-stream" : it->second;
}

const char* kPlaceholder =
    "<!doctype html><html><head><title>Robin</title></head><body>"
    "<h1>Robin</h1><p>The control API is running. No UI assets are installed; see docs/protocol.md "
    "for the wire protocol.</p></body></html>";

json event_frame(const Event& e) {
    return {{"v", kProtocolVersion},
            {"type", std::string(to_string(e.kind))},
            {"id", std::to_string(e.seq)},
            {"seq", e.seq},
            {"payload", e.payload}};
}

// Browsers attach Origin to cross-site requests; only same-host pages may
// drive the API.
bool origin_acceptable(const bhttp::request<bhttp::string_body>& req) {
    auto it = req.find(bhttp::field::origin);
    if (it == req.end()) return true;
    auto origin = std::string(it->value());
    auto host = std::string(req[bhttp::field::host]);
    auto scheme_end = origin.find("://");
    if (scheme_end == std::string::npos) return false;
    return origin.substr(scheme_end + 3) == host;
}

} // namespace

struct ApiServer::Impl : std::enable_shared_from_this<ApiServer::Impl> {
    Service& service;
    ApiOptions options;
    asio::io_context ioc;
    tcp::acceptor acceptor{ioc};
    std::thread io_thread;
    std::atomic<bool> stopping{false};
    std::atomic<std::size_t> ws_clients{0};
    net::Endpoint bound;

    struct Conn {
        std::thread thread;
        int fd = -1;
        std::atomic<bool> done{false};
    };
    std::mutex conns_mu;
    std::list<std::shared_ptr<Conn>> conns;

    std::mutex workers_mu;
    std::condition_variable workers_cv;
    std::size_t workers = 0;

    class Session;
    std::mutex sessions_mu;
    std::vector<std::weak_ptr<Session>> sessions;

    Impl(Service& s, ApiOptions o) : service(s), options(std::move(o)) {}

    void start();
    void do_accept();
    void serve(std::shared_ptr<Conn> conn, tcp::socket socket);
    bool authorized(const bhttp::request<bhttp::string_body>& req, const Target& target) const;
    bhttp::response<bhttp::string_body> handle(const bhttp::request<bhttp::string_body>& req, const Target& target);
    bhttp::response<bhttp::string_body> handle_api(const bhttp::request<bhttp::string_body>& req,
                                                   const Target& target);
    bhttp::response<bhttp::string_body> serve_static(const bhttp::request<bhttp::string_body>& req,
                                                     const Target& target);
    void run_worker(std::function<void()> fn);
    void stop();
};

// Event stream session. All socket I/O runs on the io_context thread;
// commands execute on worker threads and post their replies back.
class ApiServer::Impl::Session : public std::enable_shared_from_this<Session> {
public:
    Session(std::shared_ptr<Impl> impl, tcp::socket socket)
        : impl_(std::move(impl)), ws_(std::move(socket)) {}

    void start(bhttp::request<bhttp::string_body> req) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.read_message_max(kMaxRequestBody);
        auto self = shared_from_this();
        ws_.async_accept(req, [self](beast::error_code ec) {
            if (ec) return;
            self->on_open();
        });
    }

    void close() {
        if (closed_) return;
        closed_ = true;
        if (token_) impl_->service.bus().unsubscribe(token_);
        token_ = 0;
        beast::error_code ec;
        beast::get_lowest_layer(ws_).cancel(ec);
        beast::get_lowest_layer(ws_).close(ec);
        if (counted_) {
            counted_ = false;
            --impl_->ws_clients;
        }
    }

    void send(std::string frame) {
        if (closed_) return;
        if (queue_.size() >= kMaxQueuedFrames) {
            // A client that cannot keep up loses the stream rather than the
            // server's memory.
            close();
            return;
        }
        queue_.push_back(std::move(frame));
        if (!writing_) write_next();
    }

private:
    void on_open() {
        if (closed_ || impl_->stopping) {
            close();
            return;
        }
        ++impl_->ws_clients;
        counted_ = true;
        std::weak_ptr<Session> weak = shared_from_this();
        auto executor = ws_.get_executor();
        token_ = impl_->service.bus().subscribe([weak, executor](const Event& e) {
            auto frame = event_frame(e).dump();
            asio::post(executor, [weak, frame = std::move(frame)]() mutable {
                if (auto s = weak.lock()) s->send(std::move(frame));
            });
        });
        json hello = {{"v", kProtocolVersion},
                      {"type", "hello"},
                      {"id", "0"},
                      {"payload",
                       {{"version", kProtocolVersion},
                        {"last_seq", impl_->service.bus().last_seq()},
                        {"commands", Service::command_types()}}}};
        // Ahead of any event already queued by the subscription.
        queue_.push_front(hello.dump());
        if (!writing_) write_next();
        read_next();
    }

    void write_next() {
        if (queue_.empty() || closed_) {
            writing_ = false;
            return;
        }
        writing_ = true;
        ws_.text(true);
        auto self = shared_from_this();
        ws_.async_write(asio::buffer(queue_.front()), [self](beast::error_code ec, std::size_t) {
            if (ec) {
                self->close();
                return;
            }
            self->queue_.pop_front();
            self->write_next();
        });
    }

    void read_next() {
        auto self = shared_from_this();
        ws_.async_read(buffer_, [self](beast::error_code ec, std::size_t) {
            if (ec) {
                self->close();
                return;
            }
            auto text = beast::buffers_to_string(self->buffer_.data());
            self->buffer_.consume(self->buffer_.size());
            self->on_message(std::move(text));
            self->read_next();
        });
    }

    void on_message(std::string text) {
        ControlMessage cmd;
        try {
            cmd = parse_message(json::parse(text));
        } catch (const std::exception& e) {
            ControlMessage reply;
            reply.type = "error";
            try {
                auto j = json::parse(text);
                if (j.is_object() && j.contains("id") && j["id"].is_string()) reply.id = j["id"];
            } catch (...) {
            }
            reply.payload = {{"code", std::string(to_string(ErrorCode::schema_violation))}, {"message", e.what()}};
            send(to_json(reply).dump());
            return;
        }
        std::weak_ptr<Session> weak = shared_from_this();
        auto executor = ws_.get_executor();
        auto impl = impl_;
        impl_->run_worker([impl, weak, executor, cmd = std::move(cmd)] {
            auto frame = to_json(impl->service.dispatch(cmd)).dump();
            asio::post(executor, [weak, frame = std::move(frame)]() mutable {
                if (auto s = weak.lock()) s->send(std::move(frame));
            });
        });
    }

    std::shared_ptr<Impl> impl_;
    websocket::stream<tcp::socket> ws_;
    beast::flat_buffer buffer_;
    std::deque<std::string> queue_;
    bool writing_ = false;
    bool closed_ = false;
    bool counted_ = false;
    std::uint64_t token_ = 0;
};

void ApiServer::Impl::start() {
    boost::system::error_code ec;
    auto addr = asio::ip::make_address(options.listen.host == "localhost" ? "127.0.0.1" : options.listen.host, ec);
    if (ec) throw Error(ErrorCode::invalid_argument, "API address must be an IP literal: " + options.listen.host);
    if (!addr.is_loopback() && !options.expose)
        throw Error(ErrorCode::invalid_argument,
                    "refusing to expose the control API on " + options.listen.host + " without --api-expose");
    if (options.expose && options.token.empty()) options.token = random_token();
    tcp::endpoint ep(addr, options.listen.port);
    acceptor.open(ep.protocol(), ec);
    if (!ec) acceptor.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) acceptor.bind(ep, ec);
    if (ec == asio::error::address_in_use)
        throw Error(ErrorCode::address_in_use, "control API address in use: " + options.listen.to_string());
    if (!ec) acceptor.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) throw Error(ErrorCode::network_error, "cannot listen on " + options.listen.to_string() + ": " + ec.message());
    auto local = acceptor.local_endpoint();
    bound = {local.address().to_string(), local.port()};
    do_accept();
    io_thread = std::thread([self = shared_from_this()] {
        for (;;) {
            try {
                self->ioc.run();
                return;
            } catch (const std::exception&) {
                // A handler threw; keep serving the other sessions.
            }
        }
    });
}

void ApiServer::Impl::do_accept() {
    acceptor.async_accept([self = shared_from_this()](beast::error_code ec, tcp::socket socket) {
        if (ec || self->stopping) return;
        auto conn = std::make_shared<Conn>();
        conn->fd = socket.native_handle();
        {
            std::lock_guard lock(self->conns_mu);
            for (auto it = self->conns.begin(); it != self->conns.end();) {
                if ((*it)->done) {
                    (*it)->thread.join();
                    it = self->conns.erase(it);
                } else {
                    ++it;
                }
            }
            self->conns.push_back(conn);
            conn->thread = std::thread(
                [self, conn, s = std::move(socket)]() mutable { self->serve(conn, std::move(s)); });
        }
        self->do_accept();
    });
}

void ApiServer::Impl::serve(std::shared_ptr<Conn> conn, tcp::socket socket) {
    try {
        beast::flat_buffer buffer;
        for (;;) {
            bhttp::request_parser<bhttp::string_body> parser;
            parser.body_limit(kMaxRequestBody);
            beast::error_code ec;
            bhttp::read(socket, buffer, parser, ec);
            if (ec == bhttp::error::end_of_stream || ec == asio::error::eof || ec == asio::error::connection_reset ||
                ec == asio::error::operation_aborted || ec == asio::error::bad_descriptor)
                break;
            if (ec) {
                bhttp::response<bhttp::string_body> res{bhttp::status::bad_request, 11};
                res.set(bhttp::field::content_type, "application/json");
                res.body() = json{{"code", std::string(to_string(ErrorCode::schema_violation))}, {"message", ec.message()}}.dump();
                res.prepare_payload();
                res.keep_alive(false);
                bhttp::write(socket, res, ec);
                break;
            }
            auto req = parser.release();
            auto target = split_target({req.target().data(), req.target().size()});
            if (websocket::is_upgrade(req) && target.path == "/api/stream") {
                if (!origin_acceptable(req) || !authorized(req, target)) {
                    bhttp::response<bhttp::string_body> res{origin_acceptable(req) ? bhttp::status::unauthorized
                                                                                  : bhttp::status::forbidden,
                                                             req.version()};
                    res.keep_alive(false);
                    res.prepare_payload();
                    bhttp::write(socket, res, ec);
                    break;
                }
                // The io_context thread owns the socket from here on.
                auto self = shared_from_this();
                asio::post(ioc, [self, s = std::move(socket), r = std::move(req)]() mutable {
                    auto session = std::make_shared<Session>(self, std::move(s));
                    {
                        std::lock_guard lock(self->sessions_mu);
                        std::erase_if(self->sessions, [](const auto& w) { return w.expired(); });
                        self->sessions.push_back(session);
                    }
                    if (self->stopping) return;
                    session->start(std::move(r));
                });
                break;
            }
            auto res = handle(req, target);
            res.keep_alive(req.keep_alive() && !stopping);
            res.prepare_payload();
            bhttp::write(socket, res, ec);
            if (ec || !res.keep_alive()) break;
        }
        beast::error_code ignored;
        if (socket.is_open()) socket.shutdown(tcp::socket::shutdown_both, ignored);
    } catch (const std::exception&) {
    }
    conn->done = true;
}

bool ApiServer::Impl::authorized(const bhttp::request<bhttp::string_body>& req, const Target& target) const {
    if (options.token.empty()) return true;
    auto it = req.find(bhttp::field::authorization);
    if (it != req.end() && it->value() == "Bearer " + options.token) return true;
    auto q = target.query.find("token");
    return q != target.query.end() && q->second == options.token;
}

bhttp::response<bhttp::string_body> ApiServer::Impl::handle(const bhttp::request<bhttp::string_body>& req,
                                                            const Target& target) {
    if (target.path == "/api" || target.path.rfind("/api/", 0) == 0) {
        if (!origin_acceptable(req)) {
            bhttp::response<bhttp::string_body> res{bhttp::status::forbidden, req.version()};
            res.set(bhttp::field::content_type, "application/json");
            res.body() = json{{"code", std::string(to_string(ErrorCode::origin_not_allowed))}, {"message", "cross-origin request refused"}}.dump();
            return res;
        }
        if (!authorized(req, target)) {
            bhttp::response<bhttp::string_body> res{bhttp::status::unauthorized, req.version()};
            res.set(bhttp::field::content_type, "application/json");
            res.set(bhttp::field::www_authenticate, "Bearer");
            res.body() = json{{"code", "Unauthorized"}, {"message", "bearer token required"}}.dump();
            return res;
        }
        return handle_api(req, target);
    }
    return serve_static(req, target);
}

bhttp::response<bhttp::string_body> ApiServer::Impl::handle_api(const bhttp::request<bhttp::string_body>& req,
                                                                const Target& target) {
    bhttp::response<bhttp::string_body> res{bhttp::status::ok, req.version()};
    res.set(bhttp::field::content_type, "application/json");
    res.set(bhttp::field::cache_control, "no-store");
    const auto& path = target.path;
    bool get = req.method() == bhttp::verb::get;
    bool post = req.method() == bhttp::verb::post;

    auto body_json = [&]() -> json {
        if (req.body().empty()) return json::object();
        try {
            return json::parse(req.body());
        } catch (const json::exception& e) {
            throw Error(ErrorCode::schema_violation, std::string("request body is not JSON: ") + e.what());
        }
    };
    auto query_json = [&] {
        json q = json::object();
        for (const auto& [k, v] : target.query)
            if (k != "token" && k != "format" && k != "full") q[k] = v;
        return q;
    };

    try {
        json out;
        if (get && path == "/api/ca.pem") {
            res.set(bhttp::field::content_type, "application/x-pem-file");
            res.body() = service.authority().export_root_pem();
            return res;
        } else if (get && path == "/api/ping") {
            out = service.call("ping");
        } else if (get && path == "/api/history") {
            json p = {{"filter", query_json()}};
            if (target.query.count("full")) p["full"] = target.query.at("full") == "1" || target.query.at("full") == "true";
            out = service.call("history.query", p);
        } else if (get && path.rfind("/api/history/", 0) == 0) {
            auto id_text = path.substr(std::string("/api/history/").size());
            ExchangeId id = 0;
            try {
                std::size_t used = 0;
                id = std::stoull(id_text, &used);
                if (used != id_text.size()) throw std::invalid_argument("id");
            } catch (const std::exception&) {
                throw Error(ErrorCode::not_found, "no exchange '" + id_text + "'");
            }
            out = service.call("history.get", {{"exchange_id", id}});
        } else if (get && path == "/api/har") {
            out = service.call("har.export", {{"filter", query_json()}});
            res.set(bhttp::field::content_disposition, "attachment; filename=\"robin.har\"");
        } else if (get && path == "/api/wiki") {
            out = service.call("wiki.list");
        } else if (get && path.rfind("/api/wiki/", 0) == 0) {
            out = service.call("wiki.get", {{"key", path.substr(std::string("/api/wiki/").size())}});
        } else if (get && path == "/api/rules") {
            out = service.call("rules.get");
        } else if (post && path == "/api/rules") {
            auto b = body_json();
            out = service.call("rules.set", b.is_array() ? json{{"rules", b}} : b);
        } else if (get && path == "/api/pending") {
            out = service.call("pending.list");
        } else if (post && path == "/api/resume") {
            out = service.call("resume", body_json());
        } else if (get && path == "/api/findings") {
            out = service.call("findings.list");
        } else if (post && path == "/api/scan") {
            out = service.call("scan.active", body_json());
        } else if (post && path == "/api/scan/passive") {
            out = service.call("scan.passive", body_json());
        } else if (post && path == "/api/scan/enumerable") {
            out = service.call("scan.enumerable", body_json());
        } else if (post && path == "/api/scan/explain") {
            out = service.call("scan.explain", body_json());
        } else if (post && path == "/api/repeater") {
            bool csv = target.query.count("format") && target.query.at("format") == "csv";
            auto b = body_json();
            if (csv && b.is_object()) b["format"] = "csv";
            out = service.call("repeater.run", b);
            if (csv) {
                res.set(bhttp::field::content_type, "text/csv; charset=utf-8");
                res.body() = out.value("csv", std::string());
                return res;
            }
        } else if (post && path == "/api/repeater/parse") {
            out = service.call("repeater.parse", body_json());
        } else if (post && path == "/api/jobs/cancel") {
            out = service.call("job.cancel", body_json());
        } else if (post && path == "/api/coder") {
            auto b = body_json();
            if (!b.is_object() || !b.contains("op") || !b["op"].is_string())
                throw Error(ErrorCode::schema_violation, "payload.op must be a string");
            auto op = b["op"].get<std::string>();
            b.erase("op");
            out = service.call("coder." + op, b);
        } else if (post && path == "/api/command") {
            auto reply = service.dispatch(parse_message(body_json()));
            if (reply.type == "error") {
                auto code = reply.payload.value("code", std::string());
                auto parsed = parse_error_code(code);
                res.result(http_status(parsed ? *parsed : ErrorCode::internal));
            }
            res.body() = to_json(reply).dump();
            return res;
        } else {
            throw Error(ErrorCode::not_found, "no endpoint " + std::string(req.method_string()) + " " + path);
        }
        res.body() = out.dump();
    } catch (const Error& e) {
        res.result(http_status(e.code()));
        res.body() = error_payload(e).dump();
    } catch (const std::exception& e) {
        res.result(bhttp::status::internal_server_error);
        res.body() = json{{"code", std::string(to_string(ErrorCode::internal))}, {"message", e.what()}}.dump();
    }
    return res;
}

bhttp::response<bhttp::string_body> ApiServer::Impl::serve_static(const bhttp::request<bhttp::string_body>& req,
                                                                  const Target& target) {
    bhttp::response<bhttp::string_body> res{bhttp::status::ok, req.version()};
    if (req.method() != bhttp::verb::get && req.method() != bhttp::verb::head) {
        res.result(bhttp::status::method_not_allowed);
        return res;
    }
    namespace fs = std::filesystem;
    std::error_code ec;
    if (options.ui_dir.empty() || !fs::is_directory(options.ui_dir, ec)) {
        if (target.path != "/" && target.path != "/index.html") {
            res.result(bhttp::status::not_found);
            return res;
        }
        res.set(bhttp::field::content_type, "text/html; charset=utf-8");
        res.body() = kPlaceholder;
        return res;
    }
    auto root = fs::weakly_canonical(options.ui_dir, ec);
    auto rel = target.path == "/" ? std::string("index.html") : target.path.substr(1);
    auto file = fs::weakly_canonical(root / rel, ec);
    auto [root_end, _] = std::mismatch(root.begin(), root.end(), file.begin(), file.end());
    if (ec || root_end != root.end() || !fs::is_regular_file(file, ec)) {
        res.result(bhttp::status::not_found);
        return res;
    }
    std::ifstream in(file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    res.set(bhttp::field::content_type, mime_for(file));
    res.set("X-Content-Type-Options", "nosniff");
    res.body() = ss.str();
    return res;
}

void ApiServer::Impl::run_worker(std::function<void()> fn) {
    {
        std::lock_guard lock(workers_mu);
        ++workers;
    }
    std::thread([self = shared_from_this(), fn = std::move(fn)] {
        try {
            fn();
        } catch (...) {
        }
        std::lock_guard lock(self->workers_mu);
        --self->workers;
        self->workers_cv.notify_all();
    }).detach();
}

void ApiServer::Impl::stop() {
    if (stopping.exchange(true)) return;
    std::promise<void> closed;
    asio::post(ioc, [self = shared_from_this(), &closed] {
        beast::error_code ec;
        self->acceptor.close(ec);
        {
            std::lock_guard lock(self->sessions_mu);
            for (auto& w : self->sessions)
                if (auto s = w.lock()) s->close();
        }
        closed.set_value();
    });
    closed.get_future().wait();
    {
        std::unique_lock lock(workers_mu);
        workers_cv.wait(lock, [&] { return workers == 0; });
    }
    std::list<std::shared_ptr<Conn>> pending;
    {
        std::lock_guard lock(conns_mu);
        pending.swap(conns);
    }
    for (auto& c : pending) {
        if (!c->done) ::shutdown(c->fd, SHUT_RDWR);
        if (c->thread.joinable()) c->thread.join();
    }
    ioc.stop();
    if (io_thread.joinable()) io_thread.join();
    std::lock_guard lock(sessions_mu);
    sessions.clear();
}

ApiServer::ApiServer(Service& service, ApiOptions options)
    : impl_(std::make_shared<Impl>(service, std::move(options))) {
    impl_->start();
}

ApiServer::~ApiServer() {
    stop();
}

net::Endpoint ApiServer::address() const {
    return impl_->bound;
}

const std::string& ApiServer::token() const noexcept {
    return impl_->options.token;
}

std::size_t ApiServer::stream_clients() const {
    return impl_->ws_clients.load();
}

void ApiServer::stop() {
    impl_->stop();
}

} // namespace robin::control
