#include "robin/proxy.hpp"

#include "robin/error.hpp"

#include <openssl/ssl.h>

#include <atomic>
#include <condition_variable>
#include <list>
#include <thread>

namespace robin::proxy {

using Ms = std::chrono::duration<double, std::milli>;
using intercept::Direction;
using intercept::EditAction;

namespace {

void write_simple(net::Stream& s, int status, std::string_view reason, std::string_view body) {
    http::Response r;
    r.status = status;
    r.reason = std::string(reason);
    r.headers.add("Content-Type", "text/plain; charset=utf-8");
    r.headers.add("Content-Length", std::to_string(body.size()));
    r.headers.add("Connection", "close");
    r.body = std::string(body);
    try {
        s.write_all(http::serialize(r));
    } catch (const Error&) {
    }
}

// Context used to refuse a client handshake with a fatal alert when the
// upstream side of a tunnel could not be established.
SSL_CTX* refusing_ctx() {
    static SSL_CTX* ctx = [] {
        SSL_CTX* c = SSL_CTX_new(TLS_server_method());
        SSL_CTX_set_client_hello_cb(
            c,
            [](SSL*, int* alert, void*) {
                *alert = SSL_AD_HANDSHAKE_FAILURE;
                return SSL_CLIENT_HELLO_ERROR;
            },
            nullptr);
        return c;
    }();
    return ctx;
}

std::string capture(const std::string& body, std::size_t limit, bool& truncated) {
    truncated = body.size() > limit;
    return truncated ? body.substr(0, limit) : body;
}

bool wants_close(const http::Request& req) {
    if (req.headers.has_token("Connection", "close")) return true;
    if (req.version == "HTTP/1.0" && !req.headers.has_token("Connection", "keep-alive")) return true;
    return false;
}

bool response_closes(const http::Response& resp) {
    if (resp.framing == http::Framing::until_close) return true;
    if (resp.headers.has_token("Connection", "close")) return true;
    if (resp.version == "HTTP/1.0" && !resp.headers.has_token("Connection", "keep-alive")) return true;
    return false;
}

// Copies bytes one way until EOF or error, then wakes the other direction.
void pump(net::BufferedReader& from, net::Stream& to, net::Stream& other) {
    try {
        auto pending = from.buffered();
        if (!pending.empty()) {
            to.write_all(pending);
            from.consume(pending.size());
        }
        char buf[16384];
        for (;;) {
            auto n = from.stream().read_some(buf);
            if (n == 0) break;
            to.write_all(std::string_view(buf, n));
        }
    } catch (const Error&) {
    }
    to.shutdown();
    other.shutdown();
}

} // namespace

void validate(const ProxyConfig& c) {
    auto positive = [](net::Seconds s, const char* name) {
        if (!(s.count() > 0)) throw Error(ErrorCode::invalid_argument, std::string(name) + " must be positive");
    };
    positive(c.upstream_connect_timeout, "upstream_connect_timeout");
    positive(c.upstream_response_timeout, "upstream_response_timeout");
    positive(c.idle_timeout, "idle_timeout");
}

RouteResult route_connection(net::BufferedReader& in, net::Stream& client) {
    RouteResult out;
    std::optional<http::Request> head;
    try {
        // Binary garbage (including a bare TLS ClientHello) is refused as
        // soon as the first bytes arrive instead of waiting for a line end.
        if (in.fill()) {
            auto first = in.buffered();
            first = first.substr(0, first.find('\n'));
            for (unsigned char c : first) {
                if ((c < 0x20 && c != '\r' && c != '\t') || c == 0x7f) {
                    write_simple(client, 400, "Bad Request", "not an HTTP request\n");
                    out.reason = "not an HTTP request";
                    return out;
                }
            }
        }
        head = http::read_request_head(in, nullptr);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::malformed_request) {
            write_simple(client, 400, "Bad Request", std::string(e.what()) + "\n");
            out.reason = e.what();
        } else {
            out.reason = e.what();  // timeout or network error: no response
        }
        return out;
    }
    if (!head) {
        out.reason = "connection closed before request";
        return out;
    }
    out.host = head->target.host;
    out.port = head->target.port;
    if (head->method == "CONNECT") {
        try {
            client.write_all("HTTP/1.1 200 Connection Established\r\n\r\n");
        } catch (const Error& e) {
            out.reason = e.what();
            return out;
        }
        out.route = Route::tls_tunnel;
    } else {
        out.route = Route::plain_http;
    }
    out.request = std::move(head);
    return out;
}

struct ProxyHandle::Impl : std::enable_shared_from_this<ProxyHandle::Impl> {
    ProxyConfig config;
    std::shared_ptr<ca::CertAuthority> ca;
    intercept::InterceptHooks* hooks = nullptr;
    std::unique_ptr<net::Listener> listener;
    std::thread acceptor;

    // Streams that stop() may need to wake.
    struct Conn {
        std::mutex mu;
        std::vector<net::Stream*> streams;
        bool killed = false;
        std::atomic<bool> busy{false};  // an exchange is in flight

        void add(net::Stream* s) {
            std::lock_guard lock(mu);
            streams.push_back(s);
            if (killed) s->shutdown();
        }
        void remove(net::Stream* s) {
            std::lock_guard lock(mu);
            std::erase(streams, s);
        }
        void kill() {
            std::lock_guard lock(mu);
            killed = true;
            for (auto* s : streams) s->shutdown();
        }
    };

    mutable std::mutex mu;
    std::condition_variable idle_cv;
    std::list<std::shared_ptr<Conn>> conns;
    std::atomic<bool> stopping{false};
    bool stopped = false;

    void accept_loop();
    void serve(std::unique_ptr<net::TcpStream> tcp, std::shared_ptr<Conn> conn);
    void stop();
};

namespace {

using Conn = ProxyHandle::Impl::Conn;

// Scoped registration of a stream with its connection.
class Registered {
public:
    Registered(Conn& conn, net::Stream* s) : conn_(conn), s_(s) { conn_.add(s_); }
    ~Registered() { conn_.remove(s_); }
    Registered(const Registered&) = delete;
    Registered& operator=(const Registered&) = delete;

private:
    Conn& conn_;
    net::Stream* s_;
};

struct Upstream {
    std::string key;
    std::unique_ptr<net::Stream> stream;
    std::unique_ptr<net::BufferedReader> reader;
    std::string protocol, cipher;
    bool fresh = true;  // no exchange has been completed on it yet
};

std::string upstream_key(const http::Target& t) {
    return std::string(http::to_string(t.scheme)) + "://" + t.host + ":" + std::to_string(t.port);
}

// One client connection. Plain HTTP and decrypted tunnel traffic share
// relay_exchange; only the construction differs.
class Session {
public:
    Session(ProxyHandle::Impl& proxy, Conn& conn, net::Stream& client, net::BufferedReader& in,
            std::string client_addr)
        : proxy_(proxy), conn_(conn), client_(client), in_(in), client_addr_(std::move(client_addr)) {}

    void set_tunnel(http::Target target, TlsInfo tls) {
        tunnel_ = std::move(target);
        tls_ = std::move(tls);
    }
    void adopt_upstream(std::unique_ptr<Upstream> up) {
        upstream_ = std::move(up);
        if (upstream_) conn_.add(upstream_->stream.get());
    }
    ~Session() { drop_upstream(); }

    // Serves requests until the connection should close.
    void run(std::optional<http::Request> first) {
        const auto& cfg = proxy_.config;
        for (;;) {
            std::optional<http::Request> req;
            try {
                if (first) {
                    req = std::move(first);
                    first.reset();
                } else {
                    client_.set_read_timeout(cfg.idle_timeout);
                    req = http::read_request_head(in_, tunnel_ ? &*tunnel_ : nullptr);
                    if (!req) return;
                }
                if (req->method == "CONNECT") {
                    write_simple(client_, 400, "Bad Request", "nested CONNECT is not supported\n");
                    return;
                }
                if (req->headers.has_token("Expect", "100-continue") &&
                    (req->headers.contains("Content-Length") || req->headers.contains("Transfer-Encoding")))
                    client_.write_all("HTTP/1.1 100 Continue\r\n\r\n");
                http::read_request_body(in_, *req);
            } catch (const Error& e) {
                if (e.code() == ErrorCode::malformed_request)
                    write_simple(client_, 400, "Bad Request", std::string(e.what()) + "\n");
                return;
            }
            if (proxy_.stopping) return;
            conn_.busy = true;
            bool keep = relay_exchange(std::move(*req));
            conn_.busy = false;
            if (!keep) return;
        }
    }

private:
    void drop_upstream() {
        if (upstream_) {
            conn_.remove(upstream_->stream.get());
            upstream_.reset();
        }
    }

    Upstream& connect_upstream(const http::Target& target) {
        auto key = upstream_key(target);
        if (upstream_ && upstream_->key == key) return *upstream_;
        drop_upstream();
        const auto& cfg = proxy_.config;
        auto up = std::make_unique<Upstream>();
        up->key = key;
        auto tcp = net::connect_tcp(target.host, target.port, cfg.upstream_connect_timeout);
        if (target.scheme == http::Scheme::https) {
            auto tls = net::tls_connect(std::move(tcp), target.host, cfg.upstream_ca_file, !cfg.upstream_ca_file.empty());
            up->protocol = tls->protocol();
            up->cipher = tls->cipher();
            up->stream = std::move(tls);
        } else {
            up->stream = std::move(tcp);
        }
        up->reader = std::make_unique<net::BufferedReader>(*up->stream);
        adopt_upstream(std::move(up));
        return *upstream_;
    }

    // Returns false when the client connection must be closed.
    bool relay_exchange(http::Request request) {
        auto& hooks = *proxy_.hooks;
        const auto& cfg = proxy_.config;

        ExchangeRecord seed;
        seed.client_addr = client_addr_;
        seed.scheme = request.target.scheme;
        seed.t_request_start = Clock::now();
        seed.request = request;
        seed.request_body_size = request.body.size();
        seed.request.body = capture(request.body, cfg.max_captured_body, seed.request_truncated);
        if (tunnel_) seed.tls = tls_;
        ExchangeId id = hooks.open(std::move(seed));

        // Request hook.
        http::Request outbound = request;
        bool edited_request = false;
        {
            auto v = hooks.intercept(id, Direction::request, request, nullptr);
            if (v.shutdown) {
                hooks.finish(id, ExchangeState::failed, "proxy shutting down");
                return false;
            }
            if (v.kind == EditAction::Kind::drop) {
                hooks.finish(id, ExchangeState::dropped);
                return false;
            }
            if (v.kind == EditAction::Kind::forward_edited) {
                outbound = std::get<http::Request>(v.message);
                edited_request = true;
            }
        }

        http::Request wire = outbound;
        http::strip_hop_by_hop(wire.headers);
        std::string bytes = http::serialize(wire, http::TargetForm::origin, edited_request);

        http::Response response;
        auto t0 = Clock::now();
        TimePoint t_sent{};
        for (int attempt = 0;; ++attempt) {
            bool reused = upstream_ && upstream_->key == upstream_key(outbound.target) && !upstream_->fresh;
            try {
                auto& up = connect_upstream(outbound.target);
                up.stream->write_all(bytes);
                t_sent = Clock::now();
                up.stream->set_read_timeout(cfg.upstream_response_timeout);
                response = http::read_response(*up.reader, outbound.method);
                up.fresh = false;
                break;
            } catch (const Error& e) {
                drop_upstream();
                // A kept-alive upstream may have closed just before reuse.
                if (reused && attempt == 0 && e.code() == ErrorCode::network_error) continue;
                if (e.code() == ErrorCode::timeout) {
                    write_simple(client_, 504, "Gateway Timeout", std::string(e.what()) + "\n");
                    hooks.finish(id, ExchangeState::failed, std::string("upstream timeout: ") + e.what());
                } else {
                    write_simple(client_, 502, "Bad Gateway", std::string(e.what()) + "\n");
                    hooks.finish(id, ExchangeState::failed, e.what());
                }
                return false;
            }
        }
        auto t_received = Clock::now();
        if (outbound.target.scheme == http::Scheme::https && upstream_) {
            tls_.upstream_protocol = upstream_->protocol;
            tls_.upstream_cipher = upstream_->cipher;
        }

        if (response.status == 101) return relay_upgrade(id, response, t0, t_sent, t_received);

        // Response hook.
        http::Response out_resp = response;
        bool edited_response = false;
        {
            auto v = hooks.intercept(id, Direction::response, outbound, &response);
            if (v.shutdown) {
                hooks.finish(id, ExchangeState::failed, "proxy shutting down");
                return false;
            }
            if (v.kind == EditAction::Kind::drop) {
                hooks.finish(id, ExchangeState::dropped);
                return false;
            }
            if (v.kind == EditAction::Kind::forward_edited) {
                out_resp = std::get<http::Response>(v.message);
                edited_response = true;
            }
        }

        bool close = wants_close(request) || response_closes(response);
        if (response_closes(response)) drop_upstream();
        http::Response wire_resp = out_resp;
        http::strip_hop_by_hop(wire_resp.headers);
        bool recompute = edited_response;
        if (out_resp.framing == http::Framing::until_close && !edited_response) {
            // The body was delimited by EOF upstream; the client connection
            // is closed after it as well.
            close = true;
        }
        if (close) wire_resp.headers.add("Connection", "close");
        try {
            client_.write_all(http::serialize(wire_resp, recompute));
        } catch (const Error&) {
            finish_completed(id, response, t0, t_sent, t_received);
            return false;
        }
        finish_completed(id, response, t0, t_sent, t_received);
        return !close;
    }

    void finish_completed(ExchangeId id, const http::Response& response, TimePoint t0, TimePoint t_sent,
                          TimePoint t_received, bool tunneled = false) {
        auto& hooks = *proxy_.hooks;
        auto done = Clock::now();
        std::size_t limit = proxy_.config.max_captured_body;
        hooks.update(id, [&](ExchangeRecord& r) {
            r.response = response;
            r.response_body_size = response.body.size();
            r.response->body = capture(response.body, limit, r.response_truncated);
            r.t_response_done = done;
            r.timings.send_ms = Ms(t_sent - t0).count();
            r.timings.wait_ms = Ms(t_received - t_sent).count();
            r.timings.receive_ms = Ms(done - t_received).count();
            r.tunneled = tunneled;
            if (tunnel_) r.tls = tls_;
        });
        hooks.finish(id, ExchangeState::completed);
    }

    bool relay_upgrade(ExchangeId id, const http::Response& response, TimePoint t0, TimePoint t_sent,
                       TimePoint t_received) {
        http::Response wire = response;
        // Connection/Upgrade must reach the client for a protocol switch.
        try {
            client_.write_all(http::serialize_head(wire));
        } catch (const Error&) {
            finish_completed(id, response, t0, t_sent, t_received, true);
            return false;
        }
        finish_completed(id, response, t0, t_sent, t_received, true);
        auto up = std::move(upstream_);
        client_.set_read_timeout(net::Seconds(0));
        up->stream->set_read_timeout(net::Seconds(0));
        std::thread back([&] { pump(*up->reader, client_, *up->stream); });
        pump(in_, *up->stream, client_);
        back.join();
        conn_.remove(up->stream.get());
        return false;
    }

    ProxyHandle::Impl& proxy_;
    Conn& conn_;
    net::Stream& client_;
    net::BufferedReader& in_;
    std::string client_addr_;
    std::optional<http::Target> tunnel_;
    TlsInfo tls_;
    std::unique_ptr<Upstream> upstream_;
};

// Records a failed tunnel setup as an exchange of its own.
void record_tunnel_failure(intercept::InterceptHooks& hooks, const std::string& client_addr,
                           const http::Request& connect, const std::string& reason) {
    ExchangeRecord seed;
    seed.client_addr = client_addr;
    seed.scheme = http::Scheme::https;
    seed.request = connect;
    seed.t_request_start = Clock::now();
    auto id = hooks.open(std::move(seed));
    hooks.finish(id, ExchangeState::failed, reason);
}

} // namespace

void ProxyHandle::Impl::accept_loop() {
    for (;;) {
        auto tcp = listener->accept();
        if (!tcp) return;
        if (stopping) {
            tcp->shutdown();
            continue;
        }
        auto conn = std::make_shared<Conn>();
        {
            std::lock_guard lock(mu);
            conns.push_back(conn);
        }
        std::thread([self = shared_from_this(), tcp = std::move(tcp), conn]() mutable {
            try {
                self->serve(std::move(tcp), conn);
            } catch (const std::exception&) {
                // A connection failure never takes the proxy down.
            }
            std::lock_guard lock(self->mu);
            self->conns.remove(conn);
            self->idle_cv.notify_all();
        }).detach();
    }
}

void ProxyHandle::Impl::serve(std::unique_ptr<net::TcpStream> tcp, std::shared_ptr<Conn> conn) {
    std::string client_addr = tcp->peer();
    tcp->set_read_timeout(config.idle_timeout);
    // Registered by hand: the TcpStream is handed to the TLS layer below.
    net::Stream* raw_tcp = tcp.get();
    conn->add(raw_tcp);
    struct Unregister {
        Conn& c;
        net::Stream*& s;
        ~Unregister() {
            if (s) c.remove(s);
        }
    } unregister{*conn, raw_tcp};
    net::BufferedReader in(*tcp);
    auto route = route_connection(in, *tcp);
    if (route.route == Route::reject) return;
    if (route.route == Route::plain_http) {
        Session s(*this, *conn, *tcp, in, client_addr);
        s.run(std::move(route.request));
        return;
    }

    // tls_tunnel: connect upstream first so a failure can be reported to
    // the client as a handshake alert instead of a decrypted error page.
    const auto& connect = *route.request;
    auto up = std::make_unique<Upstream>();
    http::Target target{http::Scheme::https, route.host, route.port, "/"};
    up->key = upstream_key(target);
    std::string failure;
    try {
        auto utcp = net::connect_tcp(route.host, route.port, config.upstream_connect_timeout);
        auto tls = net::tls_connect(std::move(utcp), route.host, config.upstream_ca_file,
                                    !config.upstream_ca_file.empty());
        up->protocol = tls->protocol();
        up->cipher = tls->cipher();
        up->stream = std::move(tls);
        up->reader = std::make_unique<net::BufferedReader>(*up->stream);
    } catch (const Error& e) {
        failure = std::string("upstream TLS failure: ") + e.what();
    }
    std::shared_ptr<const ca::LeafCertificate> leaf;
    if (failure.empty()) {
        try {
            leaf = ca->issue_leaf(route.host);
        } catch (const Error& e) {
            failure = std::string("certificate issue failed: ") + e.what();
        }
    }
    conn->remove(raw_tcp);
    raw_tcp = nullptr;
    if (!failure.empty()) {
        try {
            net::tls_accept(std::move(tcp), refusing_ctx());
        } catch (const Error&) {
        }
        record_tunnel_failure(*hooks, client_addr, connect, failure);
        return;
    }

    std::unique_ptr<net::TlsStream> client;
    try {
        client = net::tls_accept(std::move(tcp), leaf->server_ctx.get());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::client_rejects_cert)
            record_tunnel_failure(*hooks, client_addr, connect, std::string("client rejected certificate: ") + e.what());
        return;
    }
    Registered reg_tls(*conn, client.get());
    TlsInfo info;
    if (const char* sni = SSL_get_servername(client->native(), TLSEXT_NAMETYPE_host_name)) info.sni = sni;
    info.client_protocol = client->protocol();
    info.client_cipher = client->cipher();
    info.upstream_protocol = up->protocol;
    info.upstream_cipher = up->cipher;
    info.leaf_serial = leaf->serial_hex;

    client->set_read_timeout(config.idle_timeout);
    net::BufferedReader tin(*client);
    Session s(*this, *conn, *client, tin, client_addr);
    s.set_tunnel(target, info);
    s.adopt_upstream(std::move(up));
    s.run(std::nullopt);
}

void ProxyHandle::Impl::stop() {
    {
        std::lock_guard lock(mu);
        if (stopped) return;
        stopped = true;
    }
    stopping = true;
    listener->close();
    if (acceptor.joinable()) acceptor.join();
    std::unique_lock lock(mu);
    auto drain_until = std::chrono::steady_clock::now() +
                       std::chrono::duration_cast<std::chrono::steady_clock::duration>(config.idle_timeout);
    // Idle keep-alive connections have nothing in flight and are closed at
    // once; busy ones get until the drain deadline.
    while (!conns.empty() && std::chrono::steady_clock::now() < drain_until) {
        for (auto& c : conns)
            if (!c->busy) c->kill();
        idle_cv.wait_for(lock, std::chrono::milliseconds(20));
    }
    for (auto& c : conns) c->kill();
    idle_cv.wait(lock, [&] { return conns.empty(); });
}

ProxyHandle::~ProxyHandle() {
    stop();
}

net::Endpoint ProxyHandle::address() const {
    return impl_->listener->local();
}

void ProxyHandle::stop() {
    impl_->stop();
}

std::size_t ProxyHandle::active_connections() const {
    std::lock_guard lock(impl_->mu);
    return impl_->conns.size();
}

std::unique_ptr<ProxyHandle> start_proxy(const ProxyConfig& config, std::shared_ptr<ca::CertAuthority> ca,
                                         intercept::InterceptHooks& hooks) {
    validate(config);
    if (!ca) throw Error(ErrorCode::ca_unavailable, "certificate authority not initialized");
    auto impl = std::make_shared<ProxyHandle::Impl>();
    impl->config = config;
    impl->ca = std::move(ca);
    impl->hooks = &hooks;
    impl->listener = std::make_unique<net::Listener>(config.listen);
    impl->acceptor = std::thread([raw = impl.get()] { raw->accept_loop(); });
    return std::unique_ptr<ProxyHandle>(new ProxyHandle(std::move(impl)));
}

std::unique_ptr<ProxyHandle> start_proxy(const ProxyConfig& config, intercept::InterceptHooks& hooks) {
    std::shared_ptr<ca::CertAuthority> ca;
    try {
        ca = ca::CertAuthority::init(config.ca_dir);
    } catch (const Error& e) {
        throw Error(ErrorCode::ca_unavailable, std::string("CA unavailable: ") + e.what());
    }
    return start_proxy(config, std::move(ca), hooks);
}

} // namespace robin::proxy
