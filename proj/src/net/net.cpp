#include "robin/net.hpp"

#include "robin/error.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/err.h>
#include <openssl/ssl.h>
#include <openssl/x509v3.h>

#include <cerrno>
#include <cstring>
#include <mutex>
#include <tuple>
#include <vector>

namespace robin::net {

namespace {

std::string sys_error(const char* what) {
    return std::string(what) + ": " + std::strerror(errno);
}

std::string format_addr(const sockaddr_storage& ss) {
    char host[INET6_ADDRSTRLEN] = {};
    std::uint16_t port = 0;
    if (ss.ss_family == AF_INET) {
        const auto* in = reinterpret_cast<const sockaddr_in*>(&ss);
        ::inet_ntop(AF_INET, &in->sin_addr, host, sizeof host);
        port = ntohs(in->sin_port);
        return std::string(host) + ":" + std::to_string(port);
    }
    const auto* in6 = reinterpret_cast<const sockaddr_in6*>(&ss);
    ::inet_ntop(AF_INET6, &in6->sin6_addr, host, sizeof host);
    port = ntohs(in6->sin6_port);
    return "[" + std::string(host) + "]:" + std::to_string(port);
}

void set_timeout(int fd, int option, Seconds timeout) {
    timeval tv{};
    auto us = std::chrono::duration_cast<std::chrono::microseconds>(timeout).count();
    if (us <= 0) us = 1;
    tv.tv_sec = static_cast<time_t>(us / 1000000);
    tv.tv_usec = static_cast<suseconds_t>(us % 1000000);
    ::setsockopt(fd, SOL_SOCKET, option, &tv, sizeof tv);
}

} // namespace

std::string Endpoint::to_string() const {
    if (host.find(':') != std::string::npos) return "[" + host + "]:" + std::to_string(port);
    return host + ":" + std::to_string(port);
}

Endpoint parse_endpoint(std::string_view text) {
    Endpoint ep;
    std::string_view port_part;
    if (!text.empty() && text.front() == '[') {
        auto close = text.find(']');
        if (close == std::string_view::npos || close + 1 >= text.size() || text[close + 1] != ':')
            throw Error(ErrorCode::invalid_argument, "bad endpoint: " + std::string(text));
        ep.host = std::string(text.substr(1, close - 1));
        port_part = text.substr(close + 2);
    } else {
        auto colon = text.rfind(':');
        if (colon == std::string_view::npos)
            throw Error(ErrorCode::invalid_argument, "endpoint needs host:port: " + std::string(text));
        ep.host = std::string(text.substr(0, colon));
        port_part = text.substr(colon + 1);
    }
    if (ep.host.empty() || port_part.empty() || port_part.size() > 5)
        throw Error(ErrorCode::invalid_argument, "bad endpoint: " + std::string(text));
    unsigned long port = 0;
    for (char c : port_part) {
        if (c < '0' || c > '9') throw Error(ErrorCode::invalid_argument, "bad port: " + std::string(text));
        port = port * 10 + static_cast<unsigned long>(c - '0');
    }
    if (port > 65535) throw Error(ErrorCode::invalid_argument, "port out of range: " + std::string(text));
    ep.port = static_cast<std::uint16_t>(port);
    return ep;
}

bool is_loopback(std::string_view host) {
    if (host == "localhost" || host == "::1") return true;
    in_addr addr{};
    std::string h(host);
    if (::inet_pton(AF_INET, h.c_str(), &addr) == 1) return (ntohl(addr.s_addr) >> 24) == 127;
    return false;
}

Fd& Fd::operator=(Fd&& other) noexcept {
    if (this != &other) {
        if (fd_ >= 0) ::close(fd_);
        fd_ = other.release();
    }
    return *this;
}

Fd::~Fd() {
    if (fd_ >= 0) ::close(fd_);
}

int Fd::release() noexcept {
    int fd = fd_;
    fd_ = -1;
    return fd;
}

TcpStream::TcpStream(Fd fd, std::string peer) : fd_(std::move(fd)), peer_(std::move(peer)) {
    int one = 1;
    ::setsockopt(fd_.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

std::size_t TcpStream::read_some(std::span<char> buffer) {
    for (;;) {
        ssize_t n = ::recv(fd_.get(), buffer.data(), buffer.size(), 0);
        if (n >= 0) return static_cast<std::size_t>(n);
        if (errno == EINTR) continue;
        if (errno == EAGAIN || errno == EWOULDBLOCK) throw Error(ErrorCode::timeout, "read timed out");
        throw Error(ErrorCode::network_error, sys_error("recv"));
    }
}

void TcpStream::write_all(std::string_view bytes) {
    while (!bytes.empty()) {
        ssize_t n = ::send(fd_.get(), bytes.data(), bytes.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            if (errno == EAGAIN || errno == EWOULDBLOCK) throw Error(ErrorCode::timeout, "write timed out");
            throw Error(ErrorCode::network_error, sys_error("send"));
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
}

void TcpStream::shutdown() noexcept {
    if (fd_) ::shutdown(fd_.get(), SHUT_RDWR);
}

void TcpStream::set_read_timeout(Seconds timeout) {
    set_timeout(fd_.get(), SO_RCVTIMEO, timeout);
}

std::unique_ptr<TcpStream> connect_tcp(const std::string& host, std::uint16_t port, Seconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* result = nullptr;
    std::string service = std::to_string(port);
    std::string lookup = host;
    if (lookup.size() > 2 && lookup.front() == '[' && lookup.back() == ']') lookup = lookup.substr(1, lookup.size() - 2);
    int rc = ::getaddrinfo(lookup.c_str(), service.c_str(), &hints, &result);
    if (rc != 0) throw Error(ErrorCode::network_error, "resolve " + host + ": " + ::gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(result, &::freeaddrinfo);

    std::string last_error = "no addresses";
    bool timed_out = false;
    auto timeout_ms = static_cast<int>(std::chrono::duration_cast<std::chrono::milliseconds>(timeout).count());
    for (addrinfo* ai = result; ai; ai = ai->ai_next) {
        Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
        if (!fd) {
            last_error = sys_error("socket");
            continue;
        }
        int flags = ::fcntl(fd.get(), F_GETFL, 0);
        ::fcntl(fd.get(), F_SETFL, flags | O_NONBLOCK);
        rc = ::connect(fd.get(), ai->ai_addr, ai->ai_addrlen);
        if (rc < 0 && errno != EINPROGRESS) {
            last_error = sys_error("connect");
            continue;
        }
        if (rc < 0) {
            pollfd pfd{fd.get(), POLLOUT, 0};
            int ready;
            do {
                ready = ::poll(&pfd, 1, timeout_ms);
            } while (ready < 0 && errno == EINTR);
            if (ready == 0) {
                timed_out = true;
                last_error = "connect timed out";
                continue;
            }
            int err = 0;
            socklen_t len = sizeof err;
            ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
            if (err != 0) {
                errno = err;
                last_error = sys_error("connect");
                continue;
            }
        }
        ::fcntl(fd.get(), F_SETFL, flags);
        auto stream = std::make_unique<TcpStream>(std::move(fd), host + ":" + service);
        stream->set_read_timeout(timeout);
        set_timeout(stream->fd(), SO_SNDTIMEO, timeout);
        return stream;
    }
    throw Error(timed_out ? ErrorCode::timeout : ErrorCode::network_error,
                "connect " + host + ":" + service + ": " + last_error);
}

std::string openssl_errors() {
    std::string out;
    while (unsigned long e = ERR_get_error()) {
        char buf[256];
        ERR_error_string_n(e, buf, sizeof buf);
        if (!out.empty()) out += "; ";
        out += buf;
    }
    return out.empty() ? "unknown TLS error" : out;
}

TlsStream::TlsStream(std::unique_ptr<TcpStream> tcp, SSL* ssl) : tcp_(std::move(tcp)), ssl_(ssl) {}

TlsStream::~TlsStream() {
    if (ssl_) {
        SSL_shutdown(ssl_);
        SSL_free(ssl_);
    }
}

std::size_t TlsStream::read_some(std::span<char> buffer) {
    ERR_clear_error();
    int n = SSL_read(ssl_, buffer.data(), static_cast<int>(std::min<std::size_t>(buffer.size(), 1 << 30)));
    if (n > 0) return static_cast<std::size_t>(n);
    int err = SSL_get_error(ssl_, n);
    if (err == SSL_ERROR_ZERO_RETURN) return 0;
    if (err == SSL_ERROR_WANT_READ || err == SSL_ERROR_WANT_WRITE ||
        (err == SSL_ERROR_SYSCALL && (errno == EAGAIN || errno == EWOULDBLOCK)))
        throw Error(ErrorCode::timeout, "TLS read timed out");
    // Peers that close the TCP connection without close_notify.
    if (err == SSL_ERROR_SYSCALL && ERR_peek_error() == 0) return 0;
    if (err == SSL_ERROR_SSL && ERR_GET_REASON(ERR_peek_error()) == SSL_R_UNEXPECTED_EOF_WHILE_READING) {
        ERR_clear_error();
        return 0;
    }
    throw Error(ErrorCode::network_error, "TLS read: " + openssl_errors());
}

void TlsStream::write_all(std::string_view bytes) {
    while (!bytes.empty()) {
        ERR_clear_error();
        int n = SSL_write(ssl_, bytes.data(), static_cast<int>(std::min<std::size_t>(bytes.size(), 1 << 30)));
        if (n <= 0) {
            int err = SSL_get_error(ssl_, n);
            if (err == SSL_ERROR_WANT_WRITE || err == SSL_ERROR_WANT_READ)
                throw Error(ErrorCode::timeout, "TLS write timed out");
            throw Error(ErrorCode::network_error, "TLS write: " + openssl_errors());
        }
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
}

void TlsStream::shutdown() noexcept {
    tcp_->shutdown();
}

void TlsStream::set_read_timeout(Seconds timeout) {
    tcp_->set_read_timeout(timeout);
}

std::string TlsStream::protocol() const {
    return SSL_get_version(ssl_);
}

std::string TlsStream::cipher() const {
    const char* name = SSL_get_cipher_name(ssl_);
    return name ? name : "";
}

namespace {

SSL_CTX* client_ctx(const std::string& ca_file, bool verify) {
    // One context per (ca_file, verify) pair; contexts are thread safe once built.
    static std::mutex mu;
    static std::vector<std::tuple<std::string, bool, SSL_CTX*>> cache;
    std::lock_guard lock(mu);
    for (auto& [file, v, ctx] : cache)
        if (file == ca_file && v == verify) return ctx;
    SSL_CTX* ctx = SSL_CTX_new(TLS_client_method());
    if (!ctx) throw Error(ErrorCode::internal, "SSL_CTX_new: " + openssl_errors());
    SSL_CTX_set_min_proto_version(ctx, TLS1_2_VERSION);
    if (verify) {
        if (!ca_file.empty()) {
            if (SSL_CTX_load_verify_locations(ctx, ca_file.c_str(), nullptr) != 1) {
                std::string e = openssl_errors();
                SSL_CTX_free(ctx);
                throw Error(ErrorCode::io_error, "load CA file " + ca_file + ": " + e);
            }
        } else {
            SSL_CTX_set_default_verify_paths(ctx);
        }
        SSL_CTX_set_verify(ctx, SSL_VERIFY_PEER, nullptr);
    } else {
        SSL_CTX_set_verify(ctx, SSL_VERIFY_NONE, nullptr);
    }
    static const unsigned char alpn[] = {8, 'h', 't', 't', 'p', '/', '1', '.', '1'};
    SSL_CTX_set_alpn_protos(ctx, alpn, sizeof alpn);
    cache.emplace_back(ca_file, verify, ctx);
    return ctx;
}

bool is_ip_literal(const std::string& host) {
    in_addr a4{};
    in6_addr a6{};
    return ::inet_pton(AF_INET, host.c_str(), &a4) == 1 || ::inet_pton(AF_INET6, host.c_str(), &a6) == 1;
}

} // namespace

std::unique_ptr<TlsStream> tls_connect(std::unique_ptr<TcpStream> tcp, const std::string& host,
                                       const std::string& ca_file, bool verify) {
    SSL* ssl = SSL_new(client_ctx(ca_file, verify));
    if (!ssl) throw Error(ErrorCode::internal, "SSL_new: " + openssl_errors());
    SSL_set_fd(ssl, tcp->fd());
    if (!is_ip_literal(host)) SSL_set_tlsext_host_name(ssl, host.c_str());
    if (verify) {
        X509_VERIFY_PARAM* param = SSL_get0_param(ssl);
        if (is_ip_literal(host))
            X509_VERIFY_PARAM_set1_ip_asc(param, host.c_str());
        else
            X509_VERIFY_PARAM_set1_host(param, host.c_str(), 0);
    }
    auto stream = std::make_unique<TlsStream>(std::move(tcp), ssl);
    ERR_clear_error();
    if (SSL_connect(ssl) != 1) {
        long vr = SSL_get_verify_result(ssl);
        std::string reason = openssl_errors();
        if (vr != X509_V_OK) reason += std::string(" (verify: ") + X509_verify_cert_error_string(vr) + ")";
        throw Error(ErrorCode::upstream_tls_failure, "TLS handshake with " + host + " failed: " + reason);
    }
    return stream;
}

std::unique_ptr<TlsStream> tls_accept(std::unique_ptr<TcpStream> tcp, SSL_CTX* ctx) {
    SSL* ssl = SSL_new(ctx);
    if (!ssl) throw Error(ErrorCode::internal, "SSL_new: " + openssl_errors());
    SSL_set_fd(ssl, tcp->fd());
    auto stream = std::make_unique<TlsStream>(std::move(tcp), ssl);
    ERR_clear_error();
    if (SSL_accept(ssl) != 1) {
        unsigned long e = ERR_peek_error();
        std::string reason = openssl_errors();
        // Alerts received from the client (unknown_ca, bad_certificate, ...)
        // mean the client did not accept our leaf.
        int lib_reason = ERR_GET_REASON(e);
        bool rejected = lib_reason == SSL_R_TLSV1_ALERT_UNKNOWN_CA || lib_reason == SSL_R_SSLV3_ALERT_BAD_CERTIFICATE ||
                        lib_reason == SSL_R_SSLV3_ALERT_CERTIFICATE_UNKNOWN ||
                        lib_reason == SSL_R_TLSV1_ALERT_DECRYPT_ERROR;
        throw Error(rejected ? ErrorCode::client_rejects_cert : ErrorCode::network_error,
                    "client TLS handshake failed: " + reason);
    }
    return stream;
}

Listener::Listener(const Endpoint& at, int backlog) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE | AI_NUMERICHOST;
    addrinfo* result = nullptr;
    std::string service = std::to_string(at.port);
    std::string host = at.host;
    if (host == "localhost") host = "127.0.0.1";
    int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &result);
    if (rc != 0) throw Error(ErrorCode::invalid_argument, "listen address " + at.to_string() + ": " + ::gai_strerror(rc));
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(result, &::freeaddrinfo);

    Fd fd(::socket(result->ai_family, result->ai_socktype | SOCK_CLOEXEC, result->ai_protocol));
    if (!fd) throw Error(ErrorCode::network_error, sys_error("socket"));
    int one = 1;
    ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd.get(), result->ai_addr, result->ai_addrlen) < 0) {
        if (errno == EADDRINUSE) throw Error(ErrorCode::address_in_use, "address in use: " + at.to_string());
        throw Error(ErrorCode::network_error, sys_error("bind"));
    }
    if (::listen(fd.get(), backlog) < 0) throw Error(ErrorCode::network_error, sys_error("listen"));
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(fd.get(), reinterpret_cast<sockaddr*>(&ss), &len);
    local_ = parse_endpoint(format_addr(ss));
    fd_ = std::move(fd);
}

std::unique_ptr<TcpStream> Listener::accept() {
    for (;;) {
        int listen_fd = fd_.get();
        if (listen_fd < 0) return nullptr;
        sockaddr_storage ss{};
        socklen_t len = sizeof ss;
        int fd = ::accept4(listen_fd, reinterpret_cast<sockaddr*>(&ss), &len, SOCK_CLOEXEC);
        if (fd >= 0) return std::make_unique<TcpStream>(Fd(fd), format_addr(ss));
        if (errno == EINTR || errno == ECONNABORTED) continue;
        if (errno == EMFILE || errno == ENFILE) {
            ::usleep(10000);
            continue;
        }
        return nullptr;
    }
}

void Listener::close() noexcept {
    if (fd_) {
        ::shutdown(fd_.get(), SHUT_RDWR);
        // Closing is deferred to the destructor so a concurrent accept()
        // never observes a recycled descriptor.
    }
}

bool BufferedReader::more() {
    if (pos_ > 0 && pos_ == buf_.size()) {
        buf_.clear();
        pos_ = 0;
    }
    char chunk[16 * 1024];
    std::size_t n = stream_->read_some(chunk);
    if (n == 0) return false;
    buf_.append(chunk, n);
    return true;
}

bool BufferedReader::fill() {
    if (pos_ < buf_.size()) return true;
    return more();
}

bool BufferedReader::read_line(std::string& line, std::size_t max_length) {
    std::size_t scanned = pos_;
    for (;;) {
        auto nl = buf_.find('\n', scanned);
        if (nl != std::string::npos) {
            std::size_t end = nl;
            if (end > pos_ && buf_[end - 1] == '\r') --end;
            line.assign(buf_, pos_, end - pos_);
            pos_ = nl + 1;
            return true;
        }
        if (buf_.size() - pos_ > max_length) throw Error(ErrorCode::malformed_request, "line too long");
        std::size_t pending = buf_.size() - pos_;
        if (!more()) {
            if (pending == 0) return false;
            throw Error(ErrorCode::network_error, "connection closed mid-line");
        }
        scanned = pos_ + pending;
    }
}

std::string BufferedReader::read_exact(std::size_t n) {
    std::string out;
    out.reserve(std::min<std::size_t>(n, 1 << 20));
    while (out.size() < n) {
        if (pos_ == buf_.size() && !more()) throw Error(ErrorCode::network_error, "connection closed mid-body");
        std::size_t take = std::min(n - out.size(), buf_.size() - pos_);
        out.append(buf_, pos_, take);
        pos_ += take;
    }
    return out;
}

std::string BufferedReader::read_to_eof() {
    std::string out(buf_, pos_);
    pos_ = buf_.size();
    char chunk[16 * 1024];
    for (;;) {
        std::size_t n = stream_->read_some(chunk);
        if (n == 0) break;
        out.append(chunk, n);
    }
    return out;
}

} // namespace robin::net
