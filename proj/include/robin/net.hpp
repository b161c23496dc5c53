#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

typedef struct ssl_st SSL;
typedef struct ssl_ctx_st SSL_CTX;

namespace robin::net {

using Seconds = std::chrono::duration<double>;

struct Endpoint {
    std::string host;
    std::uint16_t port = 0;

    std::string to_string() const;
};

// Parses "host:port" or "[v6]:port". Throws Error(invalid_argument).
Endpoint parse_endpoint(std::string_view text);

bool is_loopback(std::string_view host);

// Owning file descriptor.
class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(Fd&& other) noexcept : fd_(other.release()) {}
    Fd& operator=(Fd&& other) noexcept;
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    ~Fd();

    int get() const noexcept { return fd_; }
    int release() noexcept;
    explicit operator bool() const noexcept { return fd_ >= 0; }

private:
    int fd_ = -1;
};

// Byte stream abstraction shared by plain TCP and TLS. read_some returns 0 on
// orderly EOF and throws Error(timeout) / Error(network_error) otherwise.
class Stream {
public:
    virtual ~Stream() = default;
    virtual std::size_t read_some(std::span<char> buffer) = 0;
    virtual void write_all(std::string_view bytes) = 0;
    // Half-close / wake any blocked reader. Safe to call from another thread.
    virtual void shutdown() noexcept = 0;
    virtual void set_read_timeout(Seconds timeout) = 0;
    virtual bool is_tls() const noexcept { return false; }
};

class TcpStream final : public Stream {
public:
    explicit TcpStream(Fd fd, std::string peer = {});

    std::size_t read_some(std::span<char> buffer) override;
    void write_all(std::string_view bytes) override;
    void shutdown() noexcept override;
    void set_read_timeout(Seconds timeout) override;

    int fd() const noexcept { return fd_.get(); }
    const std::string& peer() const noexcept { return peer_; }

private:
    Fd fd_;
    std::string peer_;
};

// Connects with a bounded connect timeout. Throws Error(timeout) or
// Error(network_error).
std::unique_ptr<TcpStream> connect_tcp(const std::string& host, std::uint16_t port, Seconds timeout);

class TlsStream final : public Stream {
public:
    // Takes ownership of ssl; tcp must outlive nothing else (owned here).
    TlsStream(std::unique_ptr<TcpStream> tcp, SSL* ssl);
    ~TlsStream() override;
    TlsStream(const TlsStream&) = delete;
    TlsStream& operator=(const TlsStream&) = delete;

    std::size_t read_some(std::span<char> buffer) override;
    void write_all(std::string_view bytes) override;
    void shutdown() noexcept override;
    void set_read_timeout(Seconds timeout) override;
    bool is_tls() const noexcept override { return true; }

    SSL* native() const noexcept { return ssl_; }
    TcpStream& tcp() noexcept { return *tcp_; }
    std::string protocol() const;
    std::string cipher() const;

private:
    std::unique_ptr<TcpStream> tcp_;
    SSL* ssl_;
};

// Client-side TLS handshake on an established TCP stream. When ca_file is
// non-empty the peer chain is verified against it and against `host`.
std::unique_ptr<TlsStream> tls_connect(std::unique_ptr<TcpStream> tcp, const std::string& host,
                                       const std::string& ca_file, bool verify);

// Server-side TLS handshake with a prepared context.
std::unique_ptr<TlsStream> tls_accept(std::unique_ptr<TcpStream> tcp, SSL_CTX* ctx);

// Human-readable OpenSSL error queue (drains it).
std::string openssl_errors();

class Listener {
public:
    // Binds and listens. Throws Error(address_in_use) when the port is taken.
    explicit Listener(const Endpoint& at, int backlog = 512);

    // Blocks until a connection arrives; returns nullptr once closed.
    std::unique_ptr<TcpStream> accept();
    void close() noexcept;
    Endpoint local() const { return local_; }

private:
    Fd fd_;
    Endpoint local_;
};

// Buffered reader over any Stream, with line and exact-length primitives.
class BufferedReader {
public:
    explicit BufferedReader(Stream& stream) : stream_(&stream) {}

    // Reads through CRLF (or bare LF) into `line`, without the terminator.
    // Returns false on EOF before any byte. Throws Error(malformed_request)
    // past max_length and Error(network_error) on EOF mid-line.
    bool read_line(std::string& line, std::size_t max_length = 64 * 1024);
    std::string read_exact(std::size_t n);
    // Reads until EOF.
    std::string read_to_eof();
    // True when at least one byte is available (may block up to the timeout).
    bool fill();
    std::string_view buffered() const noexcept { return std::string_view(buf_).substr(pos_); }
    void consume(std::size_t n) noexcept { pos_ += n; }
    Stream& stream() noexcept { return *stream_; }

private:
    bool more();

    Stream* stream_;
    std::string buf_;
    std::size_t pos_ = 0;
};

} // namespace robin::net
