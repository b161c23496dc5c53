#include "robin/http.hpp"

#include "robin/error.hpp"
#include "robin/net.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstring>

namespace robin::http {

namespace {

[[noreturn]] void malformed(const std::string& what) {
    throw Error(ErrorCode::malformed_request, what);
}

[[noreturn]] void malformed_response(const std::string& what) {
    throw Error(ErrorCode::malformed_response, what);
}

std::string_view trim_ows(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

bool starts_with_icase(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && iequals(s.substr(0, prefix.size()), prefix);
}

// host[:port] or [v6][:port]
void parse_authority(std::string_view authority, std::uint16_t default_port_value, std::string& host,
                     std::uint16_t& port) {
    if (authority.empty()) malformed("empty authority");
    std::string_view port_text;
    if (authority.front() == '[') {
        auto close = authority.find(']');
        if (close == std::string_view::npos) malformed("unterminated IPv6 literal");
        host = std::string(authority.substr(1, close - 1));
        auto rest = authority.substr(close + 1);
        if (!rest.empty()) {
            if (rest.front() != ':') malformed("bad authority");
            port_text = rest.substr(1);
        }
    } else {
        auto colon = authority.rfind(':');
        if (colon != std::string_view::npos) {
            host = std::string(authority.substr(0, colon));
            port_text = authority.substr(colon + 1);
        } else {
            host = std::string(authority);
        }
    }
    if (host.empty()) malformed("empty host");
    for (char c : host) {
        if (static_cast<unsigned char>(c) <= 0x20 || c == '/' || c == '?' || c == '#' || c == '@' || c == 0x7f)
            malformed("invalid host");
    }
    if (port_text.empty()) {
        port = default_port_value;
        return;
    }
    unsigned value = 0;
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), value);
    if (ec != std::errc() || ptr != port_text.data() + port_text.size() || value == 0 || value > 65535)
        malformed("invalid port");
    port = static_cast<std::uint16_t>(value);
}

std::string host_for_authority(const std::string& host) {
    if (host.find(':') != std::string::npos) return "[" + host + "]";
    return host;
}

void parse_headers(net::BufferedReader& in, Headers& headers, const ReadLimits& limits, bool response) {
    std::string line;
    for (;;) {
        if (!in.read_line(line, limits.max_line)) {
            if (response) malformed_response("EOF in headers");
            malformed("EOF in headers");
        }
        if (line.empty()) return;
        if (headers.size() >= limits.max_headers) malformed("too many headers");
        if (line.front() == ' ' || line.front() == '\t') {
            if (response) malformed_response("obsolete header folding");
            malformed("obsolete header folding");
        }
        auto colon = line.find(':');
        std::string_view name = std::string_view(line).substr(0, colon == std::string::npos ? line.size() : colon);
        if (colon == std::string::npos || !is_token(name)) {
            if (response) malformed_response("invalid header line");
            malformed("invalid header line");
        }
        auto value = trim_ows(std::string_view(line).substr(colon + 1));
        headers.add(std::string(name), std::string(value));
    }
}

std::size_t parse_content_length(const Headers& headers, bool response) {
    auto values = headers.get_all("Content-Length");
    std::optional<std::size_t> length;
    for (const auto& v : values) {
        // Comma lists of identical values occur in the wild; accept only those.
        std::string_view rest = v;
        while (!rest.empty()) {
            auto comma = rest.find(',');
            auto part = trim_ows(rest.substr(0, comma));
            std::size_t n = 0;
            auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), n);
            if (part.empty() || ec != std::errc() || ptr != part.data() + part.size()) {
                if (response) malformed_response("invalid Content-Length");
                malformed("invalid Content-Length");
            }
            if (length && *length != n) {
                if (response) malformed_response("conflicting Content-Length");
                malformed("conflicting Content-Length");
            }
            length = n;
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
    }
    return length.value_or(0);
}

bool is_chunked(const Headers& headers) {
    auto values = headers.get_all("Transfer-Encoding");
    if (values.empty()) return false;
    std::string_view last = values.back();
    auto comma = last.rfind(',');
    auto coding = trim_ows(comma == std::string_view::npos ? last : last.substr(comma + 1));
    return iequals(coding, "chunked");
}

std::string read_chunked(net::BufferedReader& in, bool response) {
    std::string body;
    std::string line;
    for (;;) {
        if (!in.read_line(line, 4096)) {
            if (response) malformed_response("EOF in chunked body");
            malformed("EOF in chunked body");
        }
        auto semi = line.find(';');
        auto size_text = trim_ows(std::string_view(line).substr(0, semi));
        std::size_t size = 0;
        auto [ptr, ec] = std::from_chars(size_text.data(), size_text.data() + size_text.size(), size, 16);
        if (size_text.empty() || ec != std::errc() || ptr != size_text.data() + size_text.size()) {
            if (response) malformed_response("invalid chunk size");
            malformed("invalid chunk size");
        }
        if (size == 0) break;
        body += in.read_exact(size);
        if (!in.read_line(line, 2) || !line.empty()) {
            if (response) malformed_response("missing chunk terminator");
            malformed("missing chunk terminator");
        }
    }
    // Trailer section; fields are discarded.
    for (;;) {
        if (!in.read_line(line) || line.empty()) break;
    }
    return body;
}

class MemoryStream final : public net::Stream {
public:
    explicit MemoryStream(std::string_view data) : data_(data) {}
    std::size_t read_some(std::span<char> buffer) override {
        std::size_t n = std::min(buffer.size(), data_.size());
        std::memcpy(buffer.data(), data_.data(), n);
        data_.remove_prefix(n);
        return n;
    }
    void write_all(std::string_view) override {}
    void shutdown() noexcept override {}
    void set_read_timeout(net::Seconds) override {}
    bool exhausted() const { return data_.empty(); }

private:
    std::string_view data_;
};

void append_headers(std::string& out, const Headers& headers) {
    for (const auto& h : headers) {
        out += h.name;
        out += ": ";
        out += h.value;
        out += "\r\n";
    }
    out += "\r\n";
}

template <typename Message>
Headers framed_headers(const Message& m, bool recompute_length) {
    Headers headers = m.headers;
    if (!recompute_length) return headers;
    if (is_chunked(headers)) {
        headers.remove("Content-Length");
    } else if (!m.body.empty() || headers.contains("Content-Length")) {
        headers.set("Content-Length", std::to_string(m.body.size()));
    }
    return headers;
}

void append_body(std::string& out, const Headers& headers, const std::string& body) {
    if (is_chunked(headers)) {
        if (!body.empty()) {
            char size[32];
            auto [ptr, ec] = std::to_chars(size, size + sizeof size, body.size(), 16);
            out.append(size, ptr);
            out += "\r\n";
            out += body;
            out += "\r\n";
        }
        out += "0\r\n\r\n";
    } else {
        out += body;
    }
}

} // namespace

std::string_view to_string(Scheme scheme) noexcept {
    return scheme == Scheme::https ? "https" : "http";
}

std::uint16_t default_port(Scheme scheme) noexcept {
    return scheme == Scheme::https ? 443 : 80;
}

bool iequals(std::string_view a, std::string_view b) noexcept {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        char x = a[i], y = b[i];
        if (x >= 'A' && x <= 'Z') x = static_cast<char>(x - 'A' + 'a');
        if (y >= 'A' && y <= 'Z') y = static_cast<char>(y - 'A' + 'a');
        if (x != y) return false;
    }
    return true;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

std::optional<std::string> Headers::get(std::string_view name) const {
    for (const auto& h : items_)
        if (iequals(h.name, name)) return h.value;
    return std::nullopt;
}

std::vector<std::string> Headers::get_all(std::string_view name) const {
    std::vector<std::string> out;
    for (const auto& h : items_)
        if (iequals(h.name, name)) out.push_back(h.value);
    return out;
}

bool Headers::contains(std::string_view name) const {
    return std::any_of(items_.begin(), items_.end(), [&](const Header& h) { return iequals(h.name, name); });
}

bool Headers::has_token(std::string_view name, std::string_view token) const {
    for (const auto& h : items_) {
        if (!iequals(h.name, name)) continue;
        std::string_view rest = h.value;
        while (!rest.empty()) {
            auto comma = rest.find(',');
            if (iequals(trim_ows(rest.substr(0, comma)), token)) return true;
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
    }
    return false;
}

void Headers::add(std::string name, std::string value) {
    items_.push_back({std::move(name), std::move(value)});
}

void Headers::set(std::string_view name, std::string value) {
    auto it = std::find_if(items_.begin(), items_.end(), [&](const Header& h) { return iequals(h.name, name); });
    if (it == items_.end()) {
        items_.push_back({std::string(name), std::move(value)});
        return;
    }
    it->value = std::move(value);
    auto first = it - items_.begin();
    items_.erase(std::remove_if(items_.begin() + first + 1, items_.end(),
                                [&](const Header& h) { return iequals(h.name, name); }),
                 items_.end());
}

std::size_t Headers::remove(std::string_view name) {
    auto before = items_.size();
    items_.erase(std::remove_if(items_.begin(), items_.end(), [&](const Header& h) { return iequals(h.name, name); }),
                 items_.end());
    return before - items_.size();
}

std::string Target::authority() const {
    std::string out = host_for_authority(host);
    if (port != default_port(scheme)) out += ":" + std::to_string(port);
    return out;
}

std::string Target::origin() const {
    return std::string(to_string(scheme)) + "://" + authority();
}

std::string Target::url() const {
    if (path_and_query == "*") return origin();
    return origin() + path_and_query;
}

Target parse_url(std::string_view url) {
    Target t;
    std::string_view rest;
    if (starts_with_icase(url, "http://")) {
        t.scheme = Scheme::http;
        rest = url.substr(7);
    } else if (starts_with_icase(url, "https://")) {
        t.scheme = Scheme::https;
        rest = url.substr(8);
    } else {
        throw Error(ErrorCode::invalid_argument, "not an http(s) URL: " + std::string(url));
    }
    auto slash = rest.find_first_of("/?#");
    std::string_view authority = rest.substr(0, slash);
    if (auto at = authority.rfind('@'); at != std::string_view::npos) authority.remove_prefix(at + 1);
    try {
        parse_authority(authority, default_port(t.scheme), t.host, t.port);
    } catch (const Error& e) {
        throw Error(ErrorCode::invalid_argument, std::string(e.what()) + ": " + std::string(url));
    }
    std::string_view path = slash == std::string_view::npos ? std::string_view() : rest.substr(slash);
    if (auto hash = path.find('#'); hash != std::string_view::npos) path = path.substr(0, hash);
    if (path.empty() || path.front() != '/') t.path_and_query = "/" + std::string(path);
    else t.path_and_query = std::string(path);
    return t;
}

bool is_token(std::string_view s) noexcept {
    if (s.empty()) return false;
    for (unsigned char c : s) {
        if (std::isalnum(c)) continue;
        if (std::strchr("!#$%&'*+-.^_`|~", c) && c != 0) continue;
        return false;
    }
    return true;
}

namespace {

void validate_headers(const Headers& headers, bool response) {
    for (const auto& h : headers) {
        bool bad_value = std::any_of(h.value.begin(), h.value.end(),
                                     [](char c) { return c == '\r' || c == '\n' || c == '\0'; });
        if (!is_token(h.name) || bad_value) {
            std::string msg = "invalid header field: " + h.name;
            if (response) malformed_response(msg);
            malformed(msg);
        }
    }
}

} // namespace

void validate(const Request& r) {
    if (!is_token(r.method)) malformed("invalid method");
    if (r.version != "HTTP/1.1" && r.version != "HTTP/1.0") malformed("unsupported version " + r.version);
    if (r.target.host.empty()) malformed("empty host");
    if (r.target.port == 0) malformed("invalid port");
    const auto& p = r.target.path_and_query;
    if (!(p.starts_with("/") || (p == "*" && r.method == "OPTIONS")) && r.method != "CONNECT")
        malformed("path must begin with '/'");
    if (std::any_of(p.begin(), p.end(), [](unsigned char c) { return c <= 0x20 || c == 0x7f; }))
        malformed("invalid character in request target");
    validate_headers(r.headers, false);
}

void validate(const Response& r) {
    if (r.status < 100 || r.status > 599) malformed_response("status out of range");
    if (r.version != "HTTP/1.1" && r.version != "HTTP/1.0") malformed_response("unsupported version");
    if (r.reason.find_first_of("\r\n") != std::string::npos) malformed_response("invalid reason phrase");
    validate_headers(r.headers, true);
}

namespace {

std::string request_line(const Request& r, TargetForm form) {
    std::string out = r.method + " ";
    switch (form) {
    case TargetForm::origin: out += r.target.path_and_query; break;
    case TargetForm::absolute: out += r.target.url(); break;
    case TargetForm::authority: out += host_for_authority(r.target.host) + ":" + std::to_string(r.target.port); break;
    case TargetForm::asterisk: out += "*"; break;
    }
    out += " " + r.version + "\r\n";
    return out;
}

std::string status_line(const Response& r) {
    return r.version + " " + std::to_string(r.status) + " " + r.reason + "\r\n";
}

} // namespace

std::string serialize_head(const Request& r, TargetForm form) {
    std::string out = request_line(r, form);
    append_headers(out, r.headers);
    return out;
}

std::string serialize_head(const Response& r) {
    std::string out = status_line(r);
    append_headers(out, r.headers);
    return out;
}

std::string serialize(const Request& r, TargetForm form, bool recompute_length) {
    Headers headers = framed_headers(r, recompute_length);
    std::string out = request_line(r, form);
    append_headers(out, headers);
    append_body(out, headers, r.body);
    return out;
}

std::string serialize(const Response& r, bool recompute_length) {
    Headers headers = framed_headers(r, recompute_length);
    std::string out = status_line(r);
    append_headers(out, headers);
    append_body(out, headers, r.body);
    return out;
}

std::optional<Request> read_request_head(net::BufferedReader& in, const Target* tunnel, const ReadLimits& limits) {
    std::string line;
    // Tolerate stray CRLFs between pipelined requests.
    do {
        if (!in.read_line(line, limits.max_line)) return std::nullopt;
    } while (line.empty());

    auto sp1 = line.find(' ');
    auto sp2 = sp1 == std::string::npos ? std::string::npos : line.find(' ', sp1 + 1);
    if (sp1 == std::string::npos || sp2 == std::string::npos || line.find(' ', sp2 + 1) != std::string::npos)
        malformed("malformed request line");

    Request r;
    r.method = line.substr(0, sp1);
    std::string target = line.substr(sp1 + 1, sp2 - sp1 - 1);
    r.version = line.substr(sp2 + 1);
    if (!is_token(r.method)) malformed("invalid method");
    if (r.version != "HTTP/1.1" && r.version != "HTTP/1.0") malformed("unsupported version");
    if (target.empty()) malformed("empty request target");
    if (std::any_of(target.begin(), target.end(), [](unsigned char c) { return c <= 0x20 || c == 0x7f; }))
        malformed("invalid character in request target");

    parse_headers(in, r.headers, limits, false);

    if (r.method == "CONNECT") {
        r.form = TargetForm::authority;
        r.target.scheme = Scheme::https;
        parse_authority(target, 443, r.target.host, r.target.port);
        r.target.path_and_query = "/";
        return r;
    }
    if (starts_with_icase(target, "http://") || starts_with_icase(target, "https://")) {
        r.form = TargetForm::absolute;
        try {
            r.target = parse_url(target);
        } catch (const Error& e) {
            malformed(e.what());
        }
    } else if (target.front() == '/' || target == "*") {
        if (target == "*" && r.method != "OPTIONS") malformed("asterisk form requires OPTIONS");
        r.form = target == "*" ? TargetForm::asterisk : TargetForm::origin;
        if (tunnel) {
            r.target.scheme = tunnel->scheme;
            r.target.host = tunnel->host;
            r.target.port = tunnel->port;
        } else {
            auto host = r.headers.get("Host");
            if (!host || host->empty()) malformed("origin-form request without Host");
            r.target.scheme = Scheme::http;
            parse_authority(*host, 80, r.target.host, r.target.port);
        }
        r.target.path_and_query = target;
    } else {
        malformed("unsupported request target");
    }
    return r;
}

void read_request_body(net::BufferedReader& in, Request& r) {
    if (is_chunked(r.headers)) {
        r.framing = Framing::chunked;
        r.body = read_chunked(in, false);
    } else if (r.headers.contains("Transfer-Encoding")) {
        malformed("unsupported transfer coding");
    } else if (r.headers.contains("Content-Length")) {
        r.framing = Framing::content_length;
        r.body = in.read_exact(parse_content_length(r.headers, false));
    } else {
        r.framing = Framing::none;
    }
}

std::optional<Request> read_request(net::BufferedReader& in, const Target* tunnel, const ReadLimits& limits) {
    auto r = read_request_head(in, tunnel, limits);
    if (!r) return r;
    if (r->method != "CONNECT") read_request_body(in, *r);
    return r;
}

bool body_allowed(int status, std::string_view request_method) noexcept {
    if (request_method == "HEAD") return false;
    if (status < 200 || status == 204 || status == 304) return false;
    return true;
}

Response read_response(net::BufferedReader& in, std::string_view request_method) {
    ReadLimits limits;
    for (;;) {
        std::string line;
        if (!in.read_line(line, limits.max_line)) throw Error(ErrorCode::network_error, "upstream closed before response");
        Response r;
        auto sp1 = line.find(' ');
        if (sp1 == std::string::npos) malformed_response("malformed status line");
        r.version = line.substr(0, sp1);
        if (r.version != "HTTP/1.1" && r.version != "HTTP/1.0") malformed_response("unsupported version");
        auto sp2 = line.find(' ', sp1 + 1);
        std::string code = line.substr(sp1 + 1, sp2 == std::string::npos ? std::string::npos : sp2 - sp1 - 1);
        if (code.size() != 3 || !std::all_of(code.begin(), code.end(), [](char c) { return c >= '0' && c <= '9'; }))
            malformed_response("malformed status code");
        r.status = std::stoi(code);
        if (r.status < 100) malformed_response("status out of range");
        r.reason = sp2 == std::string::npos ? std::string() : line.substr(sp2 + 1);
        parse_headers(in, r.headers, limits, true);

        if (r.status >= 100 && r.status < 200 && r.status != 101) continue;

        if (!body_allowed(r.status, request_method)) {
            r.framing = Framing::none;
        } else if (is_chunked(r.headers)) {
            r.framing = Framing::chunked;
            r.body = read_chunked(in, true);
        } else if (r.headers.contains("Content-Length")) {
            r.framing = Framing::content_length;
            r.body = in.read_exact(parse_content_length(r.headers, true));
        } else {
            r.framing = Framing::until_close;
            r.body = in.read_to_eof();
        }
        return r;
    }
}

Request parse_request(std::string_view raw, Scheme default_scheme) {
    MemoryStream stream(raw);
    net::BufferedReader in(stream);
    Target tunnel_storage;
    const Target* tunnel = nullptr;
    // For https templates the authority comes from Host; emulate a tunnel.
    if (default_scheme == Scheme::https) {
        MemoryStream probe(raw);
        net::BufferedReader probe_in(probe);
        auto head = read_request_head(probe_in, nullptr);
        if (head && head->form == TargetForm::origin) {
            tunnel_storage = head->target;
            tunnel_storage.scheme = Scheme::https;
            auto host = head->headers.get("Host");
            if (host && host->find(':') == std::string::npos) tunnel_storage.port = 443;
            tunnel = &tunnel_storage;
        }
    }
    std::optional<Request> r;
    try {
        r = read_request(in, tunnel);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::network_error) malformed(std::string("truncated request: ") + e.what());
        throw;
    }
    if (!r) malformed("empty request");
    if (in.buffered().size() > 0 || !stream.exhausted()) malformed("trailing bytes after request");
    return *r;
}

Response parse_response(std::string_view raw, std::string_view request_method) {
    MemoryStream stream(raw);
    net::BufferedReader in(stream);
    try {
        return read_response(in, request_method);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::network_error) malformed_response(std::string("truncated response: ") + e.what());
        throw;
    }
}

void strip_hop_by_hop(Headers& headers) {
    std::vector<std::string> named;
    for (const auto& value : headers.get_all("Connection")) {
        std::string_view rest = value;
        while (!rest.empty()) {
            auto comma = rest.find(',');
            auto token = trim_ows(rest.substr(0, comma));
            if (!token.empty()) named.emplace_back(token);
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
    }
    for (const auto& n : named) {
        // Framing headers are handled separately and never removed here.
        if (iequals(n, "Transfer-Encoding") || iequals(n, "Content-Length")) continue;
        headers.remove(n);
    }
    headers.remove("Connection");
    headers.remove("Proxy-Connection");
    headers.remove("Keep-Alive");
    headers.remove("Proxy-Authorization");
}

} // namespace robin::http
