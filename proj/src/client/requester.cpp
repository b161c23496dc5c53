#include "robin/requester.hpp"

#include "robin/error.hpp"

namespace robin::client {

using Ms = std::chrono::duration<double, std::milli>;

OriginAllowList::OriginAllowList(std::vector<std::string> patterns) : patterns_(std::move(patterns)) {
    for (const auto& p : patterns_)
        if (!intercept::valid_glob(p)) throw Error(ErrorCode::invalid_glob, "invalid origin pattern '" + p + "'");
}

std::string OriginAllowList::canonical_origin(const http::Target& t) {
    std::string host = t.host.find(':') != std::string::npos ? "[" + t.host + "]" : t.host;
    return std::string(http::to_string(t.scheme)) + "://" + http::to_lower(host) + ":" + std::to_string(t.port);
}

bool OriginAllowList::allows(const http::Target& target) const {
    auto canonical = canonical_origin(target);
    auto short_form = target.origin();
    for (const auto& p : patterns_)
        if (intercept::glob_match(p, canonical) || intercept::glob_match(p, short_form)) return true;
    return false;
}

void OriginAllowList::require(const http::Target& target) const {
    if (!allows(target))
        throw Error(ErrorCode::origin_not_allowed,
                    "origin " + canonical_origin(target) + " is not in the allow-list (use --allow-origin)");
}

HttpRequester::HttpRequester(intercept::InterceptHooks* hooks, RequesterOptions options)
    : hooks_(hooks), options_(std::move(options)) {}

ExchangeRecord HttpRequester::fetch(const http::Request& request) {
    ExchangeRecord rec;
    rec.client_addr = "local";
    rec.scheme = request.target.scheme;
    rec.request = request;
    rec.request_body_size = request.body.size();
    rec.t_request_start = Clock::now();
    rec.id = hooks_ ? hooks_->open(rec) : ++local_ids_;

    auto t0 = Clock::now();
    TimePoint t_sent = t0, t_received = t0;
    try {
        std::unique_ptr<net::Stream> stream =
            net::connect_tcp(request.target.host, request.target.port, options_.connect_timeout);
        if (request.target.scheme == http::Scheme::https) {
            std::unique_ptr<net::TcpStream> tcp(static_cast<net::TcpStream*>(stream.release()));
            auto tls = net::tls_connect(std::move(tcp), request.target.host, options_.ca_file, !options_.ca_file.empty());
            TlsInfo info;
            info.upstream_protocol = tls->protocol();
            info.upstream_cipher = tls->cipher();
            rec.tls = info;
            stream = std::move(tls);
        }
        auto form = request.form == http::TargetForm::asterisk ? http::TargetForm::asterisk : http::TargetForm::origin;
        stream->write_all(http::serialize(request, form));
        t_sent = Clock::now();
        stream->set_read_timeout(options_.response_timeout);
        net::BufferedReader in(*stream);
        rec.response = http::read_response(in, request.method);
        t_received = Clock::now();
        rec.response_body_size = rec.response->body.size();
        rec.state = ExchangeState::completed;
    } catch (const Error& e) {
        rec.state = ExchangeState::failed;
        rec.failure_reason = e.what();
        rec.response.reset();
    }
    rec.t_response_done = Clock::now();
    rec.timings.send_ms = Ms(t_sent - t0).count();
    rec.timings.wait_ms = Ms(t_received - t_sent).count();
    rec.timings.receive_ms = 0;
    if (hooks_) {
        hooks_->update(rec.id, [&](ExchangeRecord& r) {
            r.response = rec.response;
            r.response_body_size = rec.response_body_size;
            r.t_response_done = rec.t_response_done;
            r.timings = rec.timings;
            r.tls = rec.tls;
        });
        hooks_->finish(rec.id, rec.state, rec.failure_reason);
    }
    return rec;
}

http::Request make_get(std::string_view url) {
    http::Request r;
    r.method = "GET";
    r.target = http::parse_url(url);
    r.form = http::TargetForm::absolute;
    r.headers.add("Host", r.target.authority());
    r.headers.add("User-Agent", "robin/1.0");
    r.headers.add("Accept", "*/*");
    return r;
}

} // namespace robin::client
