#include "stream_client.hpp"

#include "robin/error.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

namespace robin::testing {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using json = nlohmann::json;

struct StreamClient::Impl {
    asio::io_context ioc;
    websocket::stream<tcp::socket> ws{ioc};
    std::thread reader;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<json> frames;
    // Frames skipped by call() and next_of(), served before new ones.
    std::deque<json> held;
    bool closed = false;
    std::mutex write_mu;
};

StreamClient::StreamClient(const net::Endpoint& api, const std::string& token) : impl_(std::make_unique<Impl>()) {
    tcp::endpoint ep(asio::ip::make_address(api.host), api.port);
    beast::get_lowest_layer(impl_->ws).connect(ep);
    std::string target = "/api/stream";
    if (!token.empty()) target += "?token=" + token;
    impl_->ws.handshake(api.to_string(), target);
    impl_->reader = std::thread([impl = impl_.get()] {
        for (;;) {
            beast::flat_buffer buf;
            beast::error_code ec;
            impl->ws.read(buf, ec);
            std::lock_guard lock(impl->mu);
            if (ec) {
                impl->closed = true;
                impl->cv.notify_all();
                return;
            }
            try {
                impl->frames.push_back(json::parse(beast::buffers_to_string(buf.data())));
            } catch (const json::exception&) {
                impl->frames.push_back(json{{"type", "unparseable"}});
            }
            impl->cv.notify_all();
        }
    });
}

StreamClient::~StreamClient() {
    close();
}

void StreamClient::close() {
    if (!impl_ || !impl_->reader.joinable()) return;
    beast::error_code ec;
    {
        std::lock_guard lock(impl_->write_mu);
        beast::get_lowest_layer(impl_->ws).shutdown(tcp::socket::shutdown_both, ec);
    }
    impl_->reader.join();
    beast::get_lowest_layer(impl_->ws).close(ec);
}

void StreamClient::send(const json& message) {
    std::lock_guard lock(impl_->write_mu);
    impl_->ws.text(true);
    impl_->ws.write(asio::buffer(message.dump()));
}

std::optional<json> StreamClient::next(std::chrono::milliseconds timeout) {
    std::unique_lock lock(impl_->mu);
    if (!impl_->held.empty()) {
        auto j = std::move(impl_->held.front());
        impl_->held.pop_front();
        return j;
    }
    if (!impl_->cv.wait_for(lock, timeout, [&] { return !impl_->frames.empty() || impl_->closed; })) return std::nullopt;
    if (impl_->frames.empty()) return std::nullopt;
    auto j = std::move(impl_->frames.front());
    impl_->frames.pop_front();
    return j;
}

std::optional<json> StreamClient::next_of(const std::string& type, std::chrono::milliseconds timeout) {
    auto until = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(until - std::chrono::steady_clock::now());
        if (left.count() <= 0) return std::nullopt;
        auto f = next(left);
        if (!f) return std::nullopt;
        if ((*f)["type"] == type) return f;
    }
}

json StreamClient::call(const std::string& type, const json& payload, const std::string& id) {
    send({{"v", 1}, {"type", type}, {"id", id}, {"payload", payload}});
    std::deque<json> skipped;
    auto until = std::chrono::steady_clock::now() + std::chrono::seconds(30);
    for (;;) {
        std::unique_lock lock(impl_->mu);
        if (!impl_->cv.wait_until(lock, until, [&] { return !impl_->frames.empty() || impl_->closed; }) ||
            impl_->frames.empty())
            throw Error(ErrorCode::timeout, "no reply to " + type);
        auto f = std::move(impl_->frames.front());
        impl_->frames.pop_front();
        bool is_reply = (f["type"] == "reply" || f["type"] == "error") && f.value("id", std::string()) == id;
        if (is_reply) {
            for (auto& s : skipped) impl_->held.push_back(std::move(s));
            return f;
        }
        skipped.push_back(std::move(f));
    }
}

} // namespace robin::testing
