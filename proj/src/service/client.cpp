#include "pvp/service/client.hpp"

#include <cstdlib>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "json.hpp"

namespace pvp::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

std::string data_dir_from_env(const std::string& fallback) {
    const char* v = std::getenv("PVP_DATA_DIR");
    return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

HttpClient::HttpClient(std::string host, unsigned short port) : host_(std::move(host)), port_(port) {}

HttpResponse HttpClient::request(const std::string& method, const std::string& target, const std::string& body,
                                 const std::string& content_type) const {
    try {
        net::io_context ioc;
        tcp::resolver resolver(ioc);
        beast::tcp_stream stream(ioc);
        stream.connect(resolver.resolve(host_, std::to_string(port_)));
        http::request<http::string_body> req(http::string_to_verb(method), target, 11);
        req.set(http::field::host, host_);
        req.set(http::field::content_type, content_type);
        req.body() = body;
        req.prepare_payload();
        http::write(stream, req);
        beast::flat_buffer buf;
        http::response_parser<http::string_body> parser;
        parser.body_limit(1ULL << 30);
        http::read(stream, buf, parser);
        auto res = parser.release();
        beast::error_code ec;
        stream.socket().shutdown(tcp::socket::shutdown_both, ec);
        return {res.result_int(), std::string(res[http::field::content_type]), std::move(res.body())};
    } catch (const boost::system::system_error& e) {
        throw Error(ErrorKind::Unavailable, "cannot reach service at " + host_ + ":" + std::to_string(port_) + ": " + e.what());
    }
}

struct StreamClient::Impl {
    net::io_context ioc;
    websocket::stream<tcp::socket> ws{ioc};
    beast::flat_buffer buf;
};

StreamClient::StreamClient(const std::string& host, unsigned short port, const std::string& avatar_id, bool lossy)
    : impl_(std::make_unique<Impl>()) {
    tcp::resolver resolver(impl_->ioc);
    try {
        net::connect(impl_->ws.next_layer(), resolver.resolve(host, std::to_string(port)));
    } catch (const boost::system::system_error& e) {
        throw Error(ErrorKind::Unavailable, std::string("cannot reach service: ") + e.what());
    }
    impl_->ws.read_message_max(64 << 20);
    websocket::response_type res;
    beast::error_code ec;
    impl_->ws.handshake(res, host, "/avatars/" + avatar_id + "/stream" + (lossy ? "?lossy=1" : ""), ec);
    if (ec) {
        std::string detail = res.body();
        try {
            detail = nlohmann::json::parse(res.body()).value("message", detail);
        } catch (const nlohmann::json::exception&) {
        }
        const auto code = res.result_int();
        throw Error(code == 404 ? ErrorKind::NotFound : code == 409 ? ErrorKind::Conflict : ErrorKind::Unavailable,
                    "stream refused (" + std::to_string(code) + "): " + detail);
    }
}

StreamClient::~StreamClient() {
    beast::error_code ec;
    if (impl_->ws.is_open()) impl_->ws.close(websocket::close_code::normal, ec);
}

void StreamClient::send(const ControlState& s) { send_text(control_state_to_json(s)); }

void StreamClient::send_text(const std::string& text) {
    impl_->ws.text(true);
    impl_->ws.write(net::buffer(text));
}

void StreamClient::send_binary(const std::string& bytes) {
    impl_->ws.binary(true);
    impl_->ws.write(net::buffer(bytes));
}

std::variant<FrameMessage, StreamError> StreamClient::receive() {
    impl_->buf.consume(impl_->buf.size());
    impl_->ws.read(impl_->buf);
    const std::string data = beast::buffers_to_string(impl_->buf.data());
    if (impl_->ws.got_binary()) return decode_frame(data);
    const auto j = nlohmann::json::parse(data);
    StreamError e;
    e.message = j.value("error", "");
    if (j.contains("seq") && !j.at("seq").is_null()) e.seq = j.at("seq").get<std::uint64_t>();
    return e;
}

void StreamClient::close() {
    beast::error_code ec;
    impl_->ws.close(websocket::close_code::normal, ec);
}

}  // namespace pvp::service
