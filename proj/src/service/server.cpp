#include "pvp/service/server.hpp"

#include <csignal>
#include <deque>
#include <optional>
#include <sstream>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "json.hpp"
#include "pvp/evalkit.hpp"

namespace pvp::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

unsigned status_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument:
        case ErrorKind::ShapeMismatch:
        case ErrorKind::Format: return 400;
        case ErrorKind::NotFound: return 404;
        case ErrorKind::Conflict:
        case ErrorKind::Cancelled: return 409;
        case ErrorKind::Unavailable: return 503;
        case ErrorKind::Numeric:
        case ErrorKind::Internal: return 500;
    }
    return 500;
}

std::string kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid_argument";
        case ErrorKind::ShapeMismatch: return "shape_mismatch";
        case ErrorKind::NotFound: return "not_found";
        case ErrorKind::Conflict: return "conflict";
        case ErrorKind::Format: return "format";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Unavailable: return "unavailable";
        case ErrorKind::Cancelled: return "cancelled";
        case ErrorKind::Internal: return "internal";
    }
    return "internal";
}

namespace {

constexpr std::uint64_t kMaxBody = 1ULL << 30;

struct Target {
    std::vector<std::string> parts;
    std::map<std::string, std::string> query;
};

Target parse_target(const std::string& target) {
    Target t;
    const auto q = target.find('?');
    const std::string path = target.substr(0, q);
    std::stringstream ss(path);
    std::string seg;
    while (std::getline(ss, seg, '/'))
        if (!seg.empty()) t.parts.push_back(seg);
    if (q != std::string::npos) {
        std::stringstream qs(target.substr(q + 1));
        while (std::getline(qs, seg, '&')) {
            const auto eq = seg.find('=');
            t.query[seg.substr(0, eq)] = eq == std::string::npos ? "" : seg.substr(eq + 1);
        }
    }
    return t;
}

HttpReply json_reply(unsigned status, const std::string& body) { return {status, "application/json", body}; }

HttpReply error_reply(ErrorKind kind, const std::string& message) {
    return json_reply(status_for(kind), json{{"error", kind_name(kind)}, {"message", message}}.dump());
}

json record_json(const AvatarRecord& r) { return json::parse(r.to_json()); }

ToyVideoSpec toy_spec_from(const json& j) {
    ToyVideoSpec s;
    static const char* known[] = {"frames", "seed", "texture_amplitude", "expression_amplitude", "expression_tail_amplitude",
                                  "yaw_amplitude", "pitch_amplitude"};
    for (const auto& [k, v] : j.items())
        if (std::find(std::begin(known), std::end(known), k) == std::end(known))
            throw Error(ErrorKind::InvalidArgument, "toy." + k + ": unknown field");
    try {
        s.frames = j.value("frames", s.frames);
        s.seed = j.value("seed", s.seed);
        s.texture_amplitude = j.value("texture_amplitude", s.texture_amplitude);
        s.expression_amplitude = j.value("expression_amplitude", s.expression_amplitude);
        s.expression_tail_amplitude = j.value("expression_tail_amplitude", s.expression_tail_amplitude);
        s.yaw_amplitude = j.value("yaw_amplitude", s.yaw_amplitude);
        s.pitch_amplitude = j.value("pitch_amplitude", s.pitch_amplitude);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("toy: ") + e.what());
    }
    if (s.frames < 2 || s.frames > 100000) throw Error(ErrorKind::InvalidArgument, "toy.frames: must be in [2, 100000]");
    return s;
}

HttpReply create_avatar(AvatarService& svc, const std::string& content_type, const std::string& body) {
    if (content_type.rfind("application/json", 0) == 0) {
        json j;
        try {
            j = json::parse(body);
        } catch (const json::exception&) {
            throw Error(ErrorKind::InvalidArgument, "body: not valid JSON");
        }
        if (!j.is_object() || !j.contains("toy"))
            throw Error(ErrorKind::InvalidArgument, "body: JSON creation requests need a \"toy\" spec");
        for (const auto& [k, v] : j.items())
            if (k != "toy" && k != "image_size") throw Error(ErrorKind::InvalidArgument, k + ": unknown field");
        const int size = j.value("image_size", 64);
        if (size < 24 || size > 512) throw Error(ErrorKind::InvalidArgument, "image_size: must be in [24, 512]");
        const auto& toy = j.at("toy");
        if (!toy.is_object()) throw Error(ErrorKind::InvalidArgument, "toy: expected an object");
        return json_reply(201, svc.create_toy(toy_spec_from(toy), size).to_json());
    }
    return json_reply(201, svc.create_from_upload(body).to_json());
}

std::string ppm_bytes(const Image& img) {
    const auto rgb = to_rgb8(img);
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
    return out;
}

json direction_names(const std::vector<EditDirection>& dirs) {
    json a = json::array();
    for (const auto& d : dirs) a.push_back({{"name", d.name}});
    return json{{"directions", a}};
}

HttpReply route(AvatarService& svc, const std::string& method, const Target& t, const std::string& content_type,
                const std::string& body) {
    const auto& p = t.parts;
    const auto n = p.size();
    if (n == 1 && p[0] == "health" && method == "GET")
        return json_reply(200, json{{"status", "ok"}, {"avatars", svc.store().list().size()}}.dump());
    if (n == 1 && p[0] == "import" && method == "POST") return json_reply(201, svc.import_archive(body).to_json());
    if (n == 0 || p[0] != "avatars") throw Error(ErrorKind::NotFound, "no such endpoint");

    if (n == 1) {
        if (method == "GET") {
            json a = json::array();
            for (const auto& r : svc.store().list()) a.push_back(record_json(r));
            return json_reply(200, json{{"avatars", a}}.dump());
        }
        if (method == "POST") return create_avatar(svc, content_type, body);
    }
    const std::string& id = p[1];
    if (n == 2) {
        if (method == "GET") return json_reply(200, svc.store().get(id).to_json());
        if (method == "DELETE") {
            svc.remove(id);
            return {204, "application/json", ""};
        }
    }
    if (n == 3) {
        const std::string& what = p[2];
        if (what == "pipeline" && method == "POST") {
            svc.start_pipeline(id, body);
            return json_reply(202, svc.progress(id).to_json());
        }
        if (what == "pipeline" && method == "DELETE") {
            svc.cancel_pipeline(id);
            return json_reply(202, svc.progress(id).to_json());
        }
        if (what == "progress" && method == "GET") return json_reply(200, svc.progress(id).to_json());
        if (what == "reset" && method == "POST") return json_reply(200, svc.reset(id).to_json());
        if (what == "directions" && method == "GET") {
            const auto dirs = svc.directions(id);
            if (t.query.count("format") && t.query.at("format") == "pvpd") {
                std::ostringstream os(std::ios::binary);
                write_directions(os, dirs);
                return {200, "application/octet-stream", os.str()};
            }
            return json_reply(200, direction_names(dirs).dump());
        }
        if (what == "directions" && method == "POST") {
            svc.set_directions(id, body);
            return json_reply(200, direction_names(svc.directions(id)).dump());
        }
        if (what == "render" && method == "POST") {
            const auto state = parse_control_state(body);
            const auto img = svc.render(*svc.open(id), state);
            if (t.query.count("format") && t.query.at("format") == "frame")
                return {200, "application/octet-stream", encode_frame(state.seq, img)};
            return {200, "image/x-portable-pixmap", ppm_bytes(img)};
        }
        if (what == "export" && method == "GET") return {200, "application/octet-stream", svc.export_archive(id)};
    }
    if (n == 4 && p[2] == "driving" && method == "POST") {
        svc.save_driving(id, p[3], body);
        return json_reply(201, json{{"name", p[3]}, {"frames", svc.driving(id, p[3]).size()}}.dump());
    }
    throw Error(ErrorKind::NotFound, "no such endpoint: " + method + " /" + [&] {
        std::string s;
        for (std::size_t i = 0; i < n; ++i) s += (i ? "/" : "") + p[i];
        return s;
    }());
}

}  // namespace

HttpReply route_request(AvatarService& svc, const std::string& method, const std::string& target,
                        const std::string& content_type, const std::string& body) {
    try {
        return route(svc, method, parse_target(target), content_type, body);
    } catch (const Error& e) {
        return error_reply(e.kind(), e.what());
    } catch (const std::exception& e) {
        return error_reply(ErrorKind::Internal, e.what());
    }
}

namespace {

// One render in flight per session; newer states overwrite the pending one.
class StreamSession : public std::enable_shared_from_this<StreamSession> {
public:
    StreamSession(tcp::socket&& socket, AvatarService& svc, std::shared_ptr<const LoadedAvatar> avatar, bool lossy,
                  net::thread_pool& pool)
        : ws_(std::move(socket)), svc_(svc), avatar_(std::move(avatar)), lossy_(lossy), pool_(pool) {}

    void run(http::request<http::string_body> req) {
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.read_message_max(1 << 20);
        ws_.async_accept(req, beast::bind_front_handler(&StreamSession::on_accept, shared_from_this()));
    }

private:
    void on_accept(beast::error_code ec) {
        if (!ec) do_read();
    }

    void do_read() { ws_.async_read(buf_, beast::bind_front_handler(&StreamSession::on_read, shared_from_this())); }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec) {
            closed_ = true;
            return;
        }
        const std::string text = beast::buffers_to_string(buf_.data());
        buf_.consume(buf_.size());
        if (!ws_.got_text()) {
            send(false, error_message_json("message: expected text", std::nullopt));
        } else {
            try {
                auto s = parse_control_state(text);
                if (seen_ && s.seq <= last_seq_)
                    throw Error(ErrorKind::InvalidArgument, "seq: must increase (last " + std::to_string(last_seq_) + ")");
                seen_ = true;
                last_seq_ = s.seq;
                pending_ = std::move(s);
                if (!rendering_) kick();
            } catch (const Error& e) {
                send(false, error_message_json(e.what(), std::nullopt));
            }
        }
        do_read();
    }

    void kick() {
        rendering_ = true;
        ControlState s = std::move(*pending_);
        pending_.reset();
        net::post(pool_, [self = shared_from_this(), s = std::move(s)] {
            bool binary = true;
            std::string msg;
            try {
                msg = encode_frame(s.seq, self->svc_.render(*self->avatar_, s), self->lossy_);
            } catch (const std::exception& e) {
                binary = false;
                msg = error_message_json(e.what(), s.seq);
            }
            net::post(self->ws_.get_executor(), [self, binary, msg = std::move(msg)]() mutable {
                self->rendering_ = false;
                self->send(binary, std::move(msg));
                if (self->pending_ && !self->closed_) self->kick();
            });
        });
    }

    void send(bool binary, std::string msg) {
        if (closed_) return;
        outq_.emplace_back(binary, std::move(msg));
        if (outq_.size() == 1) do_write();
    }

    void do_write() {
        ws_.binary(outq_.front().first);
        ws_.async_write(net::buffer(outq_.front().second),
                        beast::bind_front_handler(&StreamSession::on_write, shared_from_this()));
    }

    void on_write(beast::error_code ec, std::size_t) {
        if (ec) {
            closed_ = true;
            return;
        }
        outq_.pop_front();
        if (!outq_.empty()) do_write();
    }

    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buf_;
    AvatarService& svc_;
    std::shared_ptr<const LoadedAvatar> avatar_;
    bool lossy_ = false;
    net::thread_pool& pool_;
    std::deque<std::pair<bool, std::string>> outq_;
    std::optional<ControlState> pending_;
    bool rendering_ = false;
    bool closed_ = false;
    bool seen_ = false;
    std::uint64_t last_seq_ = 0;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket&& socket, AvatarService& svc, net::thread_pool& pool)
        : stream_(std::move(socket)), svc_(svc), pool_(pool) {}

    void run() { net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this())); }

private:
    void do_read() {
        parser_.emplace();
        parser_->body_limit(kMaxBody);
        stream_.expires_after(std::chrono::seconds(120));
        http::async_read(stream_, buf_, *parser_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
    }

    void on_read(beast::error_code ec, std::size_t) {
        if (ec == http::error::end_of_stream) {
            stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
            return;
        }
        if (ec) return;
        auto req = parser_->release();
        if (websocket::is_upgrade(req)) {
            upgrade(std::move(req));
            return;
        }
        HttpReply r = route_request(svc_, std::string(req.method_string()), std::string(req.target()),
                                    std::string(req[http::field::content_type]), req.body());
        send(r, req.version(), req.keep_alive());
    }

    void upgrade(http::request<http::string_body> req) {
        const auto t = parse_target(std::string(req.target()));
        std::shared_ptr<const LoadedAvatar> avatar;
        try {
            if (t.parts.size() != 3 || t.parts[0] != "avatars" || t.parts[2] != "stream")
                throw Error(ErrorKind::NotFound, "no such stream endpoint");
            avatar = svc_.open(t.parts[1]);
        } catch (const Error& e) {
            send(error_reply(e.kind(), e.what()), req.version(), false);
            return;
        }
        const bool lossy = t.query.count("lossy") && t.query.at("lossy") != "0";
        stream_.expires_never();
        std::make_shared<StreamSession>(stream_.release_socket(), svc_, std::move(avatar), lossy, pool_)->run(std::move(req));
    }

    void send(const HttpReply& r, unsigned version, bool keep_alive) {
        auto res = std::make_shared<http::response<http::string_body>>(static_cast<http::status>(r.status), version);
        res->set(http::field::server, "pvp");
        res->set(http::field::content_type, r.content_type);
        res->keep_alive(keep_alive);
        res->body() = r.body;
        res->prepare_payload();
        http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
            if (ec) return;
            if (res->need_eof()) {
                self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
                return;
            }
            self->do_read();
        });
    }

    beast::tcp_stream stream_;
    beast::flat_buffer buf_;
    std::optional<http::request_parser<http::string_body>> parser_;
    AvatarService& svc_;
    net::thread_pool& pool_;
};

}  // namespace

struct Server::Impl {
    AvatarService& svc;
    ServerConfig cfg;
    net::io_context ioc;
    net::thread_pool pool;
    tcp::acceptor acceptor;
    std::vector<std::thread> threads;
    bool running = false;

    Impl(AvatarService& s, ServerConfig c)
        : svc(s), cfg(std::move(c)), ioc(std::max(1, cfg.io_threads)), pool(static_cast<std::size_t>(std::max(1, cfg.render_threads))),
          acceptor(net::make_strand(ioc)) {}

    void do_accept() {
        acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
            if (ec) return;  // acceptor closed
            std::make_shared<HttpSession>(std::move(socket), svc, pool)->run();
            do_accept();
        });
    }
};

Server::Server(AvatarService& svc, ServerConfig cfg) : impl_(std::make_unique<Impl>(svc, std::move(cfg))) {}

Server::~Server() { stop(); }

void Server::start() {
    auto& im = *impl_;
    const tcp::endpoint ep(net::ip::make_address(im.cfg.address), im.cfg.port);
    im.acceptor.open(ep.protocol());
    im.acceptor.set_option(net::socket_base::reuse_address(true));
    im.acceptor.bind(ep);
    im.acceptor.listen(net::socket_base::max_listen_connections);
    port_ = im.acceptor.local_endpoint().port();
    im.do_accept();
    im.running = true;
    for (int i = 0; i < std::max(1, im.cfg.io_threads); ++i) im.threads.emplace_back([&im] { im.ioc.run(); });
}

void Server::stop() {
    auto& im = *impl_;
    if (!im.running) return;
    im.running = false;
    net::post(im.acceptor.get_executor(), [&im] {
        beast::error_code ec;
        im.acceptor.close(ec);
    });
    im.ioc.stop();
    for (auto& t : im.threads) t.join();
    im.threads.clear();
    im.pool.join();
}

void Server::run_until_signal() {
    net::io_context sig_ioc;
    net::signal_set signals(sig_ioc, SIGINT, SIGTERM);
    signals.async_wait([](beast::error_code, int) {});
    sig_ioc.run();
    stop();
}

}  // namespace pvp::service
