#pragma once

// Blocking client for the avatar service, used by the CLI and the tests.

#include <memory>
#include <string>
#include <variant>

#include "pvp/service/protocol.hpp"

namespace pvp::service {

struct HttpResponse {
    unsigned status = 0;
    std::string content_type;
    std::string body;
    bool ok() const { return status >= 200 && status < 300; }
};

class HttpClient {
public:
    HttpClient(std::string host, unsigned short port);
    HttpResponse request(const std::string& method, const std::string& target, const std::string& body = "",
                         const std::string& content_type = "application/json") const;

private:
    std::string host_;
    unsigned short port_;
};

// Stream error messages arrive as text.
struct StreamError {
    std::string message;
    std::optional<std::uint64_t> seq;
};

class StreamClient {
public:
    // Throws Error when the server refuses the session (status in the message).
    StreamClient(const std::string& host, unsigned short port, const std::string& avatar_id, bool lossy = false);
    ~StreamClient();
    StreamClient(const StreamClient&) = delete;
    StreamClient& operator=(const StreamClient&) = delete;

    void send(const ControlState& s);
    void send_text(const std::string& text);
    void send_binary(const std::string& bytes);
    std::variant<FrameMessage, StreamError> receive();
    void close();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Reads PVP_DATA_DIR, falling back to the given default.
std::string data_dir_from_env(const std::string& fallback);

}  // namespace pvp::service
