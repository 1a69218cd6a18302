#pragma once

// HTTP + WebSocket front end over AvatarService (one port for both).
//
//   POST   /avatars                      JSON {"toy": {...}, "image_size": n} or PVPI+PVPF bytes
//   GET    /avatars                      {"avatars": [record, ...]}
//   GET    /avatars/{id}                 record
//   DELETE /avatars/{id}
//   POST   /avatars/{id}/pipeline        JSON config overrides (may be empty); starts the job
//   DELETE /avatars/{id}/pipeline        cancels the running job
//   GET    /avatars/{id}/progress
//   POST   /avatars/{id}/reset           failed -> ingesting
//   GET    /avatars/{id}/directions      {"directions": [{"name"}]}, or PVPD bytes with ?format=pvpd
//   POST   /avatars/{id}/directions      PVPD bytes
//   POST   /avatars/{id}/driving/{name}  PVPF bytes
//   POST   /avatars/{id}/render          ControlState JSON -> binary PPM (?format=frame: stream frame message)
//   GET    /avatars/{id}/export          PVPA bytes
//   POST   /import                       PVPA bytes
//   GET    /health
//   WS     /avatars/{id}/stream[?lossy=1]
//
// Errors are JSON {"error": kind, "message": text} with 400/404/409/500/503.

#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "pvp/service/avatar_service.hpp"

namespace pvp::service {

struct HttpReply {
    unsigned status = 200;
    std::string content_type = "application/json";
    std::string body;
};

// Transport-free request handling; the server and the unit tests both go through this.
HttpReply route_request(AvatarService& svc, const std::string& method, const std::string& target,
                        const std::string& content_type, const std::string& body);

unsigned status_for(ErrorKind kind);
std::string kind_name(ErrorKind kind);

struct ServerConfig {
    std::string address = "127.0.0.1";
    unsigned short port = 8080;  // 0 picks a free port
    int io_threads = 4;
    int render_threads = 2;
};

class Server {
public:
    Server(AvatarService& svc, ServerConfig cfg);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    // Binds and starts serving on background threads.
    void start();
    void stop();
    // Blocks until stop() or SIGINT/SIGTERM.
    void run_until_signal();
    unsigned short port() const { return port_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    unsigned short port_ = 0;
};

}  // namespace pvp::service
