#pragma once

#include <memory>
#include <string>

#include "ampwatch/service.hpp"

namespace ampwatch {

/// 400 validation-type errors, 404 not found, 409 conflicts, 500 otherwise.
int http_status(ErrorCode code) noexcept;
json error_document(const Error& e);

/// JSON-over-HTTP gateway in front of a Service.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds the listening socket; port 0 picks a free port. Returns the port.
    int bind(const std::string& host, int port);
    /// Serves on a background thread.
    void start();
    /// Serves on the calling thread until stop().
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ampwatch
