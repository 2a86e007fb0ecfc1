#pragma once

// Local HTTP server for exercising the provider clients without network
// access. The handler runs on the server thread.

#include <atomic>
#include <functional>
#include <string>
#include <thread>

#include <httplib.h>

namespace isotropy::testing {

class StubServer {
public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    explicit StubServer(Handler handler) : handler_(std::move(handler)) {
        server_.Post(R"(.*)", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits_;
            handler_(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    std::string url(const std::string& path = "/v1/embeddings") const {
        return "http://127.0.0.1:" + std::to_string(port_) + path;
    }
    int hits() const { return hits_.load(); }

private:
    Handler handler_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::atomic<int> hits_{0};
};

}  // namespace isotropy::testing
