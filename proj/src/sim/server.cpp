#include "printloop/sim.hpp"

#include <httplib.h>

#include <thread>

namespace printloop::sim {

struct SimServer::Impl {
    std::shared_ptr<VirtualPrinter> printer;
    httplib::Server server;
    std::thread thread;
    int port = 0;
};

SimServer::SimServer(std::shared_ptr<VirtualPrinter> printer) : impl_(std::make_unique<Impl>()) {
    impl_->printer = std::move(printer);
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        printer::HttpRequest r;
        r.method = req.method;
        r.target = req.target.empty() ? req.path : req.target;
        r.body = req.body;
        r.content_type = req.get_header_value("Content-Type");
        const auto out = impl_->printer->handle(r);
        res.status = out.status;
        for (const auto& [k, v] : out.headers) res.set_header(k, v);
        res.set_content(out.body, out.content_type);
    };
    impl_->server.Get(".*", handler);
    impl_->server.Post(".*", handler);
}

SimServer::~SimServer() { stop(); }

int SimServer::start(int port) {
    if (impl_->thread.joinable()) return impl_->port;
    if (port == 0) {
        impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
    } else {
        impl_->port = impl_->server.bind_to_port("127.0.0.1", port) ? port : -1;
    }
    if (impl_->port < 0) throw SimError("cannot bind simulator port " + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return impl_->port;
}

void SimServer::stop() {
    if (!impl_ || !impl_->thread.joinable()) return;
    impl_->server.stop();
    impl_->thread.join();
}

std::string SimServer::base_url() const { return "http://127.0.0.1:" + std::to_string(impl_->port); }

}  // namespace printloop::sim
