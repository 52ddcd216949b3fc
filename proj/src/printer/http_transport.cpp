#include "printloop/printer.hpp"

#include <httplib.h>

namespace printloop::printer {

namespace {

class HttpTransport : public Transport {
public:
    explicit HttpTransport(HttpTransportOptions options) : options_(std::move(options)) {}

    HttpResponse send(const HttpRequest& request) override {
        httplib::Client client(options_.base_url);
        client.set_connection_timeout(options_.connect_timeout);
        client.set_read_timeout(options_.read_timeout);
        httplib::Headers headers;
        if (!options_.api_key.empty()) headers.emplace("X-Api-Key", options_.api_key);
        for (const auto& [k, v] : request.headers) headers.emplace(k, v);

        httplib::Result res = request.method == "POST"
                                  ? client.Post(request.target, headers, request.body, request.content_type)
                                  : client.Get(request.target, headers);
        if (!res) {
            throw TransportError(options_.base_url + request.target + ": " + httplib::to_string(res.error()));
        }
        HttpResponse out;
        out.status = res->status;
        out.body = res->body;
        out.content_type = res->get_header_value("Content-Type");
        for (const auto& [k, v] : res->headers) out.headers[k] = v;
        return out;
    }

private:
    HttpTransportOptions options_;
};

}  // namespace

std::shared_ptr<Transport> make_http_transport(HttpTransportOptions options) {
    return std::make_shared<HttpTransport>(std::move(options));
}

}  // namespace printloop::printer
