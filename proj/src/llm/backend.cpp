#include "printloop/llm.hpp"
#include "printloop/util.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <filesystem>

namespace printloop::llm {

namespace {

long long text_tokens(const std::string& s) { return static_cast<long long>((s.size() + 2) / 3); }

}  // namespace

long long estimate_tokens(const ChatRequest& request, long long image_cost) {
    long long total = text_tokens(request.system_prompt);
    for (const auto& t : request.turns) {
        total += text_tokens(t.text);
        total += image_cost * static_cast<long long>(t.images.size());
    }
    return total;
}

void check_budget(const ChatRequest& request, long long image_cost) {
    const auto estimate = estimate_tokens(request, image_cost);
    if (estimate > request.context_budget_tokens) {
        throw BudgetError(fmt::format("request needs ~{} tokens, budget is {}", estimate,
                                      request.context_budget_tokens));
    }
}

std::string format_observation(const std::vector<std::pair<std::string, std::string>>& entries) {
    std::string out = "```observation\n";
    for (const auto& [k, v] : entries) out += k + ": " + v + "\n";
    out += "```\n";
    return out;
}

std::optional<Observation> find_observation(const ChatRequest& request) {
    static const std::string open = "```observation\n";
    for (auto t = request.turns.rbegin(); t != request.turns.rend(); ++t) {
        const auto begin = t->text.rfind(open);
        if (begin == std::string::npos) continue;
        const auto body_start = begin + open.size();
        const auto end = t->text.find("```", body_start);
        const auto body = std::string_view(t->text).substr(body_start, end == std::string::npos ? std::string::npos
                                                                                                  : end - body_start);
        Observation obs;
        std::size_t pos = 0;
        while (pos < body.size()) {
            auto nl = body.find('\n', pos);
            if (nl == std::string_view::npos) nl = body.size();
            const auto line = body.substr(pos, nl - pos);
            if (const auto colon = line.find(':'); colon != std::string_view::npos) {
                obs.emplace(std::string(trim(line.substr(0, colon))), std::string(trim(line.substr(colon + 1))));
            }
            pos = nl + 1;
        }
        return obs;
    }
    return std::nullopt;
}

nlohmann::json to_openai_json(const ChatRequest& request, const std::string& model) {
    nlohmann::json messages = nlohmann::json::array();
    if (!request.system_prompt.empty()) {
        messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
    }
    for (const auto& t : request.turns) {
        if (t.images.empty()) {
            messages.push_back({{"role", t.role}, {"content", t.text}});
            continue;
        }
        nlohmann::json parts = nlohmann::json::array();
        parts.push_back({{"type", "text"}, {"text", t.text}});
        for (const auto& img : t.images) {
            parts.push_back({{"type", "image_url"},
                             {"image_url", {{"url", "data:" + img.mime + ";base64," + base64_encode(img.bytes)}}}});
        }
        messages.push_back({{"role", t.role}, {"content", parts}});
    }
    return {{"model", model},
            {"messages", messages},
            {"temperature", request.temperature},
            {"max_tokens", request.max_output_tokens}};
}

RemoteBackend::RemoteBackend(RemoteOptions options, std::shared_ptr<printer::Transport> transport)
    : options_(std::move(options)), transport_(std::move(transport)) {
    // httplib wants scheme://host[:port]; any path goes in front of each request target.
    std::string origin = options_.base_url;
    const auto scheme = origin.find("://");
    const auto slash = origin.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
        path_prefix_ = origin.substr(slash);
        origin.resize(slash);
    }
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
    if (!transport_) {
        printer::HttpTransportOptions http;
        http.base_url = origin;
        http.read_timeout = options_.timeout;
        transport_ = printer::make_http_transport(http);
    }
}

ChatResponse RemoteBackend::complete(const ChatRequest& request) {
    check_budget(request, options_.image_cost);
    if (options_.api_key.empty()) throw BackendError("remote backend: no API key configured");
    printer::HttpRequest http;
    http.method = "POST";
    http.target = path_prefix_ + "/chat/completions";
    http.body = to_openai_json(request, options_.model).dump();
    http.headers["Authorization"] = "Bearer " + options_.api_key;

    const auto start = std::chrono::steady_clock::now();
    printer::HttpResponse response;
    try {
        response = transport_->send(http);
    } catch (const printer::TransportError& e) {
        const std::string what = e.what();
        if (what.find("Timeout") != std::string::npos || what.find("Read") != std::string::npos) {
            throw TimeoutError("remote backend timed out: " + what);
        }
        throw BackendError("remote backend unreachable: " + what);
    }
    ChatResponse r;
    r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (response.status < 200 || response.status >= 300) {
        throw BackendError(fmt::format("remote backend returned HTTP {}", response.status), response.status,
                           response.body);
    }
    const auto j = nlohmann::json::parse(response.body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || j["choices"].empty()) {
        throw BackendError("remote backend: malformed completion body", response.status, response.body);
    }
    const auto& choice = j["choices"][0];
    const auto& content = choice["message"]["content"];
    r.text = content.is_string() ? content.get<std::string>() : std::string{};
    r.finish_reason = choice.value("finish_reason", std::string{"stop"});
    if (j.contains("usage")) {
        r.usage.input_tokens = j["usage"].value("prompt_tokens", 0LL);
        r.usage.output_tokens = j["usage"].value("completion_tokens", 0LL);
    }
    spdlog::debug("remote completion {} ms, {} in / {} out tokens", r.latency_ms, r.usage.input_tokens,
                  r.usage.output_tokens);
    return r;
}

std::string request_key(const ChatRequest& request) {
    nlohmann::json j = {{"system", request.system_prompt},
                        {"schema", request.response_schema_hint},
                        {"max_output_tokens", request.max_output_tokens},
                        {"temperature", request.temperature}};
    for (const auto& t : request.turns) {
        nlohmann::json images = nlohmann::json::array();
        for (const auto& img : t.images) {
            images.push_back(sha256_hex(std::string_view(reinterpret_cast<const char*>(img.bytes.data()),
                                                         img.bytes.size())));
        }
        j["turns"].push_back({{"role", t.role}, {"text", t.text}, {"images", images}});
    }
    return sha256_hex(j.dump()).substr(0, 32);
}

FixtureBackend::FixtureBackend(std::string directory, std::shared_ptr<Backend> record_from)
    : directory_(std::move(directory)), inner_(std::move(record_from)) {}

ChatResponse FixtureBackend::complete(const ChatRequest& request) {
    check_budget(request);
    const auto path = (std::filesystem::path(directory_) / (request_key(request) + ".json")).string();
    if (std::filesystem::exists(path)) {
        const auto j = nlohmann::json::parse(read_file(path));
        ChatResponse r;
        r.text = j.at("text").get<std::string>();
        r.finish_reason = j.value("finish_reason", "stop");
        r.usage.input_tokens = j.value("input_tokens", 0LL);
        r.usage.output_tokens = j.value("output_tokens", 0LL);
        r.latency_ms = j.value("latency_ms", 0.0);
        return r;
    }
    if (!inner_) throw BackendError("no recorded response for request " + request_key(request));
    auto r = inner_->complete(request);
    std::filesystem::create_directories(directory_);
    write_file(path, nlohmann::json{{"schema", request.response_schema_hint},
                                    {"text", r.text},
                                    {"finish_reason", r.finish_reason},
                                    {"input_tokens", r.usage.input_tokens},
                                    {"output_tokens", r.usage.output_tokens},
                                    {"latency_ms", r.latency_ms}}
                         .dump(2));
    return r;
}

}  // namespace printloop::llm
