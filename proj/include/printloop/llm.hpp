#pragma once

#include "printloop/printer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace printloop::llm {

constexpr long long kImageTokenCost = 1100;
constexpr long long kDefaultContextBudget = 128000;

struct ImagePart {
    std::string label;  // e.g. "current/top"
    std::string mime = "image/png";
    std::vector<std::uint8_t> bytes;
};

struct Turn {
    std::string role;  // "user" | "assistant"
    std::string text;
    std::vector<ImagePart> images;
};

struct ChatRequest {
    std::string system_prompt;
    std::vector<Turn> turns;
    /// Which fenced block the caller expects back: report | frame | plan | react.
    std::string response_schema_hint;
    int max_output_tokens = 1024;
    double temperature = 0.0;
    long long context_budget_tokens = kDefaultContextBudget;
};

struct Usage {
    long long input_tokens = 0;
    long long output_tokens = 0;
};

struct ChatResponse {
    std::string text;
    std::string finish_reason;
    Usage usage;
    double latency_ms = 0.0;
};

class BudgetError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class BackendError : public std::runtime_error {
public:
    BackendError(const std::string& what, int status = 0, std::string body = {})
        : std::runtime_error(what), status_(status), body_(std::move(body)) {}
    int status() const { return status_; }
    const std::string& body() const { return body_; }

private:
    int status_;
    std::string body_;
};

class TimeoutError : public BackendError {
public:
    using BackendError::BackendError;
};

/// ceil(chars / 3) per text part (system prompt and each turn) plus a fixed cost per image.
long long estimate_tokens(const ChatRequest& request, long long image_cost = kImageTokenCost);

/// Throws BudgetError when the estimate exceeds the request's budget.
void check_budget(const ChatRequest& request, long long image_cost = kImageTokenCost);

class Backend {
public:
    virtual ~Backend() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
    virtual std::string name() const = 0;
};

/// Machine-readable block embedded in requests: ```observation with key: value lines.
using Observation = std::multimap<std::string, std::string>;

std::string format_observation(const std::vector<std::pair<std::string, std::string>>& entries);
/// Last observation block found in the request's turns; nullopt when absent.
std::optional<Observation> find_observation(const ChatRequest& request);

/// Deterministic rule-based stand-in for the remote model.
class OracleBackend : public Backend {
public:
    OracleBackend() = default;
    ChatResponse complete(const ChatRequest& request) override;
    std::string name() const override { return "oracle"; }
};

/// Rule-table outputs, exposed for tests.
namespace oracle {

constexpr double kReportThreshold = 0.3;

std::string severity_label(double severity);
std::string detect(const Observation& obs);
std::string frame(const Observation& obs);
std::string plan(const Observation& obs);
std::string react(const Observation& obs);

}  // namespace oracle

struct RemoteOptions {
    std::string base_url = "https://api.openai.com/v1";
    std::string model = "gpt-4o";
    std::string api_key;
    std::chrono::milliseconds timeout{60000};
    long long image_cost = kImageTokenCost;
};

/// OpenAI-compatible chat-completions body with inline base64 images.
nlohmann::json to_openai_json(const ChatRequest& request, const std::string& model);

class RemoteBackend : public Backend {
public:
    /// `transport` defaults to an HTTP(S) transport for options.base_url.
    explicit RemoteBackend(RemoteOptions options, std::shared_ptr<printer::Transport> transport = nullptr);
    ChatResponse complete(const ChatRequest& request) override;
    std::string name() const override { return "remote"; }

private:
    RemoteOptions options_;
    std::string path_prefix_;
    std::shared_ptr<printer::Transport> transport_;
};

/// Stable key of a request (images contribute their digest).
std::string request_key(const ChatRequest& request);

/// Replays recorded responses stored as `<dir>/<key>.json`; with an inner
/// backend, misses are forwarded and recorded.
class FixtureBackend : public Backend {
public:
    explicit FixtureBackend(std::string directory, std::shared_ptr<Backend> record_from = nullptr);
    ChatResponse complete(const ChatRequest& request) override;
    std::string name() const override { return "fixtures"; }

private:
    std::string directory_;
    std::shared_ptr<Backend> inner_;
};

}  // namespace printloop::llm
