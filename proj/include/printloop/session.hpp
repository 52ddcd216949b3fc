#pragma once

#include "printloop/agent.hpp"
#include "printloop/llm.hpp"
#include "printloop/metrics.hpp"
#include "printloop/printer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace printloop::session {

enum class BackendKind { oracle, remote, fixtures };

std::string_view to_string(BackendKind k);
BackendKind backend_kind_from_string(std::string_view s);

class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SessionConfig {
    /// "sim:<scenario file>" or an http(s) Moonraker base URL.
    std::string printer;
    std::string printer_api_key_env = "PRINTLOOP_PRINTER_KEY";
    std::optional<std::string> catalog_path;

    BackendKind backend = BackendKind::oracle;
    llm::RemoteOptions remote;
    std::string api_key_env = "PRINTLOOP_API_KEY";
    std::string fixtures_dir;
    /// Fixture misses are recorded from the remote backend instead of failing.
    bool record_fixtures = false;

    /// Empty values are taken from the scenario in simulator mode.
    std::string part_description;
    std::string material;
    double nominal_speed_mm_s = 0.0;
    int max_react_iters = 8;

    std::string output_dir = "printloop-out";
    std::optional<std::uint64_t> seed;
    std::chrono::seconds poll_timeout{600};

    bool is_simulated() const { return printer.starts_with("sim:"); }
    std::string scenario_path() const { return printer.substr(4); }
    /// Throws ConfigError.
    void validate() const;
};

/// Sectioned key-value file; relative paths resolve against the file's directory.
SessionConfig load_session_config(const std::string& path);
SessionConfig parse_session_config(const std::string& text, const std::string& base_dir = ".");

struct RunOptions {
    bool resume = false;
    /// Observe only: no agent calls, every checkpoint resumes unchanged.
    bool control = false;
    /// Stop after this many checkpoints in this invocation (0 = run to job end).
    int max_checkpoints = 0;
    /// Test hooks.
    agent::FaultPlan faults;
    agent::EventLog::Clock clock;
    std::function<void(std::chrono::milliseconds)> sleep;
    /// Replaces the backend built from the config.
    std::shared_ptr<llm::Backend> backend;
};

struct RunResult {
    int exit_code = 0;
    std::string error;
    agent::StateDictionary state;
    int checkpoints_this_run = 0;
    int degraded = 0;
    bool job_complete = false;
    std::string log_path;
    std::string report_path;
};

/// Exit codes of `run`.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitUnreachable = 2;
inline constexpr int kExitSessionError = 3;

RunResult run_session(const SessionConfig& config, const RunOptions& options = {});

/// Rebuilds report.json / report.md from an output directory.
void write_report(const std::string& output_dir);
nlohmann::json build_report(const agent::StateDictionary& state, const nlohmann::json& final_parameters,
                            const std::vector<nlohmann::json>& log);
std::string report_markdown(const nlohmann::json& report);

std::shared_ptr<llm::Backend> make_backend(const SessionConfig& config);

}  // namespace printloop::session
