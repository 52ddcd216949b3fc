#pragma once

#include "printloop/failure_mode.hpp"
#include "printloop/gcode.hpp"
#include "printloop/llm.hpp"
#include "printloop/printer.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace printloop::agent {

class FormatError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Reports and plans

enum class Severity { low, medium, high };

std::string_view to_string(Severity s);
Severity severity_from_string(std::string_view s);

struct Failure {
    FailureMode mode;
    std::string evidence;
    Severity severity = Severity::low;
    std::optional<std::string> region_hint;
};

struct FailureReport {
    int layer_index = 0;  // 0-based
    std::string observations;
    std::vector<Failure> failures;
    bool no_failures = true;
    std::string quality_note;

    bool has(FailureMode m) const;
    std::set<FailureMode> modes() const;
    /// Throws FormatError on a broken invariant.
    void validate() const;
    nlohmann::json to_json() const;
    static FailureReport from_json(const nlohmann::json& j);
};

/// Parses the fenced ```report block (layer numbers in the text are 1-based).
FailureReport parse_report(std::string_view text);
std::string format_report(const FailureReport& report);

enum class PlanKind { information, solution };

std::string_view to_string(PlanKind k);

struct PlanStep {
    std::string goal;
    /// query:<object>[:field,...] | gcode:<script> | endpoint:<id>
    std::string target;
    std::string expected_observation;
};

struct ActionPlan {
    std::vector<PlanStep> steps;
    std::string reasoning_frame;

    nlohmann::json to_json() const;
    static ActionPlan from_json(const nlohmann::json& j);
};

ActionPlan parse_plan(std::string_view text);
std::string format_plan(const ActionPlan& plan);

/// Returns the reason a target is not executable, nullopt when it is.
std::optional<std::string> check_target(const printer::EndpointCatalog& catalog, const std::string& target);

struct ReasoningFrame {
    std::string id;
    std::string description;
    std::string prompt;
    std::vector<FailureMode> keywords;
};

const std::vector<ReasoningFrame>& frame_catalog();
const ReasoningFrame* find_frame(std::string_view id);
/// Catalog frames ranked by keyword overlap with the failure modes.
std::vector<std::string> rank_frames(PlanKind kind, const std::set<FailureMode>& modes);

struct ReActIteration {
    std::string thought;
    std::string action;
    std::string observation;
};

enum class ReActOutcome { completed, exhausted, aborted };

std::string_view to_string(ReActOutcome o);

struct ReActTrace {
    std::vector<ReActIteration> iterations;
    ReActOutcome outcome = ReActOutcome::completed;

    nlohmann::json to_json() const;
    static ReActTrace from_json(const nlohmann::json& j);
};

struct ReActStep {
    std::string thought;
    std::string action;  // "finish" or "<verb> <argument>"
};

ReActStep parse_react(std::string_view text);

// ---------------------------------------------------------------------------
// State dictionary

enum class ModuleId { detector, supervisor, info_planner, info_executor, solution_planner, solution_executor, handoff };
enum class ModuleStatus { pending, done, failed };

std::string_view to_string(ModuleId m);
ModuleId module_from_string(std::string_view s);
std::string_view to_string(ModuleStatus s);
ModuleStatus module_status_from_string(std::string_view s);
extern const std::vector<ModuleId> kAllModules;

/// One changed parameter and the value expected after the command.
struct Expectation {
    std::string parameter;  // flattened snapshot name, e.g. flow_factor
    std::optional<double> before;
    double expected = 0.0;
};

struct ExecutedAction {
    std::string command;
    printer::ApiStatus status = printer::ApiStatus::ok;
    std::string message;
    std::vector<Expectation> expectations;
};

struct Verification {
    std::string parameter;
    double expected = 0.0;
    std::optional<double> observed;
    bool ok = false;
    bool reissued = false;
};

struct CheckpointRecord {
    int checkpoint = 0;  // 1-based ordinal
    int layer_index = 0;
    int segment_index = 0;
    std::vector<std::string> images_now;
    std::vector<std::string> images_prev;
    std::string part_description;
    std::optional<FailureReport> report;
    std::optional<ActionPlan> info_plan;
    std::map<std::string, double> gathered_info;
    std::optional<ReActTrace> info_trace;
    std::optional<ActionPlan> solution_plan;
    std::optional<ReActTrace> solution_trace;
    std::vector<ExecutedAction> executed_actions;
    std::vector<Verification> verifications;
    std::map<ModuleId, ModuleStatus> module_status;
    std::vector<std::string> module_sequence;
    std::string commentary;
    bool degraded = false;
    bool resumed = false;
    std::optional<double> occupancy;
    std::optional<double> ground_truth_occupancy;
    double latency_ms = 0.0;

    CheckpointRecord();
    ModuleStatus status(ModuleId m) const { return module_status.at(m); }
    /// Each module's status is written exactly once per checkpoint.
    void set_status(ModuleId m, ModuleStatus s);
    nlohmann::json to_json() const;
    static CheckpointRecord from_json(const nlohmann::json& j);
};

struct Message {
    int checkpoint = 0;
    std::string module;
    std::string role;  // request | response | action | observation | note
    std::string text;
};

struct StateDictionary {
    std::string session_id;
    std::vector<CheckpointRecord> checkpoints;

    const std::vector<Message>& history() const { return history_; }
    void append_message(Message m) { history_.push_back(std::move(m)); }
    CheckpointRecord& current();

    nlohmann::json to_json() const;
    static StateDictionary from_json(const nlohmann::json& j);

private:
    std::vector<Message> history_;
};

/// Next module in the sequencing contract, or nullopt once handoff has run.
std::optional<ModuleId> supervise(const CheckpointRecord& record);

/// Checks a module sequence (detector first) against the contract.
bool sequence_satisfies_contract(const std::vector<std::string>& sequence, bool failures_detected, bool degraded);

// ---------------------------------------------------------------------------
// Event log

/// JSON Lines, one record {ts, session, checkpoint, module, kind, payload} per line.
class EventLog {
public:
    using Clock = std::function<std::string()>;

    EventLog() = default;
    EventLog(const std::string& path, std::string session_id, bool append = false, Clock clock = {});

    void write(int checkpoint, std::string_view module, std::string_view kind, const nlohmann::json& payload);
    const std::string& path() const { return path_; }
    bool is_open() const { return out_.is_open(); }

    /// Keeps records up to and including the `checkpoint_end` of `checkpoint`.
    static void truncate_after(const std::string& path, int checkpoint);
    static std::vector<nlohmann::json> read(const std::string& path);

private:
    std::string path_;
    std::string session_;
    Clock clock_;
    std::ofstream out_;
    std::mutex mutex_;
};

std::string utc_timestamp();

// ---------------------------------------------------------------------------
// Pipeline

struct AgentConfig {
    std::string part_description = "test part";
    std::string material = "PLA";
    double nominal_speed_mm_s = 120.0;
    int max_react_iters = 8;
    int plan_regenerations = 1;
    int detect_retries = 1;
    long long context_budget_tokens = llm::kDefaultContextBudget;
};

struct CapturedImages {
    std::vector<llm::ImagePart> now;
    std::vector<llm::ImagePart> previous;
    /// Simulator metadata of the current top view (null on real printers).
    nlohmann::json annotations;
};

/// Test hook: forces a module to fail at a given checkpoint.
using FaultPlan = std::function<bool(int checkpoint, ModuleId module)>;

class Pipeline {
public:
    Pipeline(llm::Backend& backend, printer::PrinterClient& client, AgentConfig config, EventLog* log = nullptr);

    FailureReport detect(CheckpointRecord& record, const CapturedImages& images);
    ActionPlan plan(PlanKind kind, CheckpointRecord& record, const CapturedImages& images);
    ReActTrace execute(PlanKind kind, const ActionPlan& plan, CheckpointRecord& record);
    void handoff(CheckpointRecord& record);

    /// Runs detector, supervisor-driven modules and handoff for one checkpoint.
    void run_checkpoint(StateDictionary& state, CheckpointRecord& record, const CapturedImages& images);

    void set_fault_plan(FaultPlan faults) { faults_ = std::move(faults); }
    const AgentConfig& config() const { return config_; }

private:
    llm::ChatResponse ask(CheckpointRecord& record, ModuleId module, const std::string& schema,
                          const std::string& system, const std::string& user, const std::vector<llm::ImagePart>& images);
    std::vector<std::pair<std::string, std::string>> base_observation(const CheckpointRecord& record,
                                                                      const CapturedImages& images) const;
    void log(const CheckpointRecord& record, ModuleId module, std::string_view kind, const nlohmann::json& payload);
    std::optional<double> read_parameter(const std::string& parameter);

    llm::Backend& backend_;
    printer::PrinterClient& client_;
    AgentConfig config_;
    EventLog* log_;
    StateDictionary* state_ = nullptr;
    FaultPlan faults_;
};

/// Snapshot parameter names touched by a parameter command, with the value expected after it.
std::vector<Expectation> expectations_for(const gcode::ParameterChange& change,
                                          const std::map<std::string, double>& before);
/// Object queried to read back a flattened parameter.
std::string object_for_parameter(const std::string& parameter);
/// "flow 105% → 110%" style commentary fragment.
std::string describe_change(const Expectation& e);

}  // namespace printloop::agent
