#include "printloop/agent.hpp"
#include "printloop/util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>

namespace printloop::agent {

const std::vector<ModuleId> kAllModules = {ModuleId::detector,         ModuleId::supervisor,
                                           ModuleId::info_planner,     ModuleId::info_executor,
                                           ModuleId::solution_planner, ModuleId::solution_executor,
                                           ModuleId::handoff};

std::string_view to_string(ModuleId m) {
    switch (m) {
    case ModuleId::detector: return "detector";
    case ModuleId::supervisor: return "supervisor";
    case ModuleId::info_planner: return "info_planner";
    case ModuleId::info_executor: return "info_executor";
    case ModuleId::solution_planner: return "solution_planner";
    case ModuleId::solution_executor: return "solution_executor";
    case ModuleId::handoff: return "handoff";
    }
    return "supervisor";
}

ModuleId module_from_string(std::string_view s) {
    for (const auto m : kAllModules) {
        if (to_string(m) == s) return m;
    }
    throw std::invalid_argument("unknown module '" + std::string(s) + "'");
}

std::string_view to_string(ModuleStatus s) {
    switch (s) {
    case ModuleStatus::pending: return "pending";
    case ModuleStatus::done: return "done";
    case ModuleStatus::failed: return "failed";
    }
    return "pending";
}

ModuleStatus module_status_from_string(std::string_view s) {
    if (s == "done") return ModuleStatus::done;
    if (s == "failed") return ModuleStatus::failed;
    if (s == "pending") return ModuleStatus::pending;
    throw std::invalid_argument("unknown module status '" + std::string(s) + "'");
}

CheckpointRecord::CheckpointRecord() {
    for (const auto m : kAllModules) module_status[m] = ModuleStatus::pending;
}

void CheckpointRecord::set_status(ModuleId m, ModuleStatus s) {
    if (s == ModuleStatus::pending) throw std::logic_error("a module status can only move out of pending");
    if (module_status.at(m) != ModuleStatus::pending) {
        throw std::logic_error(fmt::format("{} already reported for checkpoint {}", to_string(m), checkpoint));
    }
    module_status[m] = s;
}

namespace {

nlohmann::json opt_json(const auto& v) { return v ? v->to_json() : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json CheckpointRecord::to_json() const {
    nlohmann::json statuses = nlohmann::json::object();
    for (const auto& [m, s] : module_status) statuses[std::string(to_string(m))] = std::string(to_string(s));
    nlohmann::json actions = nlohmann::json::array();
    for (const auto& a : executed_actions) {
        nlohmann::json ex = nlohmann::json::array();
        for (const auto& e : a.expectations) {
            ex.push_back({{"parameter", e.parameter},
                          {"before", e.before ? nlohmann::json(*e.before) : nlohmann::json(nullptr)},
                          {"expected", e.expected}});
        }
        actions.push_back({{"command", a.command},
                           {"status", std::string(printer::to_string(a.status))},
                           {"message", a.message},
                           {"expectations", ex}});
    }
    nlohmann::json verifications_json = nlohmann::json::array();
    for (const auto& v : verifications) {
        verifications_json.push_back({{"parameter", v.parameter},
                                      {"expected", v.expected},
                                      {"observed", v.observed ? nlohmann::json(*v.observed) : nlohmann::json(nullptr)},
                                      {"ok", v.ok},
                                      {"reissued", v.reissued}});
    }
    return {{"checkpoint", checkpoint},
            {"layer_index", layer_index},
            {"segment_index", segment_index},
            {"images_now", images_now},
            {"images_prev", images_prev},
            {"part_description", part_description},
            {"report", opt_json(report)},
            {"info_plan", opt_json(info_plan)},
            {"gathered_info", gathered_info},
            {"info_trace", opt_json(info_trace)},
            {"solution_plan", opt_json(solution_plan)},
            {"solution_trace", opt_json(solution_trace)},
            {"executed_actions", actions},
            {"verifications", verifications_json},
            {"module_status", statuses},
            {"module_sequence", module_sequence},
            {"commentary", commentary},
            {"degraded", degraded},
            {"resumed", resumed},
            {"occupancy", occupancy ? nlohmann::json(*occupancy) : nlohmann::json(nullptr)},
            {"ground_truth_occupancy",
             ground_truth_occupancy ? nlohmann::json(*ground_truth_occupancy) : nlohmann::json(nullptr)},
            {"latency_ms", latency_ms}};
}

CheckpointRecord CheckpointRecord::from_json(const nlohmann::json& j) {
    CheckpointRecord r;
    r.checkpoint = j.at("checkpoint");
    r.layer_index = j.at("layer_index");
    r.segment_index = j.at("segment_index");
    r.images_now = j.at("images_now").get<std::vector<std::string>>();
    r.images_prev = j.at("images_prev").get<std::vector<std::string>>();
    r.part_description = j.at("part_description");
    if (!j.at("report").is_null()) r.report = FailureReport::from_json(j["report"]);
    if (!j.at("info_plan").is_null()) r.info_plan = ActionPlan::from_json(j["info_plan"]);
    r.gathered_info = j.at("gathered_info").get<std::map<std::string, double>>();
    if (!j.at("info_trace").is_null()) r.info_trace = ReActTrace::from_json(j["info_trace"]);
    if (!j.at("solution_plan").is_null()) r.solution_plan = ActionPlan::from_json(j["solution_plan"]);
    if (!j.at("solution_trace").is_null()) r.solution_trace = ReActTrace::from_json(j["solution_trace"]);
    for (const auto& a : j.at("executed_actions")) {
        ExecutedAction ex;
        ex.command = a.at("command");
        const auto status = a.at("status").get<std::string>();
        for (const auto s : {printer::ApiStatus::ok, printer::ApiStatus::denied, printer::ApiStatus::transport_error,
                             printer::ApiStatus::printer_error}) {
            if (printer::to_string(s) == status) ex.status = s;
        }
        ex.message = a.value("message", "");
        for (const auto& e : a.at("expectations")) {
            Expectation x;
            x.parameter = e.at("parameter");
            if (!e.at("before").is_null()) x.before = e["before"].get<double>();
            x.expected = e.at("expected");
            ex.expectations.push_back(x);
        }
        r.executed_actions.push_back(ex);
    }
    for (const auto& v : j.at("verifications")) {
        Verification x;
        x.parameter = v.at("parameter");
        x.expected = v.at("expected");
        if (!v.at("observed").is_null()) x.observed = v["observed"].get<double>();
        x.ok = v.at("ok");
        x.reissued = v.at("reissued");
        r.verifications.push_back(x);
    }
    for (const auto& [k, v] : j.at("module_status").items()) {
        r.module_status[module_from_string(k)] = module_status_from_string(v.get<std::string>());
    }
    r.module_sequence = j.at("module_sequence").get<std::vector<std::string>>();
    r.commentary = j.at("commentary");
    r.degraded = j.at("degraded");
    r.resumed = j.at("resumed");
    if (!j.at("occupancy").is_null()) r.occupancy = j["occupancy"].get<double>();
    if (!j.at("ground_truth_occupancy").is_null()) r.ground_truth_occupancy = j["ground_truth_occupancy"].get<double>();
    r.latency_ms = j.value("latency_ms", 0.0);
    return r;
}

CheckpointRecord& StateDictionary::current() {
    if (checkpoints.empty()) throw std::logic_error("no checkpoint in state");
    return checkpoints.back();
}

nlohmann::json StateDictionary::to_json() const {
    nlohmann::json cps = nlohmann::json::array();
    for (const auto& c : checkpoints) cps.push_back(c.to_json());
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& m : history_) {
        hist.push_back({{"checkpoint", m.checkpoint}, {"module", m.module}, {"role", m.role}, {"text", m.text}});
    }
    return {{"session_id", session_id}, {"checkpoints", cps}, {"history", hist}};
}

StateDictionary StateDictionary::from_json(const nlohmann::json& j) {
    StateDictionary s;
    s.session_id = j.at("session_id");
    for (const auto& c : j.at("checkpoints")) s.checkpoints.push_back(CheckpointRecord::from_json(c));
    for (const auto& m : j.at("history")) s.history_.push_back({m.at("checkpoint"), m.at("module"), m.at("role"), m.at("text")});
    return s;
}

std::optional<ModuleId> supervise(const CheckpointRecord& record) {
    if (record.status(ModuleId::detector) == ModuleStatus::pending) {
        throw std::logic_error("supervise called before detection");
    }
    if (record.status(ModuleId::handoff) != ModuleStatus::pending) return std::nullopt;
    if (record.degraded || record.status(ModuleId::detector) == ModuleStatus::failed) return ModuleId::handoff;
    if (!record.report || record.report->no_failures) return ModuleId::handoff;
    for (const auto m : {ModuleId::info_planner, ModuleId::info_executor, ModuleId::solution_planner,
                         ModuleId::solution_executor}) {
        const auto s = record.status(m);
        if (s == ModuleStatus::failed) return ModuleId::handoff;
        if (s == ModuleStatus::pending) return m;
    }
    return ModuleId::handoff;
}

bool sequence_satisfies_contract(const std::vector<std::string>& sequence, bool failures_detected, bool degraded) {
    static const std::vector<std::string> middle = {"info_planner", "info_executor", "solution_planner",
                                                    "solution_executor"};
    if (sequence.size() < 2 || sequence.front() != "detector" || sequence.back() != "handoff") return false;
    const std::vector<std::string> inner(sequence.begin() + 1, sequence.end() - 1);
    if (inner.size() > middle.size()) return false;
    if (!std::equal(inner.begin(), inner.end(), middle.begin())) return false;
    if (!failures_detected) return inner.empty();
    // With failures, only a module failure may shorten the pipeline.
    return degraded || inner.size() == middle.size();
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    return fmt::format("{}.{:03d}Z", buf, static_cast<int>(ms));
}

EventLog::EventLog(const std::string& path, std::string session_id, bool append, Clock clock)
    : path_(path), session_(std::move(session_id)), clock_(std::move(clock)) {
    if (!clock_) clock_ = utc_timestamp;
    if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) {
        std::filesystem::create_directories(dir);
    }
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open session log " + path);
}

void EventLog::write(int checkpoint, std::string_view module, std::string_view kind, const nlohmann::json& payload) {
    if (!out_.is_open()) return;
    const nlohmann::json record = {{"ts", clock_()},
                                   {"session", session_},
                                   {"checkpoint", checkpoint},
                                   {"module", std::string(module)},
                                   {"kind", std::string(kind)},
                                   {"payload", payload}};
    std::lock_guard lock(mutex_);
    out_ << record.dump() << '\n';
    out_.flush();
}

std::vector<nlohmann::json> EventLog::read(const std::string& path) {
    std::vector<nlohmann::json> out;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read session log " + path);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw std::runtime_error(fmt::format("{}:{}: malformed log record", path, n));
        out.push_back(std::move(j));
    }
    return out;
}

void EventLog::truncate_after(const std::string& path, int checkpoint) {
    std::ifstream in(path);
    if (!in) return;
    std::string kept;
    std::string line;
    bool done = false;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) break;
        const int cp = j.value("checkpoint", 0);
        if (checkpoint <= 0) {
            // Only session-level records before the first checkpoint survive.
            if (cp != 0) break;
            kept += line + '\n';
            continue;
        }
        if (done) break;
        kept += line + '\n';
        if (cp == checkpoint && j.value("kind", "") == "checkpoint_end") done = true;
    }
    in.close();
    write_file(path, kept);
}

}  // namespace printloop::agent
