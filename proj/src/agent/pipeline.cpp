#include "printloop/agent.hpp"
#include "printloop/util.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <set>

namespace printloop::agent {

namespace {

constexpr const char* kDetectorPrompt =
    "You are a 3D printing expert inspecting a fused-deposition print paused after a layer. You receive top and "
    "front camera images of the latest layer and, after the first checkpoint, images of the previous layer. "
    "Identify visible failure modes on the latest layer only. Do not repeat defects visible only in the previous "
    "layer images that were already corrected. Allowed modes: warping, layer_separation, bed_adhesion, "
    "under_extrusion, over_extrusion, inconsistent_extrusion, stringing_oozing, blobs_zits, print_cracks, ghosting, "
    "ringing, elephant_foot. Answer with one fenced block:\n"
    "```report\nlayer: <number>\nno_failures: true|false\nobservations: <one line>\n"
    "failure: <mode> | severity=low|medium|high | evidence=<what is visible> | region=<optional>\n"
    "quality_note: <one line>\n```";

constexpr const char* kFramePrompt =
    "You prepare the reasoning for a print-correction planner. Choose the reasoning frame from the catalog that best "
    "fits the reported failures and state its focus. Answer with one fenced block:\n"
    "```frame\nframe: <frame id>\nfocus: <comma separated failure modes>\n```";

constexpr const char* kPlannerPrompt =
    "You plan actions for a paused 3D printer reachable only through the listed API. {} Every step must target an "
    "allowed object query (query:<object>), a single parameter command (gcode:<command>) or an allowed endpoint "
    "(endpoint:<id>). Never use excluded endpoints or commands. Answer with one fenced block:\n"
    "```plan\nframe: <frame id>\nstep: goal=<text> | target=<target> | expect=<expected observation>\n```";

constexpr const char* kExecutorPrompt =
    "You carry out a plan on a paused 3D printer, one action per turn, in the ReAct style. Think, then act. "
    "Actions: 'query <object>[:field,...]', 'gcode <command>', 'endpoint <id>', or 'finish' once nothing is "
    "pending. When an action fails, try the listed alternative. Answer with one fenced block:\n"
    "```react\nthought: <reasoning>\naction: <action>\n```";

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += sep;
        out += p;
    }
    return out;
}

std::string format_value(double v) { return fixed(v, 4); }

std::string catalog_text(const printer::EndpointCatalog& catalog) {
    std::string out = "Allowed endpoints:\n";
    for (const auto& e : catalog.allowed) out += fmt::format("- {} ({} {}): {}\n", e.id, e.method, e.path, e.description);
    out += "Queryable objects:\n";
    for (const auto& o : catalog.objects) out += fmt::format("- {}: {}\n", o.id, o.description);
    out += "Excluded (never use):\n";
    for (const auto& e : catalog.excluded) out += fmt::format("- {}: {}\n", e.id, e.reason);
    for (const auto& e : catalog.denied_commands) out += fmt::format("- {}: {}\n", e.id, e.reason);
    return out;
}

const std::map<std::string, std::string>& fallback_objects() {
    static const std::map<std::string, std::string> table = {
        {"motion_report", "toolhead"},
        {"toolhead", "motion_report"},
    };
    return table;
}

std::vector<std::string> alternatives_for(const std::string& target) {
    if (!target.starts_with("query:")) return {};
    auto arg = target.substr(6);
    const auto colon = arg.find(':');
    const auto object = arg.substr(0, colon);
    const auto it = fallback_objects().find(object);
    if (it == fallback_objects().end()) return {};
    // Field names differ between objects, so the fallback reads the whole object.
    return {"query:" + it->second};
}

double tolerance_for(const std::string& parameter, double expected) {
    if (parameter == "nozzle_target" || parameter == "bed_target") return 0.5;
    return 1e-3 * std::max(1.0, std::abs(expected));
}

std::string object_of(const std::string& target) {
    auto arg = target.substr(target.find(':') + 1);
    return std::string(trim(arg.substr(0, arg.find(':'))));
}

std::vector<std::string> fields_of(const std::string& target) {
    auto arg = target.substr(target.find(':') + 1);
    const auto colon = arg.find(':');
    std::vector<std::string> out;
    if (colon == std::string::npos) return out;
    std::string rest = arg.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        auto comma = rest.find(',', pos);
        if (comma == std::string::npos) comma = rest.size();
        const auto f = trim(std::string_view(rest).substr(pos, comma - pos));
        if (!f.empty()) out.emplace_back(f);
        pos = comma + 1;
    }
    return out;
}

}  // namespace

std::string object_for_parameter(const std::string& parameter) {
    if (parameter == "flow_factor" || parameter == "speed_factor" || parameter == "print_speed" ||
        parameter == "z_offset") {
        return "gcode_move";
    }
    if (parameter.starts_with("nozzle_") || parameter == "pressure_advance") return "extruder";
    if (parameter.starts_with("bed_")) return "heater_bed";
    if (parameter == "fan") return "fan";
    if (parameter.starts_with("retraction_")) return "firmware_retraction";
    throw std::invalid_argument("no object reports parameter '" + parameter + "'");
}

std::vector<Expectation> expectations_for(const gcode::ParameterChange& change,
                                          const std::map<std::string, double>& before) {
    using gcode::Parameter;
    auto prior = [&](const std::string& p) -> std::optional<double> {
        const auto it = before.find(p);
        if (it == before.end()) return std::nullopt;
        return it->second;
    };
    auto one = [&](const std::string& p, double v) { return std::vector<Expectation>{{p, prior(p), v}}; };
    switch (change.parameter) {
    case Parameter::flow_factor: return one("flow_factor", change.value);
    case Parameter::speed_factor: return one("speed_factor", change.value);
    case Parameter::nozzle_temp: return one("nozzle_target", change.value);
    case Parameter::bed_temp: return one("bed_target", change.value);
    case Parameter::fan: return one("fan", change.value);
    case Parameter::pressure_advance: return one("pressure_advance", change.value);
    case Parameter::retraction: {
        std::vector<Expectation> out;
        if (!std::isnan(change.value)) out.push_back({"retraction_length", prior("retraction_length"), change.value});
        if (!std::isnan(change.secondary)) {
            out.push_back({"retraction_speed", prior("retraction_speed"), change.secondary});
        }
        return out;
    }
    case Parameter::z_offset: {
        const auto b = prior("z_offset");
        return {{"z_offset", b, b.value_or(0.0) + change.value}};
    }
    }
    return {};
}

std::string describe_change(const Expectation& e) {
    auto show = [&](auto&& fmt_value) {
        return (e.before ? fmt_value(*e.before) : std::string("?")) + " → " + fmt_value(e.expected);
    };
    auto percent = [](double v) { return fmt::format("{}%", static_cast<long>(std::lround(v * 100.0))); };
    auto celsius = [](double v) { return fmt::format("{} °C", static_cast<long>(std::lround(v))); };
    if (e.parameter == "flow_factor") return "flow " + show(percent);
    if (e.parameter == "speed_factor") return "speed " + show(percent);
    if (e.parameter == "fan") return "fan " + show(percent);
    if (e.parameter == "nozzle_target") return "nozzle " + show(celsius);
    if (e.parameter == "bed_target") return "bed " + show(celsius);
    if (e.parameter == "pressure_advance") return "pressure advance " + show([](double v) { return fixed(v, 3) + " s"; });
    if (e.parameter == "retraction_length") {
        return "retraction length " + show([](double v) { return fixed(v, 1) + " mm"; });
    }
    if (e.parameter == "retraction_speed") {
        return "retraction speed " + show([](double v) { return fixed(v, 0) + " mm/s"; });
    }
    if (e.parameter == "z_offset") return "z-offset " + show([](double v) { return fixed(v, 3) + " mm"; });
    return e.parameter + " " + show(format_value);
}

Pipeline::Pipeline(llm::Backend& backend, printer::PrinterClient& client, AgentConfig config, EventLog* log)
    : backend_(backend), client_(client), config_(std::move(config)), log_(log) {}

void Pipeline::log(const CheckpointRecord& record, ModuleId module, std::string_view kind,
                   const nlohmann::json& payload) {
    if (log_) log_->write(record.checkpoint, to_string(module), kind, payload);
}

llm::ChatResponse Pipeline::ask(CheckpointRecord& record, ModuleId module, const std::string& schema,
                                const std::string& system, const std::string& user,
                                const std::vector<llm::ImagePart>& images) {
    llm::ChatRequest req;
    req.system_prompt = system;
    req.response_schema_hint = schema;
    req.context_budget_tokens = config_.context_budget_tokens;
    req.turns.push_back({"user", user, images});
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& i : images) labels.push_back(i.label);
    log(record, module, "request",
        {{"schema", schema}, {"text", user}, {"images", labels}, {"tokens", llm::estimate_tokens(req)}});
    if (state_) state_->append_message({record.checkpoint, std::string(to_string(module)), "request", user});
    auto resp = backend_.complete(req);
    log(record, module, "response",
        {{"text", resp.text},
         {"finish_reason", resp.finish_reason},
         {"input_tokens", resp.usage.input_tokens},
         {"output_tokens", resp.usage.output_tokens}});
    if (state_) state_->append_message({record.checkpoint, std::string(to_string(module)), "response", resp.text});
    return resp;
}

std::vector<std::pair<std::string, std::string>> Pipeline::base_observation(const CheckpointRecord& record,
                                                                            const CapturedImages& images) const {
    std::vector<std::pair<std::string, std::string>> obs = {
        {"checkpoint", std::to_string(record.checkpoint)},
        {"layer", std::to_string(record.layer_index + 1)},
        {"segment", std::to_string(record.segment_index + 1)},
        {"material", config_.material},
    };
    const auto& a = images.annotations;
    if (a.is_object() && a.contains("severities")) {
        for (const auto& [mode, v] : a["severities"].items()) obs.emplace_back("severity." + mode, fixed(v, 3));
    }
    if (a.is_object() && a.contains("cues") && a["cues"].contains("z")) {
        obs.emplace_back("cue.z", a["cues"]["z"].get<std::string>());
    }
    return obs;
}

FailureReport Pipeline::detect(CheckpointRecord& record, const CapturedImages& images) {
    if (images.now.empty()) throw std::invalid_argument("detection needs at least one current image");
    if (trim(record.part_description).empty()) throw std::invalid_argument("detection needs a part description");

    std::vector<llm::ImagePart> all = images.now;
    all.insert(all.end(), images.previous.begin(), images.previous.end());
    std::vector<std::string> labels;
    for (const auto& i : all) labels.push_back(i.label);

    std::string user = fmt::format(
        "Part: {}\nMaterial: {}\nCheckpoint {} after layer {} (segment {}).\nImages: {}.\n", record.part_description,
        config_.material, record.checkpoint, record.layer_index + 1, record.segment_index + 1, join(labels, ", "));
    if (!images.previous.empty()) {
        user += "Images labelled previous/* show the layer before; defects corrected since then must not be "
                "reported unless they are still visible on the latest layer.\n";
    }
    user += llm::format_observation(base_observation(record, images));

    std::string error;
    for (int attempt = 0; attempt <= config_.detect_retries; ++attempt) {
        std::string text = user;
        if (!error.empty()) {
            text += "\nYour previous answer could not be parsed (" + error + "). Reply with only the report block.";
        }
        const auto resp = ask(record, ModuleId::detector, "report", kDetectorPrompt, text, all);
        try {
            auto report = parse_report(resp.text);
            if (report.layer_index != record.layer_index) {
                spdlog::warn("detector answered for layer {}, expected {}", report.layer_index + 1,
                             record.layer_index + 1);
                report.layer_index = record.layer_index;
            }
            log(record, ModuleId::detector, "report", report.to_json());
            return report;
        } catch (const FormatError& e) {
            error = e.what();
            log(record, ModuleId::detector, "parse_error", {{"attempt", attempt + 1}, {"error", error}});
        }
    }
    throw FormatError("detector output unparseable after retry: " + error);
}

ActionPlan Pipeline::plan(PlanKind kind, CheckpointRecord& record, const CapturedImages& images) {
    const auto module = kind == PlanKind::information ? ModuleId::info_planner : ModuleId::solution_planner;
    if (!record.report) throw std::logic_error("planning without a failure report");
    const auto modes = record.report->modes();

    // Stage 1: pick and adapt a reasoning frame.
    const auto ranked = rank_frames(kind, modes);
    auto obs = base_observation(record, images);
    obs.emplace_back("kind", std::string(to_string(kind)));
    for (const auto m : modes) obs.emplace_back("failure", std::string(printloop::to_string(m)));
    auto frame_obs = obs;
    for (const auto& id : ranked) frame_obs.emplace_back("frame.candidate", id);
    std::string catalog_lines;
    for (const auto& f : frame_catalog()) catalog_lines += fmt::format("- {}: {}\n", f.id, f.description);
    const auto frame_resp =
        ask(record, module, "frame", kFramePrompt,
            fmt::format("Failure report:\n{}Reasoning frames:\n{}{}", format_report(*record.report), catalog_lines,
                        llm::format_observation(frame_obs)),
            {});
    std::string frame_id = ranked.front();
    std::string focus;
    {
        std::size_t pos = 0;
        const auto& t = frame_resp.text;
        while (pos < t.size()) {
            auto nl = t.find('\n', pos);
            if (nl == std::string::npos) nl = t.size();
            const auto line = trim(std::string_view(t).substr(pos, nl - pos));
            if (line.starts_with("frame:") && find_frame(trim(line.substr(6)))) frame_id = std::string(trim(line.substr(6)));
            if (line.starts_with("focus:")) focus = std::string(trim(line.substr(6)));
            pos = nl + 1;
        }
    }
    const auto* frame = find_frame(frame_id);
    log(record, module, "frame", {{"frame", frame_id}, {"focus", focus}});

    // Stage 2: the plan itself.
    obs.emplace_back("frame", frame_id);
    obs.emplace_back("nominal.speed", fixed(config_.nominal_speed_mm_s, 1));
    if (kind == PlanKind::solution) {
        if (record.gathered_info.empty()) {
            obs.emplace_back("param.none", "no parameters could be read this checkpoint");
        }
        for (const auto& [k, v] : record.gathered_info) obs.emplace_back("param." + k, format_value(v));
    }
    const std::string system =
        fmt::format(fmt::runtime(kPlannerPrompt),
                    kind == PlanKind::information
                        ? "Plan which printer readings are needed to explain the reported failures; use queries only."
                        : "Plan the smallest set of parameter changes that corrects the reported failures.") +
        "\nReasoning frame (" + frame->id + "): " + frame->prompt + (focus.empty() ? "" : "\nFocus: " + focus);

    std::string rejection;
    for (int attempt = 0; attempt <= config_.plan_regenerations; ++attempt) {
        auto attempt_obs = obs;
        if (!rejection.empty()) attempt_obs.emplace_back("rejected", rejection);
        std::string user = fmt::format("Failure report:\n{}{}", format_report(*record.report),
                                       catalog_text(client_.catalog()));
        if (!rejection.empty()) user += "\nThe previous plan was rejected: " + rejection + "\n";
        user += llm::format_observation(attempt_obs);
        const auto resp = ask(record, module, "plan", system, user, {});
        try {
            auto p = parse_plan(resp.text);
            p.reasoning_frame = frame_id;
            if (kind == PlanKind::information && p.steps.empty()) throw FormatError("information plan has no steps");
            for (const auto& s : p.steps) {
                if (auto why = check_target(client_.catalog(), s.target)) throw FormatError(*why);
                const bool query = s.target.starts_with("query:") || s.target.starts_with("endpoint:");
                if (kind == PlanKind::information && !query) {
                    throw FormatError("information plans may only read: " + s.target);
                }
            }
            log(record, module, "plan", p.to_json());
            return p;
        } catch (const FormatError& e) {
            rejection = e.what();
            log(record, module, "plan_rejected", {{"attempt", attempt + 1}, {"reason", rejection}});
        }
    }
    throw FormatError("plan rejected after regeneration: " + rejection);
}

std::optional<double> Pipeline::read_parameter(const std::string& parameter) {
    const auto q = client_.query_objects({object_for_parameter(parameter)});
    if (!q.result.ok()) return std::nullopt;
    const auto flat = q.snapshot.flatten();
    const auto it = flat.find(parameter);
    if (it == flat.end()) return std::nullopt;
    return it->second;
}

ReActTrace Pipeline::execute(PlanKind kind, const ActionPlan& plan, CheckpointRecord& record) {
    const auto module = kind == PlanKind::information ? ModuleId::info_executor : ModuleId::solution_executor;
    struct StepState {
        std::string target;
        std::vector<std::string> options;
        bool done = false;
        bool abandoned = false;
    };
    std::vector<StepState> steps;
    for (const auto& s : plan.steps) {
        StepState st{s.target, {s.target}};
        for (auto& alt : alternatives_for(s.target)) st.options.push_back(alt);
        steps.push_back(std::move(st));
    }
    std::set<std::string> failed;
    ReActTrace trace;
    trace.outcome = ReActOutcome::aborted;
    std::string last_observation = "none yet";

    auto pending_count = [&] {
        return std::count_if(steps.begin(), steps.end(), [](auto& s) { return !s.done && !s.abandoned; });
    };

    for (;;) {
        std::vector<std::pair<std::string, std::string>> obs = {
            {"iteration", std::to_string(trace.iterations.size() + 1)},
            {"max_iterations", std::to_string(config_.max_react_iters)},
        };
        for (const auto& s : steps) {
            if (s.done || s.abandoned) continue;
            obs.emplace_back("pending", s.target);
            for (std::size_t i = 1; i < s.options.size(); ++i) obs.emplace_back("candidate", s.target + " => " + s.options[i]);
        }
        for (const auto& f : failed) obs.emplace_back("failed", f);
        const auto user = fmt::format("Plan ({} steps, frame {}):\n{}Last observation: {}\n{}", plan.steps.size(),
                                      plan.reasoning_frame, format_plan(plan), last_observation,
                                      llm::format_observation(obs));
        const auto resp = ask(record, module, "react", kExecutorPrompt, user, {});
        ReActStep step;
        try {
            step = parse_react(resp.text);
        } catch (const FormatError& e) {
            log(record, module, "parse_error", {{"error", e.what()}});
            trace.outcome = ReActOutcome::aborted;
            break;
        }
        if (to_lower(trim(step.action)) == "finish") {
            trace.outcome = pending_count() == 0 ? ReActOutcome::completed : ReActOutcome::aborted;
            break;
        }
        if (static_cast<int>(trace.iterations.size()) >= config_.max_react_iters) {
            trace.outcome = ReActOutcome::exhausted;
            break;
        }

        ReActIteration it{step.thought, step.action, {}};
        const auto space = step.action.find(' ');
        const auto verb = to_lower(step.action.substr(0, space));
        const auto arg = space == std::string::npos ? std::string{} : std::string(trim(step.action.substr(space + 1)));
        const auto target = verb + ":" + arg;
        bool success = false;

        if (auto why = check_target(client_.catalog(), target)) {
            it.observation = "rejected: " + *why;
        } else if (verb == "query") {
            const auto object = object_of(target);
            auto q = client_.query_objects({object});
            if (!q.result.ok()) {
                it.observation = fmt::format("{}: {}", printer::to_string(q.result.status), q.result.message);
            } else if (!q.absent.empty()) {
                it.observation = "absent: printer does not report '" + object + "'";
            } else {
                auto status = q.status;
                if (const auto fields = fields_of(target); !fields.empty()) {
                    nlohmann::json sub = nlohmann::json::object();
                    for (const auto& f : fields) {
                        if (status[object].contains(f)) sub[f] = status[object][f];
                    }
                    status = {{object, sub}};
                }
                const auto flat = printer::PrinterSnapshot::from_status(status).flatten();
                std::vector<std::string> parts;
                for (const auto& [k, v] : flat) {
                    parts.push_back(k + "=" + format_value(v));
                    if (kind == PlanKind::information) record.gathered_info[k] = v;
                }
                it.observation = "ok: " + (parts.empty() ? std::string("no numeric fields") : join(parts, ", "));
                success = true;
            }
        } else if (verb == "gcode") {
            std::map<std::string, double> before;
            std::vector<gcode::ParameterChange> changes;
            std::set<std::string> objects;
            std::size_t pos = 0;
            while (pos <= arg.size()) {
                auto nl = arg.find('\n', pos);
                if (nl == std::string::npos) nl = arg.size();
                if (auto c = gcode::parse_parameter_command(trim(std::string_view(arg).substr(pos, nl - pos)))) {
                    changes.push_back(*c);
                }
                pos = nl + 1;
            }
            for (const auto& c : changes) {
                for (const auto& e : expectations_for(c, {})) objects.insert(object_for_parameter(e.parameter));
            }
            for (const auto& o : objects) {
                const auto q = client_.query_objects({o});
                if (q.result.ok()) {
                    for (const auto& [k, v] : q.snapshot.flatten()) before[k] = v;
                }
            }
            const auto r = client_.run_gcode(arg);
            ExecutedAction action{arg, r.status, r.message, {}};
            for (const auto& c : changes) {
                for (auto& e : expectations_for(c, before)) action.expectations.push_back(e);
            }
            record.executed_actions.push_back(action);
            nlohmann::json changes_json = nlohmann::json::array();
            for (const auto& e : action.expectations) {
                changes_json.push_back({{"parameter", e.parameter},
                                        {"before", e.before ? nlohmann::json(*e.before) : nlohmann::json(nullptr)},
                                        {"expected", e.expected}});
            }
            log(record, module, "action",
                {{"command", arg},
                 {"status", std::string(printer::to_string(r.status))},
                 {"message", r.message},
                 {"changes", changes_json}});
            it.observation = r.ok() ? "ok: command accepted"
                                    : fmt::format("{}: {}", printer::to_string(r.status), r.message);
            success = r.ok();
        } else if (verb == "endpoint" && arg == "server.info") {
            const auto r = client_.server_info();
            it.observation = r.ok() ? "ok: " + r.body.dump() : fmt::format("{}: {}", printer::to_string(r.status), r.message);
            success = r.ok();
        } else {
            it.observation = "rejected: action '" + step.action + "' is not supported";
        }

        for (auto& s : steps) {
            if (s.done || s.abandoned) continue;
            if (std::find(s.options.begin(), s.options.end(), target) == s.options.end()) continue;
            if (success) {
                s.done = true;
            } else {
                failed.insert(target);
                s.abandoned = std::all_of(s.options.begin(), s.options.end(), [&](auto& o) { return failed.count(o); });
            }
            break;
        }
        if (!success) failed.insert(target);
        log(record, module, "iteration", {{"thought", it.thought}, {"action", it.action}, {"observation", it.observation}});
        if (state_) state_->append_message({record.checkpoint, std::string(to_string(module)), "observation", it.observation});
        last_observation = it.observation;
        trace.iterations.push_back(std::move(it));
    }

    if (trace.outcome == ReActOutcome::completed &&
        std::any_of(steps.begin(), steps.end(), [](auto& s) { return s.abandoned; })) {
        // Every step was attempted, but some could not be carried out by any target.
        trace.outcome = kind == PlanKind::information ? ReActOutcome::completed : ReActOutcome::aborted;
    }
    if (kind == PlanKind::information) log(record, module, "gathered", record.gathered_info);
    log(record, module, "trace", trace.to_json());
    return trace;
}

void Pipeline::handoff(CheckpointRecord& record) {
    std::vector<std::string> changes;
    std::vector<std::string> problems;
    for (const auto& action : record.executed_actions) {
        if (action.status != printer::ApiStatus::ok || action.expectations.empty()) continue;
        auto verify = [&](bool reissued) {
            std::vector<Verification> out;
            for (const auto& e : action.expectations) {
                Verification v{e.parameter, e.expected, read_parameter(e.parameter), false, reissued};
                v.ok = v.observed && std::abs(*v.observed - e.expected) <= tolerance_for(e.parameter, e.expected);
                out.push_back(v);
            }
            return out;
        };
        auto checks = verify(false);
        const bool mismatch = std::any_of(checks.begin(), checks.end(), [](auto& v) { return !v.ok && v.observed; });
        if (mismatch) {
            log(record, ModuleId::handoff, "reissue", {{"command", action.command}});
            const auto r = client_.run_gcode(action.command);
            if (r.ok()) checks = verify(true);
        }
        for (const auto& v : checks) {
            log(record, ModuleId::handoff, "verification",
                {{"parameter", v.parameter},
                 {"expected", v.expected},
                 {"observed", v.observed ? nlohmann::json(*v.observed) : nlohmann::json(nullptr)},
                 {"ok", v.ok},
                 {"reissued", v.reissued}});
            record.verifications.push_back(v);
            if (!v.ok) problems.push_back(v.parameter);
        }
        for (const auto& e : action.expectations) changes.push_back(describe_change(e));
    }

    std::string text = fmt::format("checkpoint {} (layer {}", record.checkpoint, record.layer_index + 1);
    if (record.segment_index != 0) text += fmt::format(", segment {}", record.segment_index + 1);
    text += "): ";
    if (record.report && !record.report->failures.empty()) {
        std::vector<std::string> names;
        for (const auto& f : record.report->failures) {
            names.push_back(fmt::format("{} ({})", printloop::to_string(f.mode), to_string(f.severity)));
        }
        text += "detected " + join(names, ", ") + "; ";
    } else if (record.report) {
        text += "no failures detected; ";
    }
    text += changes.empty() ? "no action taken" : join(changes, "; ");
    if (!problems.empty()) text += "; verification failed for " + join(problems, ", ");
    if (record.degraded) {
        std::vector<std::string> failed_modules;
        for (const auto& [m, s] : record.module_status) {
            if (s == ModuleStatus::failed) failed_modules.emplace_back(to_string(m));
        }
        text += " [degraded: " + (failed_modules.empty() ? std::string("module failure") : join(failed_modules, ", ")) +
                " failed]";
    }
    record.commentary = text;
    log(record, ModuleId::handoff, "commentary", {{"text", text}});

    const auto r = client_.resume();
    log(record, ModuleId::handoff, "resume",
        {{"status", std::string(printer::to_string(r.status))}, {"message", r.message}, {"warning", r.warning}});
    if (!r.ok()) throw std::runtime_error("resume failed: " + r.message + "; print left paused");
    record.resumed = true;
}

void Pipeline::run_checkpoint(StateDictionary& state, CheckpointRecord& record, const CapturedImages& images) {
    state_ = &state;
    record.part_description = config_.part_description;

    auto run = [&](ModuleId m, auto&& body) {
        record.module_sequence.emplace_back(to_string(m));
        log(record, ModuleId::supervisor, "route", {{"next", std::string(to_string(m))}});
        if (faults_ && faults_(record.checkpoint, m)) {
            log(record, m, "fault", {{"injected", true}});
            record.set_status(m, ModuleStatus::failed);
            record.degraded = true;
            return;
        }
        try {
            const bool ok = body();
            record.set_status(m, ok ? ModuleStatus::done : ModuleStatus::failed);
            if (!ok) record.degraded = true;
        } catch (const std::exception& e) {
            log(record, m, "error", {{"message", e.what()}});
            spdlog::warn("checkpoint {}: {} failed: {}", record.checkpoint, to_string(m), e.what());
            record.set_status(m, ModuleStatus::failed);
            record.degraded = true;
        }
        log(record, m, "status", {{"status", std::string(to_string(record.status(m)))}});
    };

    run(ModuleId::detector, [&] {
        record.report = detect(record, images);
        return true;
    });

    while (const auto next = supervise(record)) {
        switch (*next) {
        case ModuleId::info_planner:
            run(*next, [&] {
                record.info_plan = plan(PlanKind::information, record, images);
                return true;
            });
            break;
        case ModuleId::info_executor:
            run(*next, [&] {
                record.info_trace = execute(PlanKind::information, *record.info_plan, record);
                return record.info_trace->outcome == ReActOutcome::completed;
            });
            break;
        case ModuleId::solution_planner:
            run(*next, [&] {
                record.solution_plan = plan(PlanKind::solution, record, images);
                return true;
            });
            break;
        case ModuleId::solution_executor:
            run(*next, [&] {
                record.solution_trace = execute(PlanKind::solution, *record.solution_plan, record);
                return record.solution_trace->outcome == ReActOutcome::completed;
            });
            break;
        case ModuleId::handoff: {
            record.module_sequence.emplace_back("handoff");
            log(record, ModuleId::supervisor, "route", {{"next", "handoff"}});
            try {
                handoff(record);
                record.set_status(ModuleId::handoff, ModuleStatus::done);
            } catch (...) {
                record.set_status(ModuleId::handoff, ModuleStatus::failed);
                throw;
            }
            break;
        }
        default: throw std::logic_error("supervisor routed to an unexpected module");
        }
    }
    record.set_status(ModuleId::supervisor, ModuleStatus::done);
    log(record, ModuleId::supervisor, "sequence", {{"modules", record.module_sequence}, {"degraded", record.degraded}});
}

}  // namespace printloop::agent
