#include "printloop/failure_mode.hpp"
#include "printloop/gcode.hpp"
#include "printloop/llm.hpp"
#include "printloop/util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

namespace printloop::llm {

namespace {

std::vector<std::string> all_values(const Observation& obs, const std::string& key) {
    std::vector<std::string> out;
    const auto [lo, hi] = obs.equal_range(key);
    for (auto it = lo; it != hi; ++it) out.push_back(it->second);
    return out;
}

std::optional<std::string> value(const Observation& obs, const std::string& key) {
    const auto it = obs.find(key);
    if (it == obs.end()) return std::nullopt;
    return it->second;
}

std::optional<double> number(const Observation& obs, const std::string& key) {
    const auto v = value(obs, key);
    if (!v) return std::nullopt;
    try {
        return std::stod(*v);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::set<FailureMode> failures_of(const Observation& obs) {
    std::set<FailureMode> out;
    for (const auto& v : all_values(obs, "failure")) {
        if (const auto m = failure_mode_from_alias(v)) out.insert(*m);
    }
    return out;
}

const char* evidence_for(FailureMode m) {
    switch (m) {
    case FailureMode::under_extrusion: return "gaps between adjacent lines and thin, translucent infill";
    case FailureMode::over_extrusion: return "overfilled lines with ridges along the perimeter";
    case FailureMode::inconsistent_extrusion: return "line width varies along the path with intermittent gaps";
    case FailureMode::stringing_oozing: return "fine strands bridging travel moves outside the part";
    case FailureMode::layer_separation: return "visible horizontal seams between the latest layers";
    case FailureMode::bed_adhesion: return "first layer lines not fused to the bed, edges loose";
    case FailureMode::warping: return "corners lifting away from the bed";
    case FailureMode::blobs_zits: return "small raised bumps scattered on the top surface";
    case FailureMode::print_cracks: return "cracks running between layers";
    case FailureMode::ghosting: return "echoes of sharp features on nearby surfaces";
    case FailureMode::ringing: return "ripples after direction changes";
    case FailureMode::elephant_foot: return "first layers bulging outward";
    }
    return "visible defect";
}

std::string block(const std::string& kind, const std::vector<std::string>& lines) {
    std::string out = "```" + kind + "\n";
    for (const auto& l : lines) out += l + "\n";
    out += "```\n";
    return out;
}

std::string gcode_target(const gcode::ParameterChange& change) {
    const auto lines = gcode::render_parameter_command(change);
    std::string script;
    for (const auto& l : lines) script += (script.empty() ? "" : " ") + l;
    return "gcode:" + script;
}

}  // namespace

namespace oracle {

std::string severity_label(double severity) {
    if (severity >= 0.7) return "high";
    if (severity >= 0.5) return "medium";
    return "low";
}

std::string detect(const Observation& obs) {
    const auto layer = value(obs, "layer").value_or("0");
    std::vector<std::pair<FailureMode, double>> found;
    bool any = false;
    for (const auto m : kAllFailureModes) {
        const auto s = number(obs, "severity." + std::string(to_string(m)));
        if (!s) continue;
        any = true;
        if (*s >= kReportThreshold) found.emplace_back(m, *s);
    }
    if (!any) throw BackendError("oracle: detection request carries no severities");

    std::vector<std::string> lines = {"layer: " + layer};
    if (found.empty()) {
        lines.push_back("no_failures: true");
        lines.push_back("observations: uniform lines, no visible defects on the latest layer");
        lines.push_back("quality_note: good");
    } else {
        lines.push_back("no_failures: false");
        std::string names;
        for (const auto& [m, s] : found) names += (names.empty() ? "" : ", ") + std::string(to_string(m));
        lines.push_back("observations: visible defects: " + names);
        for (const auto& [m, s] : found) {
            auto line = fmt::format("failure: {} | severity={} | evidence={}", to_string(m), severity_label(s),
                                    evidence_for(m));
            if (m == FailureMode::layer_separation || m == FailureMode::bed_adhesion) {
                if (const auto cue = value(obs, "cue.z")) line += " | region=nozzle " + *cue;
            }
            lines.push_back(line);
        }
        const double worst = std::max_element(found.begin(), found.end(), [](auto& a, auto& b) {
                                 return a.second < b.second;
                             })->second;
        lines.push_back("quality_note: " + std::string(worst >= 0.7 ? "poor" : "fair"));
    }
    return block("report", lines);
}

std::string frame(const Observation& obs) {
    const auto candidates = all_values(obs, "frame.candidate");
    if (candidates.empty()) throw BackendError("oracle: no reasoning frames offered");
    std::string focus;
    for (const auto m : failures_of(obs)) focus += (focus.empty() ? "" : ", ") + std::string(to_string(m));
    return block("frame", {"frame: " + std::string(trim(candidates.front())),
                           "focus: " + (focus.empty() ? std::string("general") : focus)});
}

std::string plan(const Observation& obs) {
    const auto kind = value(obs, "kind").value_or("information");
    const auto modes = failures_of(obs);
    auto has = [&](FailureMode m) { return modes.count(m) > 0; };
    const bool extrusion = has(FailureMode::under_extrusion) || has(FailureMode::inconsistent_extrusion);
    const bool z_issue = has(FailureMode::bed_adhesion) || has(FailureMode::layer_separation);
    std::vector<std::string> lines;
    if (const auto f = value(obs, "frame")) lines.push_back("frame: " + *f);

    if (kind == "information") {
        struct Query {
            const char* object;
            const char* goal;
            const char* expect;
            bool wanted;
        };
        const bool over = has(FailureMode::over_extrusion) || has(FailureMode::blobs_zits);
        const Query queries[] = {
            {"gcode_move", "read flow, speed factor and z-offset", "extrude_factor, speed_factor, speed, homing_origin",
             extrusion || over || z_issue || has(FailureMode::elephant_foot)},
            {"extruder", "read nozzle temperature and pressure advance", "temperature, target, pressure_advance",
             extrusion || over || has(FailureMode::stringing_oozing) || z_issue},
            {"firmware_retraction", "read retraction settings", "retract_length, retract_speed",
             has(FailureMode::stringing_oozing) || has(FailureMode::blobs_zits)},
            {"fan", "read part cooling fan speed", "speed",
             has(FailureMode::stringing_oozing) || has(FailureMode::warping) || has(FailureMode::print_cracks) ||
                 z_issue},
            {"heater_bed", "read bed temperature", "temperature, target",
             has(FailureMode::warping) || has(FailureMode::bed_adhesion) || has(FailureMode::elephant_foot)},
            {"toolhead", "read motion limits", "max_accel", has(FailureMode::ghosting) || has(FailureMode::ringing)},
        };
        for (const auto& q : queries) {
            if (!q.wanted) continue;
            lines.push_back(fmt::format("step: goal={} | target=query:{} | expect={}", q.goal, q.object, q.expect));
        }
        if (lines.size() == (value(obs, "frame") ? 1u : 0u)) {
            lines.push_back("step: goal=read current process state | target=query:gcode_move | expect=extrude_factor");
        }
        return block("plan", lines);
    }

    using gcode::Parameter;
    using gcode::ParameterChange;
    auto param = [&](const char* name) { return number(obs, std::string("param.") + name); };
    std::size_t steps = 0;
    auto add = [&](const std::string& goal, const ParameterChange& change, const std::string& expect) {
        lines.push_back(fmt::format("step: goal={} | target={} | expect={}", goal, gcode_target(change), expect));
        ++steps;
    };

    if (extrusion) {
        const double flow = param("flow_factor").value_or(1.0);
        // Flow steps toward 105 %, then 110 %, never beyond.
        if (flow < 1.05 - 1e-9) {
            add("raise extrusion multiplier", {Parameter::flow_factor, 1.05}, "extrude_factor 1.05");
        } else if (flow < 1.10 - 1e-9) {
            add("raise extrusion multiplier", {Parameter::flow_factor, 1.10}, "extrude_factor 1.10");
        }
    }
    if (has(FailureMode::stringing_oozing)) {
        const auto len = param("retraction_length");
        const auto spd = param("retraction_speed");
        if (len && spd) {
            add("strengthen retraction", {Parameter::retraction, *len + 0.5, *spd + 5.0},
                fmt::format("retract_length {}, retract_speed {}", fixed(*len + 0.5, 3), fixed(*spd + 5.0, 1)));
        }
    }
    if (z_issue) {
        const bool lowered = value(obs, "cue.z").value_or("raised") == "lowered";
        const double adjust = lowered ? 0.05 : -0.05;
        add("correct z-offset", {Parameter::z_offset, adjust}, "homing_origin z changed by " + fixed(adjust, 3));
    }
    if (extrusion) {
        const auto speed = param("print_speed");
        const auto nominal = number(obs, "nominal.speed");
        const double sf = param("speed_factor").value_or(1.0);
        if (speed && nominal && *speed > *nominal + 1e-9 && sf > 0.75 + 1e-9) {
            const double target = std::max(75.0, std::round(sf * 100.0) - 25.0) / 100.0;
            add("slow down printing", {Parameter::speed_factor, target}, "speed_factor " + fixed(target, 2));
        }
    }
    if (has(FailureMode::warping)) {
        const double bed = param("bed_target").value_or(60.0);
        add("raise bed temperature", {Parameter::bed_temp, bed + 5.0}, "heater_bed target " + fixed(bed + 5.0, 0));
    }
    if (z_issue && to_lower(value(obs, "material").value_or("")) == "tpu") {
        const auto nozzle = param("nozzle_target");
        if (!nozzle || std::abs(*nozzle - 220.0) > 1e-9) {
            add("raise nozzle temperature for TPU adhesion", {Parameter::nozzle_temp, 220.0}, "extruder target 220");
        }
    }
    if (steps == 0) lines.push_back("note: no parameter change indicated");
    return block("plan", lines);
}

std::string react(const Observation& obs) {
    const auto pending = all_values(obs, "pending");
    if (pending.empty()) return block("react", {"thought: every plan step has been carried out", "action: finish"});
    const auto failed_list = all_values(obs, "failed");
    const std::set<std::string> failed(failed_list.begin(), failed_list.end());
    const auto step = trim(pending.front());

    std::vector<std::string> options = {std::string(step)};
    for (const auto& c : all_values(obs, "candidate")) {
        const auto arrow = c.find("=>");
        if (arrow == std::string::npos) continue;
        if (trim(std::string_view(c).substr(0, arrow)) == step) {
            options.emplace_back(trim(std::string_view(c).substr(arrow + 2)));
        }
    }
    const auto pick = std::find_if(options.begin(), options.end(), [&](const auto& o) { return !failed.count(o); });
    if (pick == options.end()) {
        return block("react", {"thought: no target left for " + std::string(step), "action: finish"});
    }
    const auto colon = pick->find(':');
    const auto verb = pick->substr(0, colon);
    const auto arg = colon == std::string::npos ? std::string{} : pick->substr(colon + 1);
    const auto thought = *pick == step ? "next plan step is " + *pick
                                       : "previous attempt failed, trying alternative " + *pick;
    return block("react", {"thought: " + thought, "action: " + verb + " " + arg});
}

}  // namespace oracle

ChatResponse OracleBackend::complete(const ChatRequest& request) {
    const auto start = std::chrono::steady_clock::now();
    check_budget(request);
    const auto obs = find_observation(request);
    if (!obs) throw BackendError("oracle: request has no observation block");
    ChatResponse r;
    const auto& hint = request.response_schema_hint;
    if (hint == "report") {
        r.text = oracle::detect(*obs);
    } else if (hint == "frame") {
        r.text = oracle::frame(*obs);
    } else if (hint == "plan") {
        r.text = oracle::plan(*obs);
    } else if (hint == "react") {
        r.text = oracle::react(*obs);
    } else {
        throw BackendError("oracle: unknown response schema '" + hint + "'");
    }
    r.finish_reason = "stop";
    r.usage.input_tokens = estimate_tokens(request);
    r.usage.output_tokens = static_cast<long long>((r.text.size() + 2) / 3);
    r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return r;
}

}  // namespace printloop::llm
