#include "printloop/agent.hpp"
#include "printloop/util.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>

namespace printloop::agent {

namespace {

/// Body of the first ```<kind> block, or the whole text when there is no fence.
std::string_view block_body(std::string_view text, std::string_view kind) {
    const std::string open = "```" + std::string(kind);
    auto begin = text.find(open);
    if (begin == std::string_view::npos) return text;
    begin = text.find('\n', begin);
    if (begin == std::string_view::npos) return {};
    ++begin;
    const auto end = text.find("```", begin);
    return text.substr(begin, end == std::string_view::npos ? std::string_view::npos : end - begin);
}

std::vector<std::pair<std::string, std::string>> key_values(std::string_view body) {
    std::vector<std::pair<std::string, std::string>> out;
    std::size_t pos = 0;
    while (pos < body.size()) {
        auto nl = body.find('\n', pos);
        if (nl == std::string_view::npos) nl = body.size();
        auto line = trim(body.substr(pos, nl - pos));
        pos = nl + 1;
        if (line.starts_with("- ")) line = trim(line.substr(2));
        const auto colon = line.find(':');
        if (colon == std::string_view::npos) continue;
        out.emplace_back(to_lower(trim(line.substr(0, colon))), std::string(trim(line.substr(colon + 1))));
    }
    return out;
}

/// "a | k=v | k2=v2" -> head "a" and fields.
std::pair<std::string, std::map<std::string, std::string>> split_fields(std::string_view value) {
    std::pair<std::string, std::map<std::string, std::string>> out;
    bool first = true;
    std::size_t pos = 0;
    while (pos <= value.size()) {
        auto bar = value.find(" | ", pos);
        if (bar == std::string_view::npos) bar = value.size();
        const auto part = trim(value.substr(pos, bar - pos));
        const auto eq = part.find('=');
        if (first && eq == std::string_view::npos) {
            out.first = std::string(part);
        } else if (eq != std::string_view::npos) {
            out.second[to_lower(trim(part.substr(0, eq)))] = std::string(trim(part.substr(eq + 1)));
        }
        first = false;
        pos = bar + 3;
    }
    return out;
}

bool parse_bool(const std::string& v) {
    const auto l = to_lower(v);
    if (l == "true" || l == "yes" || l == "1") return true;
    if (l == "false" || l == "no" || l == "0") return false;
    throw FormatError("expected true/false, got '" + v + "'");
}

}  // namespace

std::string_view to_string(Severity s) {
    switch (s) {
    case Severity::low: return "low";
    case Severity::medium: return "medium";
    case Severity::high: return "high";
    }
    return "low";
}

Severity severity_from_string(std::string_view s) {
    const auto l = to_lower(trim(s));
    if (l == "low" || l == "minor") return Severity::low;
    if (l == "medium" || l == "moderate") return Severity::medium;
    if (l == "high" || l == "severe") return Severity::high;
    throw FormatError("unknown severity '" + std::string(s) + "'");
}

bool FailureReport::has(FailureMode m) const {
    return std::any_of(failures.begin(), failures.end(), [&](const Failure& f) { return f.mode == m; });
}

std::set<FailureMode> FailureReport::modes() const {
    std::set<FailureMode> out;
    for (const auto& f : failures) out.insert(f.mode);
    return out;
}

void FailureReport::validate() const {
    if (no_failures != failures.empty()) throw FormatError("no_failures disagrees with the failure list");
    if (modes().size() != failures.size()) throw FormatError("duplicate failure mode in report");
}

nlohmann::json FailureReport::to_json() const {
    nlohmann::json fs = nlohmann::json::array();
    for (const auto& f : failures) {
        nlohmann::json j = {{"mode", std::string(printloop::to_string(f.mode))},
                            {"severity", std::string(agent::to_string(f.severity))},
                            {"evidence", f.evidence}};
        if (f.region_hint) j["region_hint"] = *f.region_hint;
        fs.push_back(j);
    }
    return {{"layer_index", layer_index},
            {"observations", observations},
            {"failures", fs},
            {"no_failures", no_failures},
            {"quality_note", quality_note}};
}

FailureReport FailureReport::from_json(const nlohmann::json& j) {
    FailureReport r;
    r.layer_index = j.at("layer_index");
    r.observations = j.value("observations", "");
    r.no_failures = j.at("no_failures");
    r.quality_note = j.value("quality_note", "");
    for (const auto& f : j.at("failures")) {
        const auto mode = failure_mode_from_string(f.at("mode").get<std::string>());
        if (!mode) throw FormatError("unknown failure mode in state: " + f.at("mode").get<std::string>());
        Failure out{*mode, f.value("evidence", ""), severity_from_string(f.at("severity").get<std::string>()), {}};
        if (f.contains("region_hint")) out.region_hint = f["region_hint"].get<std::string>();
        r.failures.push_back(out);
    }
    return r;
}

FailureReport parse_report(std::string_view text) {
    FailureReport r;
    std::optional<bool> no_failures;
    bool saw_layer = false;
    for (const auto& [k, v] : key_values(block_body(text, "report"))) {
        if (k == "layer") {
            try {
                r.layer_index = std::stoi(v) - 1;
            } catch (const std::exception&) {
                throw FormatError("bad layer number '" + v + "'");
            }
            saw_layer = true;
        } else if (k == "no_failures") {
            no_failures = parse_bool(v);
        } else if (k == "observations") {
            r.observations = v;
        } else if (k == "quality_note") {
            r.quality_note = v;
        } else if (k == "failure") {
            auto [head, fields] = split_fields(v);
            const auto mode = failure_mode_from_alias(head);
            if (!mode) {
                spdlog::warn("ignoring unknown failure mode '{}'", head);
                continue;
            }
            if (r.has(*mode)) continue;
            Failure f{*mode, fields["evidence"], Severity::low, {}};
            if (fields.count("severity")) f.severity = severity_from_string(fields["severity"]);
            if (fields.count("region")) f.region_hint = fields["region"];
            r.failures.push_back(f);
        }
    }
    if (!no_failures) throw FormatError("report has no no_failures field");
    if (!saw_layer) throw FormatError("report has no layer field");
    // A "no failures" verdict listing failures is contradictory; trust the list.
    r.no_failures = r.failures.empty();
    if (*no_failures && !r.failures.empty()) spdlog::warn("report says no_failures but lists failures");
    r.validate();
    return r;
}

std::string format_report(const FailureReport& report) {
    std::string out = "```report\n";
    out += fmt::format("layer: {}\n", report.layer_index + 1);
    out += fmt::format("no_failures: {}\n", report.no_failures ? "true" : "false");
    if (!report.observations.empty()) out += "observations: " + report.observations + "\n";
    for (const auto& f : report.failures) {
        out += fmt::format("failure: {} | severity={} | evidence={}", printloop::to_string(f.mode),
                           agent::to_string(f.severity), f.evidence);
        if (f.region_hint) out += " | region=" + *f.region_hint;
        out += "\n";
    }
    if (!report.quality_note.empty()) out += "quality_note: " + report.quality_note + "\n";
    return out + "```\n";
}

std::string_view to_string(PlanKind k) { return k == PlanKind::information ? "information" : "solution"; }

nlohmann::json ActionPlan::to_json() const {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& st : steps) {
        s.push_back({{"goal", st.goal}, {"target", st.target}, {"expected_observation", st.expected_observation}});
    }
    return {{"reasoning_frame", reasoning_frame}, {"steps", s}};
}

ActionPlan ActionPlan::from_json(const nlohmann::json& j) {
    ActionPlan p;
    p.reasoning_frame = j.value("reasoning_frame", "");
    for (const auto& s : j.at("steps")) {
        p.steps.push_back({s.value("goal", ""), s.at("target"), s.value("expected_observation", "")});
    }
    return p;
}

ActionPlan parse_plan(std::string_view text) {
    const auto body = block_body(text, "plan");
    if (body.size() == text.size() && text.find("step:") == std::string_view::npos &&
        text.find("note:") == std::string_view::npos) {
        throw FormatError("no plan block");
    }
    ActionPlan p;
    for (const auto& [k, v] : key_values(body)) {
        if (k == "frame") {
            p.reasoning_frame = v;
        } else if (k == "step") {
            auto [head, fields] = split_fields(v);
            if (!fields.count("target")) throw FormatError("plan step without target: " + v);
            p.steps.push_back({fields.count("goal") ? fields["goal"] : head, fields["target"], fields["expect"]});
        }
    }
    return p;
}

std::string format_plan(const ActionPlan& plan) {
    std::string out = "```plan\n";
    if (!plan.reasoning_frame.empty()) out += "frame: " + plan.reasoning_frame + "\n";
    for (const auto& s : plan.steps) {
        out += fmt::format("step: goal={} | target={} | expect={}\n", s.goal, s.target, s.expected_observation);
    }
    return out + "```\n";
}

std::optional<std::string> check_target(const printer::EndpointCatalog& catalog, const std::string& target) {
    const auto colon = target.find(':');
    if (colon == std::string::npos) return "target '" + target + "' has no kind prefix";
    const auto kind = target.substr(0, colon);
    const auto arg = std::string(trim(std::string_view(target).substr(colon + 1)));
    if (arg.empty()) return "target '" + target + "' is empty";
    if (kind == "query") {
        const auto object = arg.substr(0, arg.find(':'));
        if (!catalog.find_object(object)) return "object '" + object + "' is not in the catalog";
        const auto v = guard(catalog, object);
        if (!v.allowed) return v.reason;
        return std::nullopt;
    }
    if (kind == "gcode") {
        const auto v = guard(catalog, arg);
        if (!v.allowed) return "denied: " + v.reason;
        std::size_t pos = 0;
        while (pos <= arg.size()) {
            auto nl = arg.find('\n', pos);
            if (nl == std::string::npos) nl = arg.size();
            const auto line = trim(std::string_view(arg).substr(pos, nl - pos));
            if (!line.empty() && !gcode::parse_parameter_command(line)) {
                return "'" + std::string(line) + "' is not a parameter command";
            }
            pos = nl + 1;
        }
        return std::nullopt;
    }
    if (kind == "endpoint") {
        const auto v = guard(catalog, arg);
        if (!v.allowed) return "denied: " + v.reason;
        if (!catalog.find_allowed(arg)) return "endpoint '" + arg + "' is not in the catalog";
        return std::nullopt;
    }
    return "unknown target kind '" + kind + "'";
}

const std::vector<ReasoningFrame>& frame_catalog() {
    using FM = FailureMode;
    static const std::vector<ReasoningFrame> frames = {
        {"diagnostic_questioning", "Ask what must be known before acting",
         "List the questions whose answers separate the candidate causes of each defect, then the printer readings "
         "that answer them. Prefer readings over assumptions.",
         {FM::warping, FM::print_cracks, FM::ghosting, FM::ringing}},
        {"causal_chaining", "Follow each defect back to a controllable cause",
         "For every defect, chain observation -> physical mechanism (material flow, heat, motion) -> the parameter "
         "that drives it. Stop at parameters that can be changed mid-print.",
         {FM::under_extrusion, FM::over_extrusion, FM::inconsistent_extrusion, FM::layer_separation, FM::bed_adhesion,
          FM::blobs_zits, FM::print_cracks}},
        {"parameter_effect_table", "Weigh parameter changes against their side effects",
         "Tabulate each adjustable parameter against its expected effect on every observed defect and on the rest of "
         "the part. Choose the smallest set of changes that addresses all defects.",
         {FM::stringing_oozing, FM::warping, FM::bed_adhesion, FM::elephant_foot, FM::ghosting, FM::ringing}},
    };
    return frames;
}

const ReasoningFrame* find_frame(std::string_view id) {
    const auto& frames = frame_catalog();
    const auto it = std::find_if(frames.begin(), frames.end(), [&](const auto& f) { return f.id == id; });
    return it == frames.end() ? nullptr : &*it;
}

std::vector<std::string> rank_frames(PlanKind kind, const std::set<FailureMode>& modes) {
    const auto& frames = frame_catalog();
    std::vector<std::pair<int, std::size_t>> scored;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        int score = 0;
        for (const auto m : frames[i].keywords) score += modes.count(m) ? 1 : 0;
        if (kind == PlanKind::information && frames[i].id == "diagnostic_questioning") score += 100;
        scored.emplace_back(score, i);
    }
    std::stable_sort(scored.begin(), scored.end(), [](auto& a, auto& b) { return a.first > b.first; });
    std::vector<std::string> out;
    for (const auto& [score, i] : scored) out.push_back(frames[i].id);
    return out;
}

std::string_view to_string(ReActOutcome o) {
    switch (o) {
    case ReActOutcome::completed: return "completed";
    case ReActOutcome::exhausted: return "exhausted";
    case ReActOutcome::aborted: return "aborted";
    }
    return "aborted";
}

nlohmann::json ReActTrace::to_json() const {
    nlohmann::json its = nlohmann::json::array();
    for (const auto& i : iterations) {
        its.push_back({{"thought", i.thought}, {"action", i.action}, {"observation", i.observation}});
    }
    return {{"iterations", its}, {"outcome", std::string(agent::to_string(outcome))}};
}

ReActTrace ReActTrace::from_json(const nlohmann::json& j) {
    ReActTrace t;
    for (const auto& i : j.at("iterations")) t.iterations.push_back({i.at("thought"), i.at("action"), i.at("observation")});
    const auto o = j.at("outcome").get<std::string>();
    t.outcome = o == "completed" ? ReActOutcome::completed
                                 : (o == "exhausted" ? ReActOutcome::exhausted : ReActOutcome::aborted);
    return t;
}

ReActStep parse_react(std::string_view text) {
    ReActStep s;
    bool have_action = false;
    for (const auto& [k, v] : key_values(block_body(text, "react"))) {
        if (k == "thought") s.thought = v;
        if (k == "action") {
            s.action = v;
            have_action = true;
        }
    }
    if (!have_action || s.action.empty()) throw FormatError("react step has no action");
    if (s.thought.empty()) throw FormatError("react step has no thought");
    return s;
}

}  // namespace printloop::agent
