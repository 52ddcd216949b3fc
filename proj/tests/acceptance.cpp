// One PASS/FAIL line per acceptance criterion; exits nonzero when any fails.
#include "printloop/agent.hpp"
#include "printloop/gcode.hpp"
#include "printloop/metrics.hpp"
#include "printloop/printer.hpp"
#include "printloop/session.hpp"
#include "printloop/sim.hpp"
#include "printloop/util.hpp"
#include "test_support.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

using namespace printloop;
using test_support::data_path;
using test_support::TempDir;

namespace {

// Pinned tolerances and limits.
constexpr int kMaxConvergenceCheckpoints = 6;
constexpr double kFlowLow = 1.00;
constexpr double kFlowHigh = 1.12;
constexpr double kMaxSpeedFactor = 1.00;
constexpr double kCorrectedOccupancy = 0.95;
constexpr double kControlOccupancy = 0.80;
constexpr double kSingleLayerGain = 0.05;
constexpr double kGridTolerance = 0.02;
constexpr double kNozzleTpu = 220.0;
constexpr double kValueEps = 1e-9;
constexpr double kClosedLoopSeconds = 10.0;
constexpr double kSingleLayerSeconds = 5.0;
constexpr double kOccupancySeconds = 5.0;
constexpr double kCheckpointSeconds = 1.0;
constexpr int kSafetyTrials = 1000;
constexpr int kContractTrials = 1000;

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

session::RunOptions quiet() {
    session::RunOptions o;
    o.clock = [] { return std::string("2026-01-01T00:00:00Z"); };
    o.sleep = [](std::chrono::milliseconds) {};
    return o;
}

session::SessionConfig sim_config(const std::string& scenario, const TempDir& dir) {
    session::SessionConfig c;
    c.printer = "sim:" + data_path("scenarios/" + scenario);
    c.output_dir = dir.str();
    return c;
}

nlohmann::json final_parameters(const TempDir& dir) {
    std::ifstream in(dir.path() / "final_parameters.json");
    return nlohmann::json::parse(in);
}

double last_occupancy(const agent::StateDictionary& s) {
    return !s.checkpoints.empty() && s.checkpoints.back().occupancy ? *s.checkpoints.back().occupancy : -1.0;
}

// ---------------------------------------------------------------------------

Outcome closed_loop_convergence() {
    TempDir dir("acc-loop"), control_dir("acc-control");
    Stopwatch clock;
    const auto run = session::run_session(sim_config("underextrusion.ini", dir), quiet());
    const double elapsed = clock.seconds();
    if (run.exit_code != 0) return {false, "run failed: " + run.error};

    // Last checkpoint at which flow or speed was changed.
    const auto log = agent::EventLog::read(run.log_path);
    int settled = 0;
    for (const auto& [name, points] : metrics::parameter_trajectory(log)) {
        if (name != "flow_factor" && name != "speed_factor") continue;
        for (const auto& p : points) settled = std::max(settled, p.checkpoint);
    }
    const auto params = final_parameters(dir);
    const double flow = params.value("flow_factor", -1.0);
    const double sf = params.value("speed_factor", 99.0);

    auto control = quiet();
    control.control = true;
    const auto ctl = session::run_session(sim_config("underextrusion.ini", control_dir), control);
    if (ctl.exit_code != 0) return {false, "control run failed: " + ctl.error};

    const double occ = last_occupancy(run.state);
    const double occ_ctl = last_occupancy(ctl.state);
    const bool ok = settled >= 1 && settled <= kMaxConvergenceCheckpoints && flow >= kFlowLow && flow <= kFlowHigh &&
                    sf <= kMaxSpeedFactor && occ >= kCorrectedOccupancy && occ_ctl <= kControlOccupancy &&
                    elapsed < kClosedLoopSeconds;
    return {ok, fmt::format("settled at checkpoint {}, flow {:.2f}, speed factor {:.2f}, occupancy {:.3f} vs "
                            "control {:.3f}, {:.2f} s",
                            settled, flow, sf, occ, occ_ctl, elapsed)};
}

Outcome single_layer_trend() {
    TempDir dir("acc-single");
    Stopwatch clock;
    const auto run = session::run_session(sim_config("single_layer_pla.ini", dir), quiet());
    const double elapsed = clock.seconds();
    if (run.exit_code != 0) return {false, "run failed: " + run.error};
    std::vector<double> occ;
    for (const auto& c : run.state.checkpoints) occ.push_back(c.occupancy.value_or(-1.0));
    bool monotone = occ.size() == 4;
    for (std::size_t i = 1; i < occ.size(); ++i) monotone = monotone && occ[i] >= occ[i - 1];
    const double gain = occ.size() >= 2 ? occ.back() - occ.front() : 0.0;
    std::string series;
    for (double v : occ) series += fmt::format("{}{:.3f}", series.empty() ? "" : " ", v);
    return {monotone && gain >= kSingleLayerGain && elapsed < kSingleLayerSeconds,
            fmt::format("occupancy [{}], gain {:.3f}, {:.2f} s", series, gain, elapsed)};
}

Outcome wrench_replay() {
    TempDir dir("acc-wrench");
    auto options = quiet();
    options.max_checkpoints = 9;
    const auto run = session::run_session(sim_config("wrench_layer9.ini", dir), options);
    if (run.exit_code != 0) return {false, "run failed: " + run.error};
    if (run.state.checkpoints.size() != 9) return {false, "checkpoint 9 not reached"};
    const auto& cp = run.state.checkpoints[8];
    if (!cp.report || !cp.solution_plan) return {false, "checkpoint 9 has no report or no solution plan"};

    const auto modes = cp.report->modes();
    const bool report_ok = modes.count(FailureMode::inconsistent_extrusion) &&
                           modes.count(FailureMode::stringing_oozing) && modes.count(FailureMode::layer_separation);

    // Rule table: retraction +0.5 mm / +5 mm/s from 1.0 / 50, nozzle raised 0.05 mm down, flow second step.
    const std::set<std::string> required = {"gcode:SET_RETRACTION RETRACT_LENGTH=1.500 RETRACT_SPEED=55.0",
                                            "gcode:SET_GCODE_OFFSET Z_ADJUST=-0.050 MOVE=1", "gcode:M221 S110"};
    std::set<std::string> targets;
    for (const auto& s : cp.solution_plan->steps) targets.insert(s.target);
    std::vector<std::string> missing;
    for (const auto& t : required) {
        if (!targets.count(t)) missing.push_back(t);
    }
    bool flow_from_105 = false;
    for (const auto& a : cp.executed_actions) {
        for (const auto& e : a.expectations) {
            if (e.parameter == "flow_factor" && e.before && std::abs(*e.before - 1.05) < kValueEps &&
                std::abs(e.expected - 1.10) < kValueEps) {
                flow_from_105 = true;
            }
        }
    }
    std::string reported;
    for (auto m : modes) reported += fmt::format("{}{}", reported.empty() ? "" : ",", to_string(m));
    return {report_ok && missing.empty() && flow_from_105,
            fmt::format("reported {{{}}}, {} plan steps{}{}", reported, cp.solution_plan->steps.size(),
                        missing.empty() ? "" : ", missing " + missing.front(),
                        flow_from_105 ? ", flow 105% -> 110%" : ", no flow 105% -> 110% change")};
}

Outcome tpu_nozzle() {
    TempDir dir("acc-tpu");
    const auto run = session::run_session(sim_config("tpu.ini", dir), quiet());
    if (run.exit_code != 0) return {false, "run failed: " + run.error};
    bool adhesion = false;
    for (const auto& c : run.state.checkpoints) {
        adhesion = adhesion || (c.report && c.report->has(FailureMode::bed_adhesion));
    }
    const double target = final_parameters(dir).value("nozzle_target", -1.0);
    return {adhesion && target == kNozzleTpu,
            fmt::format("adhesion flagged: {}, final nozzle target {:.1f}", adhesion ? "yes" : "no", target)};
}

// Independent view of the forbidden vocabulary: first word of a line after any N-number, uppercased.
const std::set<std::string> kForbiddenWords = {"M112",      "M999",       "M80",    "M81",         "M500",
                                               "M502",      "M997",       "RESTART", "FIRMWARE_RESTART",
                                               "SAVE_CONFIG", "SHUTDOWN_MACHINE", "REBOOT", "CANCEL_PRINT"};
const std::vector<std::string> kForbiddenPaths = {"/machine/shutdown",        "/machine/reboot",
                                                  "/printer/emergency_stop",  "/printer/restart",
                                                  "/printer/firmware_restart", "/server/restart",
                                                  "/machine/update",          "/printer/print/cancel"};

bool script_has_forbidden(const std::string& script) {
    std::istringstream in(script);
    for (std::string raw; std::getline(in, raw);) {
        std::istringstream words(to_upper(raw.substr(0, raw.find(';'))));
        std::string word;
        words >> word;
        if (word.size() > 1 && word[0] == 'N' && std::isdigit(static_cast<unsigned char>(word[1]))) words >> word;
        if (kForbiddenWords.count(word)) return true;
    }
    return false;
}

Outcome safety_guard() {
    auto sim_printer = std::make_shared<sim::VirtualPrinter>();
    auto recorder = std::make_shared<printer::RecordingTransport>(std::make_shared<sim::SimTransport>(sim_printer));
    printer::ClientOptions opts;
    opts.sleep = [](std::chrono::milliseconds) {};
    printer::PrinterClient client(recorder, printer::EndpointCatalog::moonraker_default(), opts);

    const std::vector<std::string> benign = {"M221 S{}", "M220 S{}", "M104 S{}", "M140 S{}", "M106 S{}",
                                             "SET_RETRACTION RETRACT_LENGTH=1.{}", "SET_GCODE_OFFSET Z_ADJUST=0.0{} MOVE=1",
                                             "SET_PRESSURE_ADVANCE ADVANCE=0.0{}"};
    const std::vector<std::string> forbidden(kForbiddenWords.begin(), kForbiddenWords.end());
    const std::vector<std::string> endpoints = {"machine.shutdown", "machine.reboot", "printer.emergency_stop",
                                                "printer.restart", "printer.firmware_restart", "server.restart",
                                                "machine.update.system", "printer.print.cancel"};
    std::mt19937 rng(20240531);
    auto pick = [&](const auto& v) { return v[rng() % v.size()]; };
    auto disguise = [&](std::string word) {
        switch (rng() % 4) {
        case 0: return to_lower(word);
        case 1: return fmt::format("N{} {}", rng() % 900 + 10, word);
        case 2: return word + " ; requested by planner";
        default: return word;
        }
    };

    int forbidden_issued = 0, forbidden_blocked = 0, benign_issued = 0, endpoint_checks = 0, endpoint_blocked = 0;
    for (int i = 0; i < kSafetyTrials; ++i) {
        const auto roll = rng() % 10;
        if (roll < 2) {
            ++endpoint_checks;
            if (!client.guard(pick(endpoints)).allowed) ++endpoint_blocked;
            continue;
        }
        std::vector<std::string> lines;
        const int n = 1 + static_cast<int>(rng() % 3);
        bool bad = false;
        for (int k = 0; k < n; ++k) {
            if (rng() % 2) {
                lines.push_back(disguise(pick(forbidden)));
                bad = true;
            } else {
                lines.push_back(fmt::format(fmt::runtime(pick(benign)), 50 + rng() % 50));
            }
        }
        std::string script;
        for (const auto& l : lines) script += (script.empty() ? "" : "\n") + l;
        const auto r = client.run_gcode(script);
        if (bad) {
            ++forbidden_issued;
            if (r.status == printer::ApiStatus::denied) ++forbidden_blocked;
        } else {
            ++benign_issued;
        }
    }

    int leaked = 0;
    for (const auto& req : recorder->requests()) {
        const auto [path, query] = printer::split_target(req.target);
        for (const auto& p : kForbiddenPaths) {
            if (path.starts_with(p)) ++leaked;
        }
        for (const auto& [k, v] : query) {
            if (k == "script" && script_has_forbidden(v)) ++leaked;
        }
        if (!req.body.empty() && req.body.front() == '{') {
            const auto body = nlohmann::json::parse(req.body, nullptr, false);
            if (body.is_object() && body.contains("script") && body["script"].is_string() &&
                script_has_forbidden(body["script"].get<std::string>())) {
                ++leaked;
            }
        }
    }
    const bool ok = forbidden_blocked == forbidden_issued && endpoint_blocked == endpoint_checks && leaked == 0 &&
                    !recorder->requests().empty() && sim_printer->shutdown_count() == 0;
    return {ok, fmt::format("{}/{} forbidden scripts blocked, {}/{} forbidden endpoints blocked, {} benign sent, {} "
                            "forbidden in recording",
                            forbidden_blocked, forbidden_issued, endpoint_blocked, endpoint_checks, benign_issued,
                            leaked)};
}

Outcome supervisor_ordering() {
    std::mt19937 rng(4242);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int violations = 0, with_failures = 0, degraded = 0;
    for (int trial = 0; trial < kContractTrials; ++trial) {
        sim::Scenario s;
        s.seed = trial;
        s.layers = 2;
        s.render = {64, 64, {4, 4, 60, 60}};
        s.nominal = {1.0, 120.0, 200.0, 60.0};
        s.initial.nozzle_target = 200.0 + (u(rng) < 0.3 ? 30.0 * u(rng) : 0.0);
        s.initial.bed_target = 60.0 - (u(rng) < 0.2 ? 30.0 * u(rng) : 0.0);
        s.initial.flow_factor = u(rng) < 0.5 ? 0.7 + 0.3 * u(rng) : 1.0 + 0.4 * u(rng);
        s.initial.base_speed_mm_s = 120.0 + (u(rng) < 0.5 ? 80.0 * u(rng) : 0.0);
        s.initial.retraction_length = 2.0 * u(rng);
        s.initial.pressure_advance = 0.05 * u(rng);
        s.initial_z_error = u(rng) < 0.3 ? 0.3 * (u(rng) - 0.5) : 0.0;

        auto printer = std::make_shared<sim::VirtualPrinter>(s);
        printer->load_job(sim::plan_checkpoints(s));
        printer::ClientOptions opts;
        opts.sleep = [](std::chrono::milliseconds) {};
        printer::PrinterClient client(std::make_shared<sim::SimTransport>(printer),
                                      printer::EndpointCatalog::moonraker_default(), opts);
        llm::OracleBackend oracle;
        agent::AgentConfig config;
        config.nominal_speed_mm_s = s.nominal.speed_mm_s;
        agent::Pipeline pipeline(oracle, client, config);
        // A tenth of the trials knock out one module at random.
        const int faulty = rng() % 10 == 0 ? 2 + static_cast<int>(rng() % 4) : -1;
        pipeline.set_fault_plan([faulty](int, agent::ModuleId m) { return static_cast<int>(m) == faulty; });

        agent::StateDictionary state;
        agent::CheckpointRecord seed;
        seed.checkpoint = 1;
        state.checkpoints.push_back(seed);
        auto& rec = state.checkpoints.back();
        agent::CapturedImages images;
        const auto snap = client.capture_snapshot(printer::Camera::top);
        images.now.push_back({"current/top", "image/png", snap.bytes});
        images.annotations = snap.annotations;
        pipeline.run_checkpoint(state, rec, images);

        const bool failures = rec.report && !rec.report->no_failures;
        with_failures += failures;
        degraded += rec.degraded;
        const auto& seq = rec.module_sequence;
        const auto pos = [&](const char* m) { return std::find(seq.begin(), seq.end(), m) - seq.begin(); };
        const bool solution_after_info =
            pos("solution_executor") == static_cast<long>(seq.size()) ||
            (pos("info_executor") < pos("solution_executor"));
        if (!agent::sequence_satisfies_contract(seq, failures, rec.degraded) || !solution_after_info) ++violations;
    }
    return {violations == 0, fmt::format("{} scenarios ({} with failures, {} degraded), {} violations",
                                         kContractTrials, with_failures, degraded, violations)};
}

Outcome gcode_round_trip() {
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(data_path("gcode"))) {
        if (e.path().extension() == ".gcode") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    int mismatches = 0;
    for (const auto& f : files) {
        const auto text = read_file(f);
        const auto doc = gcode::parse(text);
        if (gcode::serialize(doc) != text) ++mismatches;
        for (auto policy : {gcode::CheckpointPolicy::per_layer(), gcode::CheckpointPolicy::per_segment(4)}) {
            if (gcode::serialize(gcode::strip_checkpoints(gcode::inject_checkpoints(doc, policy))) != text) ++mismatches;
        }
    }
    const auto has = [&](const char* name) {
        return std::any_of(files.begin(), files.end(), [&](const auto& f) { return f.ends_with(name); });
    };
    const bool corpus_ok = files.size() >= 5 && has("wrench.gcode") && has("text_print.gcode") &&
                           has("square_single_layer.gcode");
    return {corpus_ok && mismatches == 0, fmt::format("{} files, {} mismatches", files.size(), mismatches)};
}

Outcome occupancy_oracle() {
    Stopwatch clock;
    std::mt19937 rng(77);
    int exact_failures = 0;
    for (int t = 0; t < 50; ++t) {
        GrayImage img(17 + static_cast<int>(rng() % 200), 9 + static_cast<int>(rng() % 200));
        const double density = (rng() % 101) / 100.0;
        long long on = 0;
        for (auto& p : img.pixels) {
            p = (rng() % 1000) < density * 1000 ? 255 : 0;
            on += p != 0;
        }
        if (metrics::occupancy(img) != static_cast<double>(on) / static_cast<double>(img.size())) ++exact_failures;
    }
    double worst = 0.0;
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            DefectSeverities sev;
            sev.set(FailureMode::under_extrusion, 0.25 * i);
            sev.set(FailureMode::inconsistent_extrusion, 0.25 * j);
            const auto r = sim::render_layer_image(sev, 500 + 5 * i + j);
            for (const auto* img : {&r.binary, &r.decorated}) {
                worst = std::max(worst, std::abs(metrics::occupancy(*img, r.footprint) - r.ground_truth_occupancy));
            }
        }
    }
    const double elapsed = clock.seconds();
    return {exact_failures == 0 && worst <= kGridTolerance && elapsed < kOccupancySeconds,
            fmt::format("{} binary mismatches, worst grid error {:.4f}, {:.2f} s", exact_failures, worst, elapsed)};
}

Outcome conflation_fixture() {
    const auto sets = metrics::load_annotations(data_path("fixtures/conflation_annotations.csv"));
    const auto cm = metrics::compare_detections(metrics::merge_union(sets, metrics::AnnotatorRole::llm),
                                                metrics::merge_union(sets, metrics::AnnotatorRole::expert));
    // Hand-computed from the fixture table.
    const std::map<FailureMode, metrics::ModeCounts> expected = {
        {FailureMode::stringing_oozing, {3, 2, 0, 5}},        {FailureMode::blobs_zits, {1, 0, 2, 7}},
        {FailureMode::under_extrusion, {2, 0, 0, 8}},         {FailureMode::inconsistent_extrusion, {1, 0, 0, 9}},
        {FailureMode::layer_separation, {1, 0, 0, 9}},        {FailureMode::warping, {0, 0, 1, 9}},
    };
    int wrong = 0;
    for (const auto m : kAllFailureModes) {
        const auto it = expected.find(m);
        const metrics::ModeCounts want = it != expected.end() ? it->second : metrics::ModeCounts{0, 0, 0, 10};
        if (!(cm.at(m) == want)) ++wrong;
    }
    const auto sp = cm.at(FailureMode::stringing_oozing).precision();
    const auto br = cm.at(FailureMode::blobs_zits).recall();
    return {wrong == 0 && sp && *sp < 1.0 && br && *br < 1.0,
            fmt::format("{} modes off, stringing precision {:.2f}, blobs recall {:.2f}", wrong, sp.value_or(-1),
                        br.value_or(-1))};
}

Outcome checkpoint_latency() {
    TempDir dir("acc-latency");
    auto options = quiet();
    options.max_checkpoints = 1;
    const auto run = session::run_session(sim_config("underextrusion.ini", dir), options);
    if (run.exit_code != 0 || run.state.checkpoints.empty()) return {false, "run failed: " + run.error};
    const auto& cp = run.state.checkpoints.front();
    const bool full_cycle = cp.module_sequence.size() == 6 && !cp.degraded;
    const double seconds = cp.latency_ms / 1000.0;
    return {full_cycle && seconds < kCheckpointSeconds,
            fmt::format("{} modules, {:.3f} s", cp.module_sequence.size(), seconds)};
}

std::vector<nlohmann::json> stripped(const std::string& path) {
    auto records = agent::EventLog::read(path);
    for (auto& r : records) {
        r.erase("ts");
        if (r.contains("payload") && r["payload"].is_object()) r["payload"].erase("latency_ms");
    }
    return records;
}

Outcome resumability() {
    TempDir whole("acc-whole");
    const auto a = session::run_session(sim_config("underextrusion.ini", whole), quiet());
    if (a.exit_code != 0) return {false, "uninterrupted run failed: " + a.error};
    const auto reference = stripped(a.log_path);
    std::vector<int> bad;
    for (int k : {1, 4, 7}) {
        TempDir split("acc-split");
        auto first = quiet();
        first.max_checkpoints = k;
        const auto b1 = session::run_session(sim_config("underextrusion.ini", split), first);
        auto second = quiet();
        second.resume = true;
        const auto b2 = session::run_session(sim_config("underextrusion.ini", split), second);
        if (b1.exit_code != 0 || b2.exit_code != 0 || !b2.job_complete || stripped(b2.log_path) != reference) {
            bad.push_back(k);
        }
    }
    std::string which;
    for (int k : bad) which += fmt::format(" {}", k);
    return {bad.empty(), fmt::format("{} records; interrupted after checkpoints 1, 4, 7{}", reference.size(),
                                     bad.empty() ? ": identical" : ": differs for" + which)};
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::off);
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"closed-loop convergence", closed_loop_convergence},
        {"single-layer occupancy trend", single_layer_trend},
        {"wrench layer 9 replay", wrench_replay},
        {"TPU nozzle temperature", tpu_nozzle},
        {"safety guard", safety_guard},
        {"supervisor ordering", supervisor_ordering},
        {"G-code round trip", gcode_round_trip},
        {"occupancy oracle", occupancy_oracle},
        {"confusion-matrix fixture", conflation_fixture},
        {"checkpoint latency", checkpoint_latency},
        {"resumability", resumability},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        fmt::print("criterion {:>2}: {} {} ({})\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail);
        std::fflush(stdout);
    }
    fmt::print("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
