#include "printloop/gcode.hpp"
#include "printloop/metrics.hpp"
#include "printloop/session.hpp"
#include "printloop/sim.hpp"
#include "printloop/util.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace printloop;

namespace {

struct PreprocessArgs {
    std::string input;
    std::string output;
    bool per_layer = false;
    int segments = 0;
    int every = 0;
    bool purge_tower = false;
    double park_x = 0.0;
    double park_y = 0.0;
    std::string marker = "PRINTLOOP_CAPTURE";
    bool list = false;
};

int cmd_preprocess(const PreprocessArgs& a) {
    const int chosen = (a.per_layer ? 1 : 0) + (a.segments > 0 ? 1 : 0) + (a.every > 0 ? 1 : 0);
    if (chosen > 1) throw CLI::ValidationError("choose one of --per-layer, --segments, --every-n-layers");
    gcode::CheckpointPolicy policy = a.segments > 0 ? gcode::CheckpointPolicy::per_segment(a.segments)
                                     : a.every > 0  ? gcode::CheckpointPolicy::every_n_layers(a.every)
                                                    : gcode::CheckpointPolicy::per_layer();
    policy.park_position = {a.park_x, a.park_y};
    policy.capture_marker = a.marker;

    const auto doc = gcode::parse(read_file(a.input));
    if (a.purge_tower) {
        const double lh = doc.layer_height > 0 ? doc.layer_height : 0.2;
        policy.purge_tower = gcode::default_purge_placement(policy, 20.0, lh);
    }
    const auto injected = gcode::inject_checkpoints(doc, policy);
    const auto markers = gcode::list_checkpoints(injected, policy.capture_marker);
    if (markers.empty()) throw gcode::ToolpathError("no extrusion layers found; nothing to checkpoint");
    const auto out = a.output.empty() ? fs::path(a.input).replace_extension(".checkpointed.gcode").string() : a.output;
    write_file(out, gcode::serialize(injected));
    if (a.list) {
        for (const auto& m : markers) std::cout << fmt::format("layer {} segment {}\n", m.layer_index + 1, m.segment_index + 1);
    }
    std::cout << fmt::format("{}: {} checkpoints written to {}\n", a.input, markers.size(), out);
    return 0;
}

struct RunArgs {
    std::string config;
    std::string sim;
    std::string printer;
    std::string backend;
    std::string fixtures;
    std::string out;
    std::string part;
    std::string material;
    std::optional<std::uint64_t> seed;
    int max_checkpoints = 0;
    bool resume = false;
    bool control = false;
};

int cmd_run(const RunArgs& a) {
    session::SessionConfig config;
    if (!a.config.empty()) config = session::load_session_config(a.config);
    if (!a.sim.empty()) config.printer = "sim:" + a.sim;
    if (!a.printer.empty()) config.printer = a.printer;
    if (!a.sim.empty() && !a.printer.empty()) throw CLI::ValidationError("--sim and --printer are exclusive");
    if (!a.backend.empty()) config.backend = session::backend_kind_from_string(a.backend);
    if (!a.fixtures.empty()) config.fixtures_dir = a.fixtures;
    if (!a.out.empty()) config.output_dir = a.out;
    if (!a.part.empty()) config.part_description = a.part;
    if (!a.material.empty()) config.material = a.material;
    if (a.seed) config.seed = a.seed;

    session::RunOptions options;
    options.resume = a.resume;
    options.control = a.control;
    options.max_checkpoints = a.max_checkpoints;
    const auto result = session::run_session(config, options);
    if (result.exit_code != 0) {
        std::cerr << "error: " << result.error << "\n";
        return result.exit_code;
    }
    std::cout << fmt::format("{} checkpoints this run ({} total), {} degraded, job {}\n", result.checkpoints_this_run,
                             result.state.checkpoints.size(), result.degraded,
                             result.job_complete ? "complete" : "paused at next checkpoint");
    std::cout << "log: " << result.log_path << "\nreport: " << result.report_path << "\n";
    if (result.degraded > 0) {
        std::cerr << fmt::format("warning: {} checkpoint(s) degraded; see report commentary\n", result.degraded);
    }
    return 0;
}

struct EvaluateArgs {
    std::string log;
    std::string annotations;
    std::string out = "evaluation";
    bool plots = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
    if (!fs::exists(a.log)) throw std::runtime_error("log file not found: " + a.log);
    if (!fs::exists(a.annotations)) throw std::runtime_error("annotation file not found: " + a.annotations);
    const auto records = agent::EventLog::read(a.log);
    const auto truth = metrics::merge_union(metrics::load_annotations(a.annotations), metrics::AnnotatorRole::expert);
    const auto detected = metrics::detections_from_log(records);
    const auto cm = metrics::compare_detections(detected, truth);

    fs::create_directories(a.out);
    const fs::path out(a.out);
    write_file((out / "confusion.json").string(), cm.to_json().dump(2));
    write_file((out / "confusion.csv").string(), cm.to_csv());
    const auto trajectory = metrics::parameter_trajectory(records);
    const auto occ = metrics::occupancy_series(records);
    write_file((out / "trajectory.csv").string(), metrics::trajectory_csv(trajectory));
    write_file((out / "occupancy.csv").string(), metrics::occupancy_csv(occ));

    std::cout << fmt::format("{} layers compared against {}\n", cm.layers, truth.annotator);
    for (const auto& [mode, c] : cm.modes) {
        if (c.tp + c.fp + c.fn == 0) continue;
        auto show = [](std::optional<double> v) { return v ? fixed(*v, 3) : std::string("n/a"); };
        std::cout << fmt::format("  {:<24} tp={} fp={} fn={} tn={} precision={} recall={}\n", to_string(mode), c.tp,
                                 c.fp, c.fn, c.tn, show(c.precision()), show(c.recall()));
    }
    if (a.plots) {
        fs::create_directories(out / "plots");
        for (const auto& [name, points] : trajectory) {
            std::vector<std::pair<double, double>> xy;
            for (const auto& p : points) xy.emplace_back(p.checkpoint, p.value);
            write_file((out / "plots" / (name + ".svg")).string(), metrics::series_svg(name, xy, "checkpoint", name));
        }
        std::vector<std::pair<double, double>> xy;
        for (const auto& p : occ) xy.emplace_back(p.checkpoint, p.occupancy);
        write_file((out / "plots" / "occupancy.svg").string(),
                   metrics::series_svg("occupancy", xy, "checkpoint", "occupancy"));
        std::cout << fmt::format("{} plots written to {}\n", trajectory.size() + 1, (out / "plots").string());
    }
    return 0;
}

std::atomic<bool> g_stop{false};

int cmd_serve(const std::string& scenario_path, int port, std::optional<std::uint64_t> seed) {
    auto scenario = sim::load_scenario(scenario_path);
    if (seed) scenario.seed = *seed;
    auto printer = std::make_shared<sim::VirtualPrinter>(scenario);
    printer->load_job(sim::plan_checkpoints(scenario));
    sim::SimServer server(printer);
    const int bound = server.start(port);
    std::cout << fmt::format("simulated printer '{}' on http://127.0.0.1:{}\n", scenario.name, bound) << std::flush;
    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });
    while (!g_stop && !printer->complete()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Closed-loop LLM print monitoring and correction"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error")->capture_default_str();

    PreprocessArgs pre;
    auto* p = app.add_subcommand("preprocess", "inject pause/capture checkpoints into a G-code file");
    p->add_option("input", pre.input, "input G-code")->required()->check(CLI::ExistingFile);
    p->add_option("-o,--output", pre.output, "output file (default <input>.checkpointed.gcode)");
    p->add_flag("--per-layer", pre.per_layer, "one checkpoint per layer (default)");
    p->add_option("--segments", pre.segments, "split every layer into N checkpointed segments")->check(CLI::PositiveNumber);
    p->add_option("--every-n-layers", pre.every, "one checkpoint every N layers")->check(CLI::PositiveNumber);
    p->add_flag("--purge-tower", pre.purge_tower, "add a purge tower next to the park position");
    p->add_option("--park-x", pre.park_x, "park position X (mm)");
    p->add_option("--park-y", pre.park_y, "park position Y (mm)");
    p->add_option("--marker", pre.marker, "capture macro name")->capture_default_str();
    p->add_flag("--list", pre.list, "print the checkpoints");

    RunArgs run;
    auto* r = app.add_subcommand("run", "run a closed-loop session");
    r->add_option("-c,--config", run.config, "session config file")->check(CLI::ExistingFile);
    r->add_option("--sim", run.sim, "simulated printer scenario file")->check(CLI::ExistingFile);
    r->add_option("--printer", run.printer, "Moonraker base URL");
    r->add_option("--backend", run.backend, "oracle | remote | fixtures");
    r->add_option("--fixtures", run.fixtures, "recorded response directory (fixtures backend)");
    r->add_option("-o,--out", run.out, "output directory");
    r->add_option("--part", run.part, "part description");
    r->add_option("--material", run.material, "PLA | TPU | ...");
    r->add_option("--seed", run.seed, "simulator seed");
    r->add_option("--max-checkpoints", run.max_checkpoints, "stop after N checkpoints (0 = until job end)");
    r->add_flag("--resume", run.resume, "continue from the state saved in the output directory");
    r->add_flag("--control", run.control, "observe only; never change parameters");

    EvaluateArgs ev;
    auto* e = app.add_subcommand("evaluate", "compare detections with annotations and extract series");
    e->add_option("--log", ev.log, "session log (JSON Lines)")->required();
    e->add_option("--annotations", ev.annotations, "annotation table")->required();
    e->add_option("-o,--out", ev.out, "output directory")->capture_default_str();
    e->add_flag("--plots", ev.plots, "write one chart per parameter series");

    std::string report_dir;
    auto* rep = app.add_subcommand("report", "regenerate report.json / report.md for a session directory");
    rep->add_option("dir", report_dir, "session output directory")->required()->check(CLI::ExistingDirectory);

    std::string serve_scenario;
    int serve_port = 7125;
    std::optional<std::uint64_t> serve_seed;
    auto* s = app.add_subcommand("serve", "serve a simulated printer over HTTP");
    s->add_option("scenario", serve_scenario, "scenario file")->required()->check(CLI::ExistingFile);
    s->add_option("--port", serve_port, "port (0 = any)")->capture_default_str();
    s->add_option("--seed", serve_seed, "simulator seed");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_pattern("[%l] %v");

    try {
        if (p->parsed()) return cmd_preprocess(pre);
        if (r->parsed()) return cmd_run(run);
        if (e->parsed()) return cmd_evaluate(ev);
        if (rep->parsed()) {
            session::write_report(report_dir);
            std::cout << "report written to " << (fs::path(report_dir) / "report.md").string() << "\n";
            return 0;
        }
        if (s->parsed()) return cmd_serve(serve_scenario, serve_port, serve_seed);
    } catch (const CLI::ValidationError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return session::kExitUsage;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return session::kExitUsage;
    }
    return 0;
}
