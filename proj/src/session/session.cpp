#include "printloop/session.hpp"
#include "printloop/image.hpp"
#include "printloop/sim.hpp"
#include "printloop/util.hpp"

#include "../common/ini.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <thread>

namespace printloop::session {

namespace fs = std::filesystem;

std::string_view to_string(BackendKind k) {
    switch (k) {
    case BackendKind::oracle: return "oracle";
    case BackendKind::remote: return "remote";
    case BackendKind::fixtures: return "fixtures";
    }
    return "oracle";
}

BackendKind backend_kind_from_string(std::string_view s) {
    const auto v = to_lower(trim(s));
    if (v == "oracle") return BackendKind::oracle;
    if (v == "remote") return BackendKind::remote;
    if (v == "fixtures" || v == "fixture") return BackendKind::fixtures;
    throw ConfigError("unknown backend '" + std::string(s) + "' (oracle | remote | fixtures)");
}

void SessionConfig::validate() const {
    if (printer.empty()) throw ConfigError("no printer target (sim:<scenario> or http(s)://host:port)");
    if (!is_simulated() && !printer.starts_with("http://") && !printer.starts_with("https://")) {
        throw ConfigError("printer target must be sim:<scenario> or an http(s) URL: " + printer);
    }
    if (is_simulated() && scenario_path().empty()) throw ConfigError("sim: target without a scenario file");
    if (backend == BackendKind::fixtures && fixtures_dir.empty()) throw ConfigError("fixtures backend needs fixtures_dir");
    if (max_react_iters < 1) throw ConfigError("max_react_iters must be >= 1");
    if (output_dir.empty()) throw ConfigError("output directory is empty");
}

SessionConfig parse_session_config(const std::string& text, const std::string& base_dir) {
    const auto tree = ini::parse(text, "session config");
    SessionConfig c;
    auto resolve = [&](std::string p) {
        if (p.empty()) return p;
        fs::path path(p);
        if (path.is_relative()) path = fs::path(base_dir) / path;
        return path.lexically_normal().string();
    };
    try {
        if (auto s = tree.get_child_optional("session")) {
            ini::read(*s, "printer", c.printer);
            ini::read(*s, "part_description", c.part_description);
            ini::read(*s, "material", c.material);
            ini::read(*s, "output_dir", c.output_dir);
            std::uint64_t seed = 0;
            if (s->get_optional<std::string>("seed")) {
                ini::read(*s, "seed", seed);
                c.seed = seed;
            }
        }
        if (auto s = tree.get_child_optional("printer")) {
            ini::read(*s, "api_key_env", c.printer_api_key_env);
            std::string catalog;
            ini::read(*s, "catalog", catalog);
            if (!catalog.empty()) c.catalog_path = resolve(catalog);
            long long timeout = c.poll_timeout.count();
            ini::read(*s, "poll_timeout_s", timeout);
            c.poll_timeout = std::chrono::seconds(timeout);
        }
        if (auto s = tree.get_child_optional("backend")) {
            std::string kind;
            ini::read(*s, "kind", kind);
            if (!kind.empty()) c.backend = backend_kind_from_string(kind);
            ini::read(*s, "base_url", c.remote.base_url);
            ini::read(*s, "model", c.remote.model);
            ini::read(*s, "api_key_env", c.api_key_env);
            long long timeout = c.remote.timeout.count() / 1000;
            ini::read(*s, "timeout_s", timeout);
            c.remote.timeout = std::chrono::seconds(timeout);
            ini::read(*s, "fixtures_dir", c.fixtures_dir);
            c.fixtures_dir = resolve(c.fixtures_dir);
            ini::read(*s, "record", c.record_fixtures);
        }
        if (auto s = tree.get_child_optional("agent")) {
            ini::read(*s, "nominal_speed", c.nominal_speed_mm_s);
            ini::read(*s, "max_react_iters", c.max_react_iters);
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (c.printer.starts_with("sim:")) c.printer = "sim:" + resolve(c.printer.substr(4));
    // Output stays relative to the working directory unless given absolute.
    return c;
}

SessionConfig load_session_config(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
    const auto base = fs::path(path).parent_path().string();
    return parse_session_config(read_file(path), base.empty() ? "." : base);
}

std::shared_ptr<llm::Backend> make_backend(const SessionConfig& config) {
    auto remote = [&] {
        auto options = config.remote;
        const char* key = std::getenv(config.api_key_env.c_str());
        if (!key || !*key) throw ConfigError("remote backend needs an API key in $" + config.api_key_env);
        options.api_key = key;
        return std::make_shared<llm::RemoteBackend>(options);
    };
    switch (config.backend) {
    case BackendKind::oracle: return std::make_shared<llm::OracleBackend>();
    case BackendKind::remote: return remote();
    case BackendKind::fixtures:
        return std::make_shared<llm::FixtureBackend>(config.fixtures_dir,
                                                     config.record_fixtures ? remote() : nullptr);
    }
    throw ConfigError("no backend");
}

namespace {

constexpr const char* kLogFile = "session.jsonl";
constexpr const char* kStateFile = "state.json";
constexpr const char* kSimStateFile = "sim_state.json";
constexpr const char* kFinalParamsFile = "final_parameters.json";

const std::vector<std::string> kParameterObjects = {"gcode_move", "extruder", "heater_bed", "fan",
                                                    "firmware_retraction"};

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    const auto s = read_file(p.string());
    return {s.begin(), s.end()};
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    write_file(p.string(), std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

struct Captured {
    agent::CapturedImages images;
    std::vector<std::string> paths;
    std::optional<GrayImage> top;
};

Captured capture(printer::PrinterClient& client, const fs::path& out_dir, int checkpoint) {
    Captured c;
    for (const auto camera : {printer::Camera::top, printer::Camera::front}) {
        auto snap = client.capture_snapshot(camera);
        if (!snap.result.ok()) {
            spdlog::warn("checkpoint {}: {} camera: {}", checkpoint, printer::to_string(camera), snap.result.message);
            continue;
        }
        const auto name = fmt::format("images/cp{:03}_{}.{}", checkpoint, printer::to_string(camera),
                                      snap.meta.format == "png" ? "png" : "jpg");
        write_bytes(out_dir / name, snap.bytes);
        c.paths.push_back(name);
        const std::string mime = snap.meta.format == "png" ? "image/png" : "image/jpeg";
        c.images.now.push_back({"now/" + std::string(printer::to_string(camera)), mime, snap.bytes});
        if (camera == printer::Camera::top) {
            c.images.annotations = snap.annotations;
            if (snap.meta.format == "png") c.top = decode_png(snap.bytes);
        }
    }
    return c;
}

std::vector<llm::ImagePart> load_previous(const fs::path& out_dir, const std::vector<std::string>& paths) {
    std::vector<llm::ImagePart> out;
    for (const auto& p : paths) {
        const auto full = out_dir / p;
        if (!fs::exists(full)) continue;
        const auto stem = fs::path(p).stem().string();
        const auto camera = stem.substr(stem.rfind('_') + 1);
        out.push_back({"previous/" + camera, p.ends_with(".png") ? "image/png" : "image/jpeg", read_bytes(full)});
    }
    return out;
}

nlohmann::json query_final_parameters(printer::PrinterClient& client) {
    const auto q = client.query_objects(kParameterObjects);
    nlohmann::json out = nlohmann::json::object();
    if (!q.result.ok()) return out;
    for (const auto& [k, v] : q.snapshot.flatten()) out[k] = v;
    return out;
}

}  // namespace

RunResult run_session(const SessionConfig& config, const RunOptions& options) {
    config.validate();
    RunResult result;
    const fs::path out_dir(config.output_dir);
    fs::create_directories(out_dir / "images");
    result.log_path = (out_dir / kLogFile).string();
    const auto state_path = out_dir / kStateFile;
    const auto sim_state_path = out_dir / kSimStateFile;

    const bool resuming = options.resume && fs::exists(state_path);
    if (options.resume && !resuming) spdlog::warn("--resume: no saved state in {}, starting fresh", out_dir.string());

    // Printer side.
    std::shared_ptr<sim::VirtualPrinter> simulator;
    std::shared_ptr<printer::Transport> transport;
    std::optional<sim::Scenario> scenario;
    if (config.is_simulated()) {
        scenario = sim::load_scenario(config.scenario_path());
        if (config.seed) scenario->seed = *config.seed;
        simulator = std::make_shared<sim::VirtualPrinter>(*scenario);
        if (resuming && fs::exists(sim_state_path)) {
            simulator->restore_state(nlohmann::json::parse(read_file(sim_state_path.string())));
        } else {
            simulator->load_job(sim::plan_checkpoints(*scenario));
        }
        transport = std::make_shared<sim::SimTransport>(simulator);
    } else {
        printer::HttpTransportOptions http;
        http.base_url = config.printer;
        if (const char* key = std::getenv(config.printer_api_key_env.c_str())) http.api_key = key;
        transport = printer::make_http_transport(http);
    }
    auto catalog = config.catalog_path
                       ? printer::EndpointCatalog::from_json(nlohmann::json::parse(read_file(*config.catalog_path)))
                       : printer::EndpointCatalog::moonraker_default();
    printer::ClientOptions client_options;
    if (options.sleep) client_options.sleep = options.sleep;
    printer::PrinterClient client(transport, catalog, client_options);

    agent::AgentConfig agent_config;
    agent_config.part_description = !config.part_description.empty() ? config.part_description
                                    : scenario                      ? scenario->part_description
                                                                    : agent_config.part_description;
    agent_config.material = !config.material.empty() ? config.material
                            : scenario                ? std::string(sim::to_string(scenario->material))
                                                      : agent_config.material;
    agent_config.nominal_speed_mm_s = config.nominal_speed_mm_s > 0 ? config.nominal_speed_mm_s
                                      : scenario                     ? scenario->nominal.speed_mm_s
                                                                     : agent_config.nominal_speed_mm_s;
    agent_config.max_react_iters = config.max_react_iters;

    // Session state and log.
    agent::StateDictionary& state = result.state;
    if (resuming) {
        state = agent::StateDictionary::from_json(nlohmann::json::parse(read_file(state_path.string())));
        agent::EventLog::truncate_after(result.log_path, static_cast<int>(state.checkpoints.size()));
        spdlog::info("resuming session {} after checkpoint {}", state.session_id, state.checkpoints.size());
    } else {
        state.session_id = derived_uuid(fmt::format("{}|{}|{}|{}", config.printer,
                                                    scenario ? scenario->seed : config.seed.value_or(0),
                                                    options.control ? "control" : "agent", to_string(config.backend)));
    }
    agent::EventLog log(result.log_path, state.session_id, resuming, options.clock);
    if (!resuming) {
        log.write(0, "session", "session_start",
                  {{"printer", config.printer},
                   {"backend", options.control ? "none" : std::string(to_string(config.backend))},
                   {"control", options.control},
                   {"seed", scenario ? nlohmann::json(scenario->seed) : nlohmann::json(config.seed.value_or(0))},
                   {"part_description", agent_config.part_description},
                   {"material", agent_config.material}});
    }

    std::shared_ptr<llm::Backend> backend = options.backend;
    if (!backend && !options.control) backend = make_backend(config);
    std::optional<agent::Pipeline> pipeline;
    if (!options.control) {
        pipeline.emplace(*backend, client, agent_config, &log);
        if (options.faults) pipeline->set_fault_plan(options.faults);
    }

    std::vector<std::string> previous_paths;
    if (!state.checkpoints.empty()) previous_paths = state.checkpoints.back().images_now;

    auto sleep = options.sleep ? options.sleep : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    auto waited = std::chrono::milliseconds(0);
    const auto poll = std::chrono::milliseconds(1000);

    auto fail = [&](int code, std::string message) {
        result.exit_code = code;
        result.error = std::move(message);
        spdlog::error("{}", result.error);
        log.write(static_cast<int>(state.checkpoints.size()), "session", "session_error", {{"error", result.error}});
        return result;
    };

    for (;;) {
        if (options.max_checkpoints > 0 && result.checkpoints_this_run >= options.max_checkpoints) break;
        const auto q = client.query_objects({"print_stats"});
        if (!q.result.ok()) {
            if (q.result.status == printer::ApiStatus::transport_error) {
                return fail(result.checkpoints_this_run == 0 && !resuming ? kExitUnreachable : kExitSessionError,
                            "printer unreachable: " + q.result.message);
            }
            return fail(kExitSessionError, "printer status query failed: " + q.result.message);
        }
        const auto print_state = q.snapshot.print_state.value_or("standby");
        if (print_state == "complete") {
            result.job_complete = true;
            break;
        }
        if (print_state == "cancelled" || print_state == "error") {
            return fail(kExitSessionError, "print job ended with state '" + print_state + "'");
        }
        if (print_state != "paused") {
            if (waited >= config.poll_timeout) {
                return fail(kExitSessionError, fmt::format("no checkpoint within {} s", config.poll_timeout.count()));
            }
            sleep(poll);
            waited += poll;
            continue;
        }
        waited = std::chrono::milliseconds(0);

        const auto started = std::chrono::steady_clock::now();
        agent::CheckpointRecord record;
        record.checkpoint = static_cast<int>(state.checkpoints.size()) + 1;
        record.part_description = agent_config.part_description;
        if (q.snapshot.layer_index) record.layer_index = *q.snapshot.layer_index;

        auto cap = capture(client, out_dir, record.checkpoint);
        const auto& meta = cap.images.annotations;
        if (meta.is_object()) {
            record.layer_index = meta.value("layer", record.layer_index + 1) - 1;
            record.segment_index = meta.value("segment", 0);
            if (meta.contains("ground_truth_occupancy")) {
                record.ground_truth_occupancy = meta["ground_truth_occupancy"].get<double>();
            }
        }
        record.images_now = cap.paths;
        record.images_prev = previous_paths;
        cap.images.previous = load_previous(out_dir, previous_paths);
        if (cap.top) {
            if (meta.is_object() && meta.contains("footprint")) {
                const auto& f = meta["footprint"];
                record.occupancy = metrics::occupancy(*cap.top, PixelRect{f[0], f[1], f[2], f[3]});
            } else {
                record.occupancy = metrics::occupancy(*cap.top);
            }
        }
        log.write(record.checkpoint, "session", "checkpoint_start",
                  {{"layer", record.layer_index + 1},
                   {"segment", record.segment_index + 1},
                   {"images", record.images_now},
                   {"previous_images", record.images_prev}});

        if (options.control) {
            const auto r = client.resume();
            if (!r.ok()) return fail(kExitSessionError, "resume failed: " + r.message + "; print left paused");
            record.resumed = true;
            record.set_status(agent::ModuleId::handoff, agent::ModuleStatus::done);
            record.commentary = fmt::format("checkpoint {} (layer {}): control run, observed only", record.checkpoint,
                                            record.layer_index + 1);
        } else {
            try {
                pipeline->run_checkpoint(state, record, cap.images);
            } catch (const std::exception& e) {
                state.checkpoints.push_back(record);
                return fail(kExitSessionError, fmt::format("checkpoint {}: {}", record.checkpoint, e.what()));
            }
        }
        record.latency_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        log.write(record.checkpoint, "session", "checkpoint_end",
                  {{"layer", record.layer_index + 1},
                   {"segment", record.segment_index + 1},
                   {"occupancy", record.occupancy ? nlohmann::json(*record.occupancy) : nlohmann::json(nullptr)},
                   {"ground_truth_occupancy", record.ground_truth_occupancy
                                                  ? nlohmann::json(*record.ground_truth_occupancy)
                                                  : nlohmann::json(nullptr)},
                   {"degraded", record.degraded},
                   {"commentary", record.commentary},
                   {"latency_ms", record.latency_ms}});
        if (record.degraded) ++result.degraded;
        previous_paths = record.images_now;
        state.checkpoints.push_back(std::move(record));
        ++result.checkpoints_this_run;

        write_file(state_path.string(), state.to_json().dump(1));
        if (simulator) write_file(sim_state_path.string(), simulator->save_state().dump(1));
    }

    const auto final_parameters = query_final_parameters(client);
    write_file((out_dir / kFinalParamsFile).string(), final_parameters.dump(2));
    if (result.job_complete) {
        int total_degraded = 0;
        for (const auto& c : state.checkpoints) total_degraded += c.degraded ? 1 : 0;
        log.write(static_cast<int>(state.checkpoints.size()), "session", "session_end",
                  {{"checkpoints", state.checkpoints.size()},
                   {"degraded", total_degraded},
                   {"final_parameters", final_parameters}});
        if (total_degraded > 0) {
            spdlog::warn("{} of {} checkpoints were degraded (resumed without changes)", total_degraded,
                         state.checkpoints.size());
        }
    }
    write_report(out_dir.string());
    result.report_path = (out_dir / "report.md").string();
    return result;
}

nlohmann::json build_report(const agent::StateDictionary& state, const nlohmann::json& final_parameters,
                            const std::vector<nlohmann::json>& log) {
    nlohmann::json cps = nlohmann::json::array();
    double latency_sum = 0, latency_max = 0;
    int commands = 0, degraded = 0;
    for (const auto& c : state.checkpoints) {
        nlohmann::json defects = nlohmann::json::array();
        if (c.report) {
            for (const auto& f : c.report->failures) {
                defects.push_back({{"mode", std::string(printloop::to_string(f.mode))},
                                   {"severity", std::string(agent::to_string(f.severity))},
                                   {"evidence", f.evidence}});
            }
        }
        nlohmann::json actions = nlohmann::json::array();
        for (const auto& a : c.executed_actions) {
            actions.push_back({{"command", a.command}, {"status", std::string(printer::to_string(a.status))}});
            if (a.status == printer::ApiStatus::ok) ++commands;
        }
        nlohmann::json verifications = nlohmann::json::array();
        for (const auto& v : c.verifications) {
            verifications.push_back({{"parameter", v.parameter},
                                     {"expected", v.expected},
                                     {"observed", v.observed ? nlohmann::json(*v.observed) : nlohmann::json(nullptr)},
                                     {"ok", v.ok},
                                     {"reissued", v.reissued}});
        }
        latency_sum += c.latency_ms;
        latency_max = std::max(latency_max, c.latency_ms);
        degraded += c.degraded ? 1 : 0;
        cps.push_back({{"checkpoint", c.checkpoint},
                       {"layer", c.layer_index + 1},
                       {"segment", c.segment_index + 1},
                       {"commentary", c.commentary},
                       {"defects", defects},
                       {"actions", actions},
                       {"verifications", verifications},
                       {"degraded", c.degraded},
                       {"occupancy", c.occupancy ? nlohmann::json(*c.occupancy) : nlohmann::json(nullptr)},
                       {"latency_ms", c.latency_ms}});
    }
    nlohmann::json occ = nlohmann::json::array();
    for (const auto& p : metrics::occupancy_series(log)) occ.push_back({{"checkpoint", p.checkpoint}, {"occupancy", p.occupancy}});
    nlohmann::json traj = nlohmann::json::object();
    for (const auto& [name, points] : metrics::parameter_trajectory(log)) {
        for (const auto& p : points) traj[name].push_back({{"checkpoint", p.checkpoint}, {"value", p.value}});
    }
    const auto n = state.checkpoints.size();
    return {{"session_id", state.session_id},
            {"summary",
             {{"checkpoints", n},
              {"degraded", degraded},
              {"commands_issued", commands},
              {"mean_latency_ms", n ? latency_sum / static_cast<double>(n) : 0.0},
              {"max_latency_ms", latency_max}}},
            {"checkpoints", cps},
            {"final_parameters", final_parameters},
            {"occupancy_series", occ},
            {"parameter_trajectory", traj}};
}

std::string report_markdown(const nlohmann::json& report) {
    const auto& s = report.at("summary");
    std::string md = fmt::format("# Print session {}\n\n", report.at("session_id").get<std::string>());
    md += fmt::format("- checkpoints: {}\n- degraded checkpoints: {}\n- commands issued: {}\n"
                      "- checkpoint latency: mean {:.1f} ms, max {:.1f} ms\n\n",
                      s.at("checkpoints").get<int>(), s.at("degraded").get<int>(), s.at("commands_issued").get<int>(),
                      s.at("mean_latency_ms").get<double>(), s.at("max_latency_ms").get<double>());
    md += "## Checkpoints\n\n| # | layer | occupancy | defects | actions | verified |\n|---|---|---|---|---|---|\n";
    for (const auto& c : report.at("checkpoints")) {
        std::vector<std::string> defects, actions;
        for (const auto& d : c.at("defects")) {
            defects.push_back(d.at("mode").get<std::string>() + " (" + d.at("severity").get<std::string>() + ")");
        }
        for (const auto& a : c.at("actions")) {
            auto cmd = a.at("command").get<std::string>();
            for (auto& ch : cmd) {
                if (ch == '\n') ch = ';';
            }
            actions.push_back("`" + cmd + "`" + (a.at("status") == "ok" ? "" : " (" + a.at("status").get<std::string>() + ")"));
        }
        int ok = 0, total = 0;
        for (const auto& v : c.at("verifications")) {
            ++total;
            ok += v.at("ok").get<bool>() ? 1 : 0;
        }
        auto join = [](const std::vector<std::string>& v) {
            std::string o;
            for (const auto& x : v) o += (o.empty() ? "" : ", ") + x;
            return o.empty() ? std::string("-") : o;
        };
        md += fmt::format("| {} | {} | {} | {} | {} | {} |\n", c.at("checkpoint").get<int>(), c.at("layer").get<int>(),
                          c.at("occupancy").is_null() ? std::string("-") : fixed(c.at("occupancy").get<double>(), 3),
                          join(defects), join(actions), total ? fmt::format("{}/{}", ok, total) : std::string("-"));
    }
    md += "\n## Commentary\n\n";
    for (const auto& c : report.at("checkpoints")) md += "- " + c.at("commentary").get<std::string>() + "\n";
    md += "\n## Final parameters\n\n| parameter | value |\n|---|---|\n";
    for (const auto& [k, v] : report.at("final_parameters").items()) md += fmt::format("| {} | {} |\n", k, fixed(v, 4));
    return md;
}

void write_report(const std::string& output_dir) {
    const fs::path dir(output_dir);
    const auto state_path = dir / kStateFile;
    if (!fs::exists(state_path)) throw std::runtime_error("no session state in " + output_dir);
    const auto state = agent::StateDictionary::from_json(nlohmann::json::parse(read_file(state_path.string())));
    nlohmann::json final_parameters = nlohmann::json::object();
    if (fs::exists(dir / kFinalParamsFile)) final_parameters = nlohmann::json::parse(read_file((dir / kFinalParamsFile).string()));
    std::vector<nlohmann::json> log;
    if (fs::exists(dir / kLogFile)) log = agent::EventLog::read((dir / kLogFile).string());
    const auto report = build_report(state, final_parameters, log);
    write_file((dir / "report.json").string(), report.dump(2));
    write_file((dir / "report.md").string(), report_markdown(report));
}

}  // namespace printloop::session
