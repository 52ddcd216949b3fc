#include "printloop/gcode.hpp"
#include "printloop/sim.hpp"
#include "printloop/util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>

namespace printloop::sim {

using printer::HttpRequest;
using printer::HttpResponse;

namespace {

HttpResponse json_ok(const nlohmann::json& result) {
    return {200, nlohmann::json{{"result", result}}.dump(), "application/json", {}};
}

HttpResponse json_error(int code, const std::string& message) {
    return {code, nlohmann::json{{"error", {{"code", code}, {"message", message}}}}.dump(), "application/json", {}};
}

std::uint64_t checkpoint_seed(std::uint64_t seed, std::size_t ordinal, int camera) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (ordinal + 1) + 0xBF58476D1CE4E5B9ULL * camera;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

GrayImage render_front(const std::vector<double>& gaps, const RenderSpec& spec, std::uint64_t seed) {
    const int w = spec.width;
    const int h = std::max(1, spec.height / 2);
    GrayImage img(w, h, 20);
    if (gaps.empty()) return img;
    const int x0 = std::clamp(spec.footprint.x0, 0, w);
    const int x1 = std::clamp(spec.footprint.x1, 0, w);
    const int band = std::clamp((h - 8) / static_cast<int>(gaps.size()), 1, 16);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        const int bottom = h - 4 - static_cast<int>(i) * band;
        const int top = std::max(0, bottom - band);
        if (bottom <= 0) break;
        const long long cells = static_cast<long long>(x1 - x0) * (bottom - top);
        const long long carve = std::llround(gaps[i] * static_cast<double>(cells));
        for (int y = top; y < bottom; ++y) {
            for (int x = x0; x < x1; ++x) img.at(x, y) = 200;
        }
        std::uniform_int_distribution<int> px(x0, std::max(x0, x1 - 1));
        std::uniform_int_distribution<int> py(top, std::max(top, bottom - 1));
        long long done = 0, tries = 0;
        while (done < carve && tries++ < 64 * carve + 1024) {
            auto& v = img.at(px(rng), py(rng));
            if (v != 40) {
                v = 40;
                ++done;
            }
        }
    }
    return img;
}

bool is_shutdown_command(const std::string& word) {
    return word == "M112" || word == "FIRMWARE_RESTART" || word == "RESTART" || word == "SAVE_CONFIG" ||
           word == "M999" || word == "SHUTDOWN_MACHINE" || word == "REBOOT";
}

nlohmann::json commanded_to_json(const Commanded& c) {
    return {{"flow_factor", c.flow_factor},
            {"speed_factor", c.speed_factor},
            {"base_speed_mm_s", c.base_speed_mm_s},
            {"nozzle_target", c.nozzle_target},
            {"bed_target", c.bed_target},
            {"fan", c.fan},
            {"z_offset", c.z_offset},
            {"pressure_advance", c.pressure_advance},
            {"retraction_length", c.retraction_length},
            {"retraction_speed", c.retraction_speed},
            {"acceleration", c.acceleration}};
}

Commanded commanded_from_json(const nlohmann::json& j) {
    Commanded c;
    c.flow_factor = j.at("flow_factor");
    c.speed_factor = j.at("speed_factor");
    c.base_speed_mm_s = j.at("base_speed_mm_s");
    c.nozzle_target = j.at("nozzle_target");
    c.bed_target = j.at("bed_target");
    c.fan = j.at("fan");
    c.z_offset = j.at("z_offset");
    c.pressure_advance = j.at("pressure_advance");
    c.retraction_length = j.at("retraction_length");
    c.retraction_speed = j.at("retraction_speed");
    c.acceleration = j.at("acceleration");
    return c;
}

}  // namespace

std::string_view to_string(Material m) {
    switch (m) {
    case Material::pla: return "PLA";
    case Material::tpu: return "TPU";
    case Material::other: return "other";
    }
    return "other";
}

Material material_from_string(std::string_view s) {
    const auto l = to_lower(trim(s));
    if (l == "pla") return Material::pla;
    if (l == "tpu") return Material::tpu;
    return Material::other;
}

std::string_view to_string(PerturbationKind k) {
    switch (k) {
    case PerturbationKind::z_shift: return "z_shift";
    case PerturbationKind::flow_loss: return "flow_loss";
    case PerturbationKind::temp_drift: return "temp_drift";
    }
    return "z_shift";
}

PerturbationKind perturbation_kind_from_string(std::string_view s) {
    const auto l = to_lower(trim(s));
    if (l == "z_shift") return PerturbationKind::z_shift;
    if (l == "flow_loss") return PerturbationKind::flow_loss;
    if (l == "temp_drift") return PerturbationKind::temp_drift;
    throw std::invalid_argument("unknown perturbation kind '" + std::string(s) + "'");
}

VirtualPrinter::VirtualPrinter() : VirtualPrinter(Scenario{}) {}

VirtualPrinter::VirtualPrinter(const Scenario& scenario)
    : scenario_(scenario), commanded_(scenario.initial), pending_(scenario.perturbations) {
    hidden_.z_error = scenario.initial_z_error;
}

void VirtualPrinter::load_job(std::vector<CheckpointSlot> slots) {
    std::unique_lock lock(mutex_);
    if (slots.empty()) throw SimError("job has no checkpoints");
    slots_ = std::move(slots);
    cursor_ = 0;
    loaded_ = true;
    complete_ = false;
    layer_gap_history_.clear();
    step_locked();
}

bool VirtualPrinter::job_loaded() const {
    std::shared_lock lock(mutex_);
    return loaded_;
}

CheckpointEvent VirtualPrinter::step_checkpoint() {
    std::unique_lock lock(mutex_);
    return step_locked();
}

void VirtualPrinter::apply_perturbations_locked(int layer_number) {
    auto due = [&](const Perturbation& p) { return p.layer <= layer_number; };
    for (const auto& p : pending_) {
        if (!due(p)) continue;
        switch (p.kind) {
        case PerturbationKind::z_shift: hidden_.z_error += p.magnitude; break;
        case PerturbationKind::flow_loss: hidden_.flow_loss += p.magnitude; break;
        case PerturbationKind::temp_drift: hidden_.temp_drift += p.magnitude; break;
        }
    }
    std::erase_if(pending_, due);
    applied_through_layer_ = std::max(applied_through_layer_, layer_number);
}

ProcessState VirtualPrinter::true_state_locked() const {
    ProcessState s;
    s.flow_factor = commanded_.flow_factor - hidden_.flow_loss;
    s.speed_mm_s = commanded_.base_speed_mm_s * commanded_.speed_factor;
    s.nozzle_temp = commanded_.nozzle_target + hidden_.temp_drift;
    s.bed_temp = commanded_.bed_target;
    s.retraction_length = commanded_.retraction_length;
    s.retraction_speed = commanded_.retraction_speed;
    s.pressure_advance = commanded_.pressure_advance;
    s.z_offset_error = hidden_.z_error + commanded_.z_offset;
    int layer = 0;
    if (event_) {
        layer = event_->layer_index;
    } else if (cursor_ < slots_.size()) {
        layer = slots_[cursor_].layer_index;
    }
    s.first_layer = layer == 0;
    return s;
}

namespace {

CheckpointEvent build_event(const Scenario& scenario, const CheckpointSlot& slot, std::size_t ordinal,
                            const DefectSeverities& severities, const std::vector<double>& gaps, double z_error) {
    CheckpointEvent ev;
    ev.checkpoint = static_cast<int>(ordinal) + 1;
    ev.layer_index = slot.layer_index;
    ev.segment_index = slot.segment_index;
    ev.severities = severities;
    RenderSpec spec = scenario.render;
    if (slot.footprint.area() > 0) spec.footprint = slot.footprint;
    ev.top = render_layer_image(severities, checkpoint_seed(scenario.seed, ordinal, 0), spec);
    ev.front = render_front(gaps, spec, checkpoint_seed(scenario.seed, ordinal, 1));

    nlohmann::json sev = nlohmann::json::object();
    for (const auto m : kAllFailureModes) sev[std::string(to_string(m))] = severities[m];
    ev.metadata = {{"checkpoint", ev.checkpoint},
                   {"layer", ev.layer_index + 1},
                   {"segment", ev.segment_index},
                   {"material", std::string(to_string(scenario.material))},
                   {"severities", sev},
                   {"gap_fraction", ev.top.gap_fraction},
                   {"ground_truth_occupancy", ev.top.ground_truth_occupancy},
                   {"footprint", {ev.top.footprint.x0, ev.top.footprint.y0, ev.top.footprint.x1, ev.top.footprint.y1}}};
    if (std::abs(z_error) > 1e-9) {
        // Visible cue: a raised nozzle leaves gaps between lines, a low one squashes them.
        ev.metadata["cues"]["z"] = z_error > 0 ? "raised" : "lowered";
    }
    return ev;
}

}  // namespace

CheckpointEvent VirtualPrinter::step_locked() {
    if (!loaded_) throw SimError("no job loaded");
    if (complete_ || cursor_ >= slots_.size()) throw SimError("job already complete");
    const auto& slot = slots_[cursor_];
    apply_perturbations_locked(slot.layer_index + 1);
    event_.reset();
    auto state = true_state_locked();
    state.first_layer = slot.layer_index == 0;
    const auto severities = compute_severities(state, scenario_.nominal);

    // Front view shows one band per completed layer; a later segment of the
    // same layer overwrites that layer's band.
    const double g = gap_fraction(severities);
    if (static_cast<int>(layer_gap_history_.size()) > slot.layer_index) {
        layer_gap_history_[slot.layer_index] = g;
    } else {
        layer_gap_history_.resize(slot.layer_index + 1, g);
    }

    event_ = build_event(scenario_, slot, cursor_, severities, layer_gap_history_, state.z_offset_error);
    ++cursor_;
    paused_ = true;
    return *event_;
}

void VirtualPrinter::inject_perturbation(int layer, PerturbationKind kind, double magnitude) {
    std::unique_lock lock(mutex_);
    if (layer < 1) throw SimError("perturbation layer must be >= 1");
    if (layer <= applied_through_layer_) {
        throw SimError(fmt::format("layer {} has already been printed", layer));
    }
    pending_.push_back({layer, kind, magnitude});
}

void VirtualPrinter::fail_next_requests(int n) {
    std::unique_lock lock(mutex_);
    fail_requests_ = std::max(0, n);
}

void VirtualPrinter::drop_next_commands(int n) {
    std::unique_lock lock(mutex_);
    drop_commands_ = std::max(0, n);
}

void VirtualPrinter::set_camera_available(bool available) {
    std::unique_lock lock(mutex_);
    camera_available_ = available;
}

bool VirtualPrinter::take_transport_failure() {
    std::unique_lock lock(mutex_);
    if (fail_requests_ <= 0) return false;
    --fail_requests_;
    return true;
}

ProcessState VirtualPrinter::true_state() const {
    std::shared_lock lock(mutex_);
    return true_state_locked();
}

Commanded VirtualPrinter::commanded() const {
    std::shared_lock lock(mutex_);
    return commanded_;
}

Hidden VirtualPrinter::hidden() const {
    std::shared_lock lock(mutex_);
    return hidden_;
}

std::optional<CheckpointEvent> VirtualPrinter::current_event() const {
    std::shared_lock lock(mutex_);
    return event_;
}

std::vector<std::string> VirtualPrinter::command_log() const {
    std::shared_lock lock(mutex_);
    return command_log_;
}

int VirtualPrinter::shutdown_count() const {
    std::shared_lock lock(mutex_);
    return shutdowns_;
}

bool VirtualPrinter::complete() const {
    std::shared_lock lock(mutex_);
    return complete_;
}

bool VirtualPrinter::paused() const {
    std::shared_lock lock(mutex_);
    return paused_;
}

nlohmann::json VirtualPrinter::status_locked(const std::vector<std::pair<std::string, std::string>>& query) const {
    const double speed = commanded_.base_speed_mm_s * commanded_.speed_factor;
    int layer = 0;
    if (event_) layer = event_->layer_index + 1;
    int total_layers = 0;
    for (const auto& s : slots_) total_layers = std::max(total_layers, s.layer_index + 1);
    const double z = layer * scenario_.layer_height + commanded_.z_offset;
    const std::string state = complete_ ? "complete" : (!loaded_ ? "standby" : (paused_ ? "paused" : "printing"));

    nlohmann::json all = {
        {"gcode_move",
         {{"speed_factor", commanded_.speed_factor},
          {"extrude_factor", commanded_.flow_factor},
          {"speed", speed},
          {"absolute_coordinates", true},
          {"homing_origin", {0.0, 0.0, commanded_.z_offset, 0.0}},
          {"gcode_position", {0.0, 0.0, z, 0.0}}}},
        {"extruder",
         {{"temperature", commanded_.nozzle_target},
          {"target", commanded_.nozzle_target},
          {"pressure_advance", commanded_.pressure_advance},
          {"smooth_time", 0.04}}},
        {"heater_bed", {{"temperature", commanded_.bed_target}, {"target", commanded_.bed_target}}},
        {"fan", {{"speed", commanded_.fan}}},
        {"firmware_retraction",
         {{"retract_length", commanded_.retraction_length},
          {"retract_speed", commanded_.retraction_speed},
          {"unretract_extra_length", 0.0},
          {"unretract_speed", commanded_.retraction_speed}}},
        {"toolhead",
         {{"position", {0.0, 0.0, z + (paused_ ? 5.0 : 0.0), 0.0}},
          {"homed_axes", "xyz"},
          {"max_accel", commanded_.acceleration}}},
        {"print_stats",
         {{"state", state}, {"filename", scenario_.name + ".gcode"}, {"info", {{"current_layer", layer}, {"total_layer", total_layers}}}}},
        {"pause_resume", {{"is_paused", paused_ && !complete_}}},
        {"configfile", {{"settings", {{"printer", {{"kinematics", "cartesian"}}}}}}},
    };

    nlohmann::json status = nlohmann::json::object();
    for (const auto& [name, fields] : query) {
        if (!all.contains(name)) continue;
        if (std::find(scenario_.absent_objects.begin(), scenario_.absent_objects.end(), name) !=
            scenario_.absent_objects.end()) {
            continue;
        }
        if (fields.empty()) {
            status[name] = all[name];
            continue;
        }
        nlohmann::json sub = nlohmann::json::object();
        std::size_t start = 0;
        while (start <= fields.size()) {
            auto comma = fields.find(',', start);
            if (comma == std::string::npos) comma = fields.size();
            const auto f = fields.substr(start, comma - start);
            if (all[name].contains(f)) sub[f] = all[name][f];
            start = comma + 1;
        }
        status[name] = sub;
    }
    return status;
}

std::optional<std::string> VirtualPrinter::apply_line_locked(const std::string& raw) {
    std::string line = raw;
    if (const auto semi = line.find(';'); semi != std::string::npos) line.resize(semi);
    line = std::string(trim(line));
    if (line.empty()) return std::nullopt;
    command_log_.push_back(line);
    if (drop_commands_ > 0) {
        --drop_commands_;
        return std::nullopt;
    }
    const auto words = split_ws(line);
    const auto word = to_upper(words.front());

    if (is_shutdown_command(word)) {
        ++shutdowns_;
        return std::nullopt;
    }
    if (const auto change = gcode::parse_parameter_command(line)) {
        using gcode::Parameter;
        const double v = change->value;
        switch (change->parameter) {
        case Parameter::speed_factor:
            if (!(v > 0.0)) return "speed factor must be positive";
            commanded_.speed_factor = v;
            break;
        case Parameter::flow_factor:
            if (!(v > 0.0)) return "extrude factor must be positive";
            commanded_.flow_factor = v;
            break;
        case Parameter::nozzle_temp:
            if (v < 0.0 || v > 300.0) return fmt::format("Requested temperature ({:.1f}) out of range (0.0:300.0)", v);
            commanded_.nozzle_target = v;
            break;
        case Parameter::bed_temp:
            if (v < 0.0 || v > 130.0) return fmt::format("Requested temperature ({:.1f}) out of range (0.0:130.0)", v);
            commanded_.bed_target = v;
            break;
        case Parameter::fan: commanded_.fan = std::clamp(v, 0.0, 1.0); break;
        case Parameter::pressure_advance:
            if (v < 0.0 || v > 1.0) return "pressure advance out of range";
            commanded_.pressure_advance = v;
            break;
        case Parameter::retraction:
            if (!std::isnan(v)) {
                if (v < 0.0) return "retract length must be non-negative";
                commanded_.retraction_length = v;
            }
            if (!std::isnan(change->secondary)) {
                if (!(change->secondary > 0.0)) return "retract speed must be positive";
                commanded_.retraction_speed = change->secondary;
            }
            break;
        case Parameter::z_offset: commanded_.z_offset += v; break;
        }
        return std::nullopt;
    }

    const auto parsed = gcode::parse_line(line);
    if (word == "SET_GCODE_OFFSET") {
        for (const auto& [k, val] : parsed.args) {
            if (to_upper(k) == "Z") commanded_.z_offset = std::stod(val);
        }
        return std::nullopt;
    }
    if (word == "M204") {
        if (auto s = parsed.param('S')) commanded_.acceleration = *s;
        return std::nullopt;
    }
    if (word == "SET_VELOCITY_LIMIT") {
        for (const auto& [k, val] : parsed.args) {
            if (to_upper(k) == "ACCEL") commanded_.acceleration = std::stod(val);
        }
        return std::nullopt;
    }
    if (word == "PAUSE") {
        if (loaded_ && !complete_) paused_ = true;
        return std::nullopt;
    }
    if (word == "CANCEL_PRINT") {
        ++shutdowns_;
        complete_ = true;
        paused_ = false;
        return std::nullopt;
    }
    static const std::vector<std::string> accepted = {"G4", "M400", "G90", "G91", "M82", "M83", "M117", "M118",
                                                      "RESPOND", "STATUS", "GET_POSITION", "M105", "M114",
                                                      "PRINTLOOP_CAPTURE", "SAVE_GCODE_STATE", "RESTORE_GCODE_STATE"};
    if (std::find(accepted.begin(), accepted.end(), word) != accepted.end()) return std::nullopt;
    return fmt::format("Unknown command:\"{}\"", word);
}

HttpResponse VirtualPrinter::handle(const HttpRequest& request) {
    const auto [path, query] = printer::split_target(request.target);
    std::unique_lock lock(mutex_);

    if (request.method == "GET" && path == "/server/info") {
        return json_ok({{"klippy_connected", true},
                        {"klippy_state", "ready"},
                        {"moonraker_version", "printloop-sim"},
                        {"components", {"webcam", "printer"}}});
    }
    if (request.method == "GET" && path == "/printer/objects/query") {
        return json_ok({{"eventtime", 100.0 + static_cast<double>(cursor_)}, {"status", status_locked(query)}});
    }
    if (request.method == "POST" && path == "/printer/gcode/script") {
        std::string script;
        auto body = nlohmann::json::parse(request.body, nullptr, false);
        if (body.is_object() && body.contains("script") && body["script"].is_string()) {
            script = body["script"].get<std::string>();
        } else {
            for (const auto& [k, v] : query) {
                if (k == "script") script = v;
            }
        }
        if (trim(script).empty()) return json_error(400, "missing script");
        std::size_t start = 0;
        while (start <= script.size()) {
            auto nl = script.find('\n', start);
            if (nl == std::string::npos) nl = script.size();
            if (auto err = apply_line_locked(script.substr(start, nl - start))) return json_error(400, *err);
            start = nl + 1;
        }
        return json_ok("ok");
    }
    if (request.method == "POST" && path == "/printer/print/pause") {
        if (!loaded_ || complete_) return json_error(400, "Print is not active");
        paused_ = true;
        return json_ok("ok");
    }
    if (request.method == "POST" && path == "/printer/print/resume") {
        if (!paused_) return json_error(400, "Print is not paused");
        if (cursor_ >= slots_.size()) {
            complete_ = true;
            paused_ = false;
        } else {
            paused_ = false;
            step_locked();
        }
        return json_ok("ok");
    }
    if (request.method == "POST" && path == "/printer/print/cancel") {
        ++shutdowns_;
        complete_ = true;
        paused_ = false;
        return json_ok("ok");
    }
    static const std::vector<std::string> dangerous = {"/machine/shutdown", "/machine/reboot",
                                                       "/printer/emergency_stop", "/printer/restart",
                                                       "/printer/firmware_restart", "/server/restart"};
    if (std::find(dangerous.begin(), dangerous.end(), path) != dangerous.end() || path.starts_with("/machine/update")) {
        ++shutdowns_;
        return json_ok("ok");
    }
    if (request.method == "GET" && path == "/webcam/snapshot") {
        if (!camera_available_) return json_error(503, "camera offline");
        if (!event_) return json_error(503, "no frame available");
        std::string camera = "top";
        for (const auto& [k, v] : query) {
            if (k == "camera") camera = v;
        }
        if (camera != "top" && camera != "front") return json_error(404, "unknown camera '" + camera + "'");
        const auto& img = camera == "top" ? event_->top.decorated : event_->front;
        const auto png = encode_png(img);
        HttpResponse r{200, std::string(png.begin(), png.end()), "image/png", {}};
        auto meta = event_->metadata;
        meta["camera"] = camera;
        r.headers["X-Printloop-Meta"] = meta.dump();
        return r;
    }
    return json_error(404, "Not Found: " + path);
}

nlohmann::json VirtualPrinter::save_state() const {
    std::shared_lock lock(mutex_);
    nlohmann::json pending = nlohmann::json::array();
    for (const auto& p : pending_) {
        pending.push_back({{"layer", p.layer}, {"kind", std::string(to_string(p.kind))}, {"magnitude", p.magnitude}});
    }
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& s : slots_) {
        slots.push_back({{"layer", s.layer_index},
                         {"segment", s.segment_index},
                         {"footprint", {s.footprint.x0, s.footprint.y0, s.footprint.x1, s.footprint.y1}}});
    }
    nlohmann::json j = {{"commanded", commanded_to_json(commanded_)},
                        {"hidden",
                         {{"z_error", hidden_.z_error},
                          {"flow_loss", hidden_.flow_loss},
                          {"temp_drift", hidden_.temp_drift}}},
                        {"pending", pending},
                        {"slots", slots},
                        {"cursor", cursor_},
                        {"applied_through_layer", applied_through_layer_},
                        {"loaded", loaded_},
                        {"paused", paused_},
                        {"complete", complete_},
                        {"shutdowns", shutdowns_},
                        {"command_log", command_log_},
                        {"gap_history", layer_gap_history_}};
    if (event_) {
        nlohmann::json sev = nlohmann::json::object();
        for (const auto m : kAllFailureModes) sev[std::string(to_string(m))] = event_->severities[m];
        j["event"] = {{"severities", sev}, {"z_cue", event_->metadata.value("cues", nlohmann::json::object())}};
    }
    return j;
}

void VirtualPrinter::restore_state(const nlohmann::json& j) {
    std::unique_lock lock(mutex_);
    commanded_ = commanded_from_json(j.at("commanded"));
    hidden_.z_error = j.at("hidden").at("z_error");
    hidden_.flow_loss = j.at("hidden").at("flow_loss");
    hidden_.temp_drift = j.at("hidden").at("temp_drift");
    pending_.clear();
    for (const auto& p : j.at("pending")) {
        pending_.push_back({p.at("layer"), perturbation_kind_from_string(p.at("kind").get<std::string>()),
                            p.at("magnitude")});
    }
    slots_.clear();
    for (const auto& s : j.at("slots")) {
        const auto& f = s.at("footprint");
        slots_.push_back({s.at("layer"), s.at("segment"), PixelRect{f[0], f[1], f[2], f[3]}});
    }
    cursor_ = j.at("cursor");
    applied_through_layer_ = j.at("applied_through_layer");
    loaded_ = j.at("loaded");
    paused_ = j.at("paused");
    complete_ = j.at("complete");
    shutdowns_ = j.at("shutdowns");
    command_log_ = j.at("command_log").get<std::vector<std::string>>();
    layer_gap_history_ = j.at("gap_history").get<std::vector<double>>();
    event_.reset();
    if (j.contains("event") && cursor_ > 0) {
        DefectSeverities sev;
        for (const auto m : kAllFailureModes) sev.set(m, j["event"]["severities"].value(std::string(to_string(m)), 0.0));
        const auto ordinal = cursor_ - 1;
        double z_error = 0.0;
        const auto cue = j["event"]["z_cue"].value("z", std::string{});
        if (cue == "raised") z_error = 1.0;
        if (cue == "lowered") z_error = -1.0;
        event_ = build_event(scenario_, slots_[ordinal], ordinal, sev, layer_gap_history_, z_error);
    }
}

printer::HttpResponse SimTransport::send(const printer::HttpRequest& request) {
    if (printer_->take_transport_failure()) throw printer::TransportError("connection reset by peer (injected)");
    return printer_->handle(request);
}

}  // namespace printloop::sim
