#include "printloop/printer.hpp"
#include "printloop/util.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <thread>

namespace printloop::printer {

namespace {

using Clock = std::chrono::steady_clock;

HttpRequest get(std::string target) {
    HttpRequest r;
    r.method = "GET";
    r.target = std::move(target);
    return r;
}

HttpRequest post(std::string target, std::string body) {
    HttpRequest r;
    r.method = "POST";
    r.target = std::move(target);
    r.body = std::move(body);
    return r;
}

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::optional<double> number_at(const nlohmann::json& obj, const char* key) {
    if (!obj.is_object()) return std::nullopt;
    const auto it = obj.find(key);
    if (it == obj.end() || !it->is_number()) return std::nullopt;
    return it->get<double>();
}

}  // namespace

std::string_view to_string(ApiStatus status) {
    switch (status) {
    case ApiStatus::ok: return "ok";
    case ApiStatus::denied: return "denied";
    case ApiStatus::transport_error: return "transport-error";
    case ApiStatus::printer_error: return "printer-error";
    }
    return "unknown";
}

std::string_view to_string(Camera camera) { return camera == Camera::top ? "top" : "front"; }

PrinterSnapshot PrinterSnapshot::from_status(const nlohmann::json& status) {
    PrinterSnapshot s;
    if (status.contains("gcode_move")) {
        const auto& g = status["gcode_move"];
        s.flow_factor = number_at(g, "extrude_factor");
        s.speed_factor = number_at(g, "speed_factor");
        s.print_speed = number_at(g, "speed");
        if (g.contains("homing_origin") && g["homing_origin"].is_array() && g["homing_origin"].size() >= 3) {
            s.z_offset = g["homing_origin"][2].get<double>();
        }
    }
    if (status.contains("extruder")) {
        const auto& e = status["extruder"];
        const auto t = number_at(e, "temperature");
        const auto tg = number_at(e, "target");
        if (t || tg) s.nozzle_temp = TempPair{tg.value_or(0.0), t.value_or(0.0)};
        s.pressure_advance = number_at(e, "pressure_advance");
    }
    if (status.contains("heater_bed")) {
        const auto& b = status["heater_bed"];
        const auto t = number_at(b, "temperature");
        const auto tg = number_at(b, "target");
        if (t || tg) s.bed_temp = TempPair{tg.value_or(0.0), t.value_or(0.0)};
    }
    if (status.contains("fan")) s.fan = number_at(status["fan"], "speed");
    if (status.contains("firmware_retraction")) {
        const auto& r = status["firmware_retraction"];
        const auto len = number_at(r, "retract_length");
        const auto spd = number_at(r, "retract_speed");
        if (len || spd) s.retraction = Retraction{len, spd};
    }
    for (const char* obj : {"toolhead", "motion_report"}) {
        if (s.position || !status.contains(obj)) continue;
        const auto& t = status[obj];
        const char* key = std::string_view(obj) == "toolhead" ? "position" : "live_position";
        if (t.contains(key) && t[key].is_array() && t[key].size() >= 3) {
            s.position = Position{t[key][0].get<double>(), t[key][1].get<double>(), t[key][2].get<double>()};
        }
    }
    if (status.contains("print_stats")) {
        const auto& p = status["print_stats"];
        if (p.contains("state") && p["state"].is_string()) s.print_state = p["state"].get<std::string>();
        if (p.contains("info") && p["info"].is_object()) {
            if (auto layer = number_at(p["info"], "current_layer")) {
                s.layer_index = static_cast<int>(*layer) - 1;
            }
        }
    }
    if (status.contains("pause_resume")) {
        const auto& p = status["pause_resume"];
        if (p.contains("is_paused") && p["is_paused"].is_boolean()) s.paused = p["is_paused"].get<bool>();
    }
    return s;
}

std::map<std::string, double> PrinterSnapshot::flatten() const {
    std::map<std::string, double> out;
    if (flow_factor) out["flow_factor"] = *flow_factor;
    if (speed_factor) out["speed_factor"] = *speed_factor;
    if (print_speed) out["print_speed"] = *print_speed;
    if (nozzle_temp) {
        out["nozzle_temp"] = nozzle_temp->actual;
        out["nozzle_target"] = nozzle_temp->target;
    }
    if (bed_temp) {
        out["bed_temp"] = bed_temp->actual;
        out["bed_target"] = bed_temp->target;
    }
    if (fan) out["fan"] = *fan;
    if (z_offset) out["z_offset"] = *z_offset;
    if (pressure_advance) out["pressure_advance"] = *pressure_advance;
    if (retraction) {
        if (retraction->length) out["retraction_length"] = *retraction->length;
        if (retraction->speed) out["retraction_speed"] = *retraction->speed;
    }
    if (layer_index) out["layer_index"] = *layer_index;
    if (paused) out["paused"] = *paused ? 1.0 : 0.0;
    return out;
}

void PrinterSnapshot::validate() const {
    auto fail = [](const std::string& what) { throw std::domain_error("invalid snapshot: " + what); };
    if (flow_factor && !(*flow_factor > 0.0)) fail("flow_factor must be > 0");
    if (speed_factor && !(*speed_factor > 0.0)) fail("speed_factor must be > 0");
    if (nozzle_temp && (nozzle_temp->actual < 0.0 || nozzle_temp->target < 0.0)) fail("negative nozzle temperature");
    if (bed_temp && (bed_temp->actual < 0.0 || bed_temp->target < 0.0)) fail("negative bed temperature");
    if (fan && (*fan < 0.0 || *fan > 1.0)) fail("fan outside [0, 1]");
    if (retraction && retraction->length && *retraction->length < 0.0) fail("negative retraction length");
}

// ---------------------------------------------------------------------------

PrinterClient::PrinterClient(std::shared_ptr<Transport> transport, EndpointCatalog catalog, ClientOptions options)
    : transport_(std::move(transport)), catalog_(std::move(catalog)), options_(std::move(options)) {
    catalog_.validate();
    if (!options_.sleep) {
        options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
    if (options_.max_attempts < 1) options_.max_attempts = 1;
}

GuardVerdict PrinterClient::guard(std::string_view endpoint_or_command) const {
    return printer::guard(catalog_, endpoint_or_command);
}

ApiResult PrinterClient::call(const HttpRequest& request, HttpResponse* raw) {
    ApiResult result;
    const auto start = Clock::now();
    for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
        result.attempts = attempt;
        try {
            auto response = transport_->send(request);
            result.latency_ms = elapsed_ms(start);
            if (response.status >= 200 && response.status < 300) {
                result.status = ApiStatus::ok;
                if (response.content_type.starts_with("application/json")) {
                    auto j = nlohmann::json::parse(response.body, nullptr, false);
                    result.body = j.is_object() && j.contains("result") ? j["result"] : j;
                }
            } else {
                result.status = ApiStatus::printer_error;
                auto j = nlohmann::json::parse(response.body, nullptr, false);
                if (j.is_object() && j.contains("error")) {
                    result.message = j["error"].value("message", response.body);
                    result.body = j["error"];
                } else {
                    result.message = response.body;
                }
            }
            if (raw) *raw = std::move(response);
            return result;
        } catch (const TransportError& e) {
            result.status = ApiStatus::transport_error;
            result.message = e.what();
            if (attempt < options_.max_attempts) {
                const auto delay = options_.backoff * (1 << (attempt - 1));
                spdlog::warn("{} {} failed ({}), retrying in {} ms", request.method, request.target, e.what(),
                             delay.count());
                options_.sleep(delay);
            }
        }
    }
    result.latency_ms = elapsed_ms(start);
    result.body = {{"retry", {{"attempts", result.attempts}, {"backoff_ms", options_.backoff.count()}}}};
    return result;
}

QueryResult PrinterClient::query_objects(const std::vector<std::string>& names) {
    if (names.empty()) throw std::invalid_argument("query_objects needs at least one object");
    QueryResult q;
    for (const auto& n : names) {
        const auto verdict = guard(n);
        if (!verdict.allowed) {
            q.result.status = ApiStatus::denied;
            q.result.message = verdict.reason;
            return q;
        }
    }
    std::string target = "/printer/objects/query?";
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i) target += '&';
        target += url_encode(names[i]);
    }
    q.result = call(get(target));
    if (!q.result.ok()) return q;
    q.status = q.result.body.contains("status") ? q.result.body["status"] : nlohmann::json::object();
    q.snapshot = PrinterSnapshot::from_status(q.status);
    for (const auto& n : names) {
        if (!q.status.contains(n)) q.absent.push_back(n);
    }
    return q;
}

ApiResult PrinterClient::run_gcode(std::string_view script) {
    if (trim(script).empty()) throw std::invalid_argument("run_gcode needs a non-empty script");
    const auto verdict = guard(script);
    if (!verdict.allowed) {
        ApiResult denied;
        denied.status = ApiStatus::denied;
        denied.message = verdict.reason;
        return denied;
    }
    std::lock_guard lane(command_lane_);
    const nlohmann::json body = {{"script", std::string(script)}};
    auto r = call(post("/printer/gcode/script", body.dump()));
    if (r.ok()) r.message = r.body.is_string() ? r.body.get<std::string>() : r.body.dump();
    return r;
}

ApiResult PrinterClient::paused_state(bool& paused) {
    auto q = query_objects({"pause_resume", "print_stats"});
    if (!q.result.ok()) return q.result;
    paused = q.snapshot.paused.value_or(false);
    q.result.body = q.status;
    return q.result;
}

ApiResult PrinterClient::pause() {
    std::lock_guard lane(command_lane_);
    bool paused = false;
    auto state = paused_state(paused);
    if (!state.ok()) return state;
    if (paused) {
        state.message = "already paused";
        state.body = {{"noop", true}};
        return state;
    }
    const auto print_state = state.body.value(nlohmann::json::json_pointer("/print_stats/state"), std::string{});
    if (!print_state.empty() && print_state != "printing") {
        ApiResult r;
        r.status = ApiStatus::printer_error;
        r.message = "no active print (state " + print_state + ")";
        return r;
    }
    return call(post("/printer/print/pause", "{}"));
}

ApiResult PrinterClient::resume() {
    std::lock_guard lane(command_lane_);
    bool paused = false;
    auto state = paused_state(paused);
    if (!state.ok()) return state;
    if (!paused) {
        state.warning = true;
        state.message = "printer not paused";
        state.body = {{"noop", true}};
        return state;
    }
    return call(post("/printer/print/resume", "{}"));
}

ApiResult PrinterClient::server_info() { return call(get("/server/info")); }

SnapshotResult PrinterClient::capture_snapshot(Camera camera) {
    SnapshotResult snap;
    HttpResponse raw;
    snap.result = call(get("/webcam/snapshot?camera=" + std::string(to_string(camera))), &raw);
    if (snap.result.status == ApiStatus::printer_error) {
        snap.result.status = ApiStatus::transport_error;
        snap.result.message = "camera unavailable: " + snap.result.message;
    }
    if (!snap.result.ok()) return snap;

    snap.bytes.assign(raw.body.begin(), raw.body.end());
    if (const auto it = raw.headers.find("X-Printloop-Meta"); it != raw.headers.end()) {
        snap.annotations = nlohmann::json::parse(it->second, nullptr, false);
        if (snap.annotations.is_discarded()) snap.annotations = nullptr;
    }
    if (raw.content_type.starts_with("image/png")) {
        auto image = decode_png(snap.bytes);
        const auto bounded = fit_long_edge(image, options_.max_image_edge);
        if (bounded.width != image.width) {
            snap.bytes = encode_png(bounded);
            if (snap.annotations.is_object()) snap.annotations["downscaled_from"] = {image.width, image.height};
        }
        snap.meta = {bounded.width, bounded.height, "png"};
    } else {
        snap.meta.format = raw.content_type.starts_with("image/jpeg") ? "jpeg" : raw.content_type;
    }
    return snap;
}

// ---------------------------------------------------------------------------

HttpResponse RecordingTransport::send(const HttpRequest& request) {
    {
        std::lock_guard lock(mutex_);
        requests_.push_back(request);
    }
    return inner_->send(request);
}

std::vector<HttpRequest> RecordingTransport::requests() const {
    std::lock_guard lock(mutex_);
    return requests_;
}

void RecordingTransport::clear() {
    std::lock_guard lock(mutex_);
    requests_.clear();
}

std::string url_encode(std::string_view s) {
    std::string out;
    for (const unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == ',') {
            out += static_cast<char>(c);
        } else {
            static constexpr char hex[] = "0123456789ABCDEF";
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 15];
        }
    }
    return out;
}

std::pair<std::string, std::vector<std::pair<std::string, std::string>>> split_target(std::string_view target) {
    auto decode = [](std::string_view in) {
        std::string out;
        for (std::size_t i = 0; i < in.size(); ++i) {
            if (in[i] == '%' && i + 2 < in.size()) {
                out += static_cast<char>(std::stoi(std::string(in.substr(i + 1, 2)), nullptr, 16));
                i += 2;
            } else if (in[i] == '+') {
                out += ' ';
            } else {
                out += in[i];
            }
        }
        return out;
    };
    const auto q = target.find('?');
    std::pair<std::string, std::vector<std::pair<std::string, std::string>>> out;
    out.first = std::string(target.substr(0, q));
    if (q == std::string_view::npos) return out;
    auto rest = target.substr(q + 1);
    while (!rest.empty()) {
        auto amp = rest.find('&');
        const auto part = rest.substr(0, amp);
        const auto eq = part.find('=');
        if (!part.empty()) {
            out.second.emplace_back(decode(part.substr(0, eq)),
                                    eq == std::string_view::npos ? std::string{} : decode(part.substr(eq + 1)));
        }
        if (amp == std::string_view::npos) break;
        rest = rest.substr(amp + 1);
    }
    return out;
}

}  // namespace printloop::printer
