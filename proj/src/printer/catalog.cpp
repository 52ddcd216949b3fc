#include "printloop/gcode.hpp"
#include "printloop/printer.hpp"
#include "printloop/util.hpp"

#include <algorithm>

namespace printloop::printer {

namespace {

bool id_matches(std::string_view pattern, std::string_view id) {
    if (pattern.ends_with(".*")) {
        return id.starts_with(pattern.substr(0, pattern.size() - 1));
    }
    return pattern == id;
}

std::string first_word_upper(std::string_view line) {
    if (const auto semi = line.find(';'); semi != std::string_view::npos) line = line.substr(0, semi);
    for (const auto w : split_ws(line)) {
        const bool line_number = w.size() > 1 && (w.front() == 'N' || w.front() == 'n') &&
                                 std::all_of(w.begin() + 1, w.end(), [](char c) { return c >= '0' && c <= '9'; });
        if (!line_number) return to_upper(w);
    }
    return {};
}

}  // namespace

EndpointCatalog EndpointCatalog::moonraker_default() {
    EndpointCatalog c;
    c.allowed = {
        {"printer.objects.query", "GET", "/printer/objects/query", "Query current values of printer status objects"},
        {"printer.gcode.script", "POST", "/printer/gcode/script", "Run a G-code script or firmware macro"},
        {"printer.print.pause", "POST", "/printer/print/pause", "Pause the active print"},
        {"printer.print.resume", "POST", "/printer/print/resume", "Resume a paused print"},
        {"server.info", "GET", "/server/info", "Host and firmware connection state"},
        {"webcam.snapshot", "GET", "/webcam/snapshot", "Still image from the top or front camera"},
    };
    c.excluded = {
        {"machine.shutdown", "powers off the host"},
        {"machine.reboot", "reboots the host"},
        {"printer.emergency_stop", "halts the firmware (requires restart)"},
        {"printer.restart", "restarts the firmware host process"},
        {"printer.firmware_restart", "restarts the microcontroller firmware"},
        {"server.restart", "restarts the API server"},
        {"machine.update.*", "modifies installed firmware or software"},
        {"printer.print.cancel", "aborts the job"},
    };
    c.denied_commands = {
        {"M112", "emergency stop"},
        {"M999", "firmware restart after halt"},
        {"M80", "power supply control"},
        {"M81", "power off"},
        {"M500", "writes settings to permanent storage"},
        {"M502", "factory reset of settings"},
        {"M997", "firmware update"},
        {"FIRMWARE_RESTART", "firmware restart"},
        {"RESTART", "host restart"},
        {"SAVE_CONFIG", "permanent configuration write (restarts firmware)"},
        {"SHUTDOWN_MACHINE", "host shutdown macro"},
        {"REBOOT", "host reboot macro"},
        {"CANCEL_PRINT", "aborts the job"},
    };
    c.objects = {
        {"gcode_move", "speed_factor, extrude_factor (flow), speed (mm/s), homing_origin (z-offset is index 2)"},
        {"extruder", "temperature, target (deg C), pressure_advance (s)"},
        {"heater_bed", "temperature, target (deg C)"},
        {"fan", "speed (0..1)"},
        {"firmware_retraction", "retract_length (mm), retract_speed (mm/s)"},
        {"toolhead", "position [x, y, z, e], homed_axes"},
        {"motion_report", "live_position, live_velocity"},
        {"print_stats", "state, info.current_layer"},
        {"pause_resume", "is_paused"},
        {"configfile", "static configuration settings"},
    };
    return c;
}

EndpointCatalog EndpointCatalog::from_json(const nlohmann::json& j) {
    EndpointCatalog c = moonraker_default();
    if (j.contains("allowed")) {
        c.allowed.clear();
        for (const auto& e : j.at("allowed")) {
            c.allowed.push_back({e.at("id"), e.value("method", "GET"), e.value("path", ""), e.value("description", "")});
        }
    }
    auto read_exclusions = [&](const char* key, std::vector<Exclusion>& out) {
        if (!j.contains(key)) return;
        out.clear();
        for (const auto& e : j.at(key)) out.push_back({e.at("id"), e.value("reason", "")});
    };
    read_exclusions("excluded", c.excluded);
    read_exclusions("denied_commands", c.denied_commands);
    if (j.contains("objects")) {
        c.objects.clear();
        for (const auto& e : j.at("objects")) c.objects.push_back({e.at("id"), e.value("description", "")});
    }
    c.validate();
    return c;
}

nlohmann::json EndpointCatalog::to_json() const {
    nlohmann::json j;
    for (const auto& e : allowed) {
        j["allowed"].push_back({{"id", e.id}, {"method", e.method}, {"path", e.path}, {"description", e.description}});
    }
    for (const auto& e : excluded) j["excluded"].push_back({{"id", e.id}, {"reason", e.reason}});
    for (const auto& e : denied_commands) j["denied_commands"].push_back({{"id", e.id}, {"reason", e.reason}});
    for (const auto& e : objects) j["objects"].push_back({{"id", e.id}, {"description", e.description}});
    return j;
}

const EndpointInfo* EndpointCatalog::find_allowed(std::string_view id) const {
    const auto it = std::find_if(allowed.begin(), allowed.end(), [&](const auto& e) { return e.id == id; });
    return it == allowed.end() ? nullptr : &*it;
}

const Exclusion* EndpointCatalog::find_excluded(std::string_view id) const {
    const auto it = std::find_if(excluded.begin(), excluded.end(), [&](const auto& e) { return id_matches(e.id, id); });
    return it == excluded.end() ? nullptr : &*it;
}

const ObjectInfo* EndpointCatalog::find_object(std::string_view id) const {
    const auto it = std::find_if(objects.begin(), objects.end(), [&](const auto& e) { return e.id == id; });
    return it == objects.end() ? nullptr : &*it;
}

void EndpointCatalog::validate() const {
    for (const auto& a : allowed) {
        if (find_excluded(a.id)) {
            throw std::logic_error("endpoint '" + a.id + "' is both allowed and excluded");
        }
    }
}

GuardVerdict guard(const EndpointCatalog& catalog, std::string_view endpoint_or_command) {
    const auto subject = trim(endpoint_or_command);
    if (const auto* ex = catalog.find_excluded(subject)) {
        return GuardVerdict::deny(std::string(subject) + ": " + ex->reason);
    }
    if (catalog.find_allowed(subject) || catalog.find_object(subject)) {
        return GuardVerdict::allow();
    }

    std::size_t start = 0;
    while (start <= subject.size()) {
        auto nl = subject.find('\n', start);
        if (nl == std::string_view::npos) nl = subject.size();
        const auto word = first_word_upper(subject.substr(start, nl - start));
        if (!word.empty()) {
            for (const auto& d : catalog.denied_commands) {
                if (word == d.id) return GuardVerdict::deny(word + ": " + d.reason);
            }
        }
        start = nl + 1;
    }
    return GuardVerdict::allow();
}

}  // namespace printloop::printer
