#include "printloop/gcode.hpp"
#include "printloop/util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace printloop::gcode {

namespace {

constexpr std::array<std::pair<Parameter, std::string_view>, 8> kNames{{
    {Parameter::speed_factor, "speed_factor"},
    {Parameter::flow_factor, "flow_factor"},
    {Parameter::nozzle_temp, "nozzle_temp"},
    {Parameter::bed_temp, "bed_temp"},
    {Parameter::fan, "fan"},
    {Parameter::pressure_advance, "pressure_advance"},
    {Parameter::retraction, "retraction"},
    {Parameter::z_offset, "z_offset"},
}};

int percent(double fraction) { return static_cast<int>(std::lround(fraction * 100.0)); }

std::optional<double> arg_number(const GcodeLine& line, std::string_view key) {
    for (const auto& [k, v] : line.args) {
        if (k != key) continue;
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used == v.size() && std::isfinite(d)) return d;
        } catch (const std::exception&) {
        }
        return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace

std::string_view parameter_name(Parameter p) {
    for (const auto& [param, name] : kNames) {
        if (param == p) return name;
    }
    return "unknown";
}

Parameter parameter_from_name(std::string_view name) {
    for (const auto& [param, n] : kNames) {
        if (n == name) return param;
    }
    throw UnsupportedParameter("unsupported parameter '" + std::string(name) + "'");
}

std::vector<std::string> render_parameter_command(const ParameterChange& change) {
    switch (change.parameter) {
    case Parameter::speed_factor:
        return {fmt::format("M220 S{}", percent(change.value))};
    case Parameter::flow_factor:
        return {fmt::format("M221 S{}", percent(change.value))};
    case Parameter::nozzle_temp:
        return {fmt::format("M104 S{}", std::lround(change.value))};
    case Parameter::bed_temp:
        return {fmt::format("M140 S{}", std::lround(change.value))};
    case Parameter::fan:
        return {fmt::format("M106 S{}", std::lround(std::clamp(change.value, 0.0, 1.0) * 255.0))};
    case Parameter::pressure_advance:
        return {fmt::format("SET_PRESSURE_ADVANCE ADVANCE={}", fixed(change.value, 3))};
    case Parameter::retraction:
        return {fmt::format("SET_RETRACTION RETRACT_LENGTH={} RETRACT_SPEED={}", fixed(change.value, 3),
                            fixed(change.secondary, 1))};
    case Parameter::z_offset:
        return {fmt::format("SET_GCODE_OFFSET Z_ADJUST={} MOVE=1", fixed(change.value, 3))};
    }
    throw UnsupportedParameter("unsupported parameter");
}

std::optional<ParameterChange> parse_parameter_command(std::string_view text) {
    GcodeLine line;
    try {
        line = parse_line(text);
    } catch (const ParseError&) {
        return std::nullopt;
    }
    if (!line.command) return std::nullopt;
    const auto& c = *line.command;
    const auto s = line.param('S');
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();

    if ((c == "M220" || c == "M221") && s) {
        return ParameterChange{c == "M220" ? Parameter::speed_factor : Parameter::flow_factor, *s / 100.0};
    }
    if ((c == "M104" || c == "M109") && s) return ParameterChange{Parameter::nozzle_temp, *s};
    if ((c == "M140" || c == "M190") && s) return ParameterChange{Parameter::bed_temp, *s};
    if (c == "M106") return ParameterChange{Parameter::fan, s.value_or(255.0) / 255.0};
    if (c == "M107") return ParameterChange{Parameter::fan, 0.0};
    if (c == "SET_PRESSURE_ADVANCE") {
        if (auto v = arg_number(line, "ADVANCE")) return ParameterChange{Parameter::pressure_advance, *v};
        return std::nullopt;
    }
    if (c == "SET_RETRACTION") {
        const auto len = arg_number(line, "RETRACT_LENGTH");
        const auto spd = arg_number(line, "RETRACT_SPEED");
        if (!len && !spd) return std::nullopt;
        return ParameterChange{Parameter::retraction, len.value_or(nan), spd.value_or(nan)};
    }
    if (c == "SET_GCODE_OFFSET") {
        if (auto v = arg_number(line, "Z_ADJUST")) return ParameterChange{Parameter::z_offset, *v};
        return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace printloop::gcode
