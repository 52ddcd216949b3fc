#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace printloop::gcode {

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line_number, const std::string& what)
        : std::runtime_error("line " + std::to_string(line_number) + ": " + what),
          line_number_(line_number) {}

    /// 1-based.
    std::size_t line_number() const noexcept { return line_number_; }

private:
    std::size_t line_number_;
};

class ToolpathError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct Box2 {
    double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
    bool empty = true;

    void expand(double x, double y);
    bool intersects(const Box2& other) const;
};

/// One source line. `raw_text` holds the exact bytes (without the newline);
/// the parsed fields are a view used by the transforms and never re-serialized.
struct GcodeLine {
    std::string raw_text;
    std::optional<std::string> command;
    std::map<char, double> params;
    /// KEY=VALUE arguments of extended (macro-style) commands.
    std::vector<std::pair<std::string, std::string>> args;
    std::optional<std::string> comment;

    bool is_move() const { return command == "G0" || command == "G1"; }
    std::optional<double> param(char letter) const;
};

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive

    std::size_t size() const { return end - begin; }
    bool operator==(const Span&) const = default;
};

struct LayerSegment {
    int layer_index = 0;
    double z = 0.0;
    Span line_span;
    /// Contiguous spans partitioning the layer's extrusion-move span.
    std::vector<Span> sub_segments;
    /// Extrusion path length (mm) of each sub-segment.
    std::vector<double> sub_segment_lengths;
    Box2 extrusion_bounds;

    Span extrusion_span() const;
};

struct GcodeDocument {
    std::vector<GcodeLine> lines;
    bool trailing_newline = false;
    std::vector<LayerSegment> layers;
    double layer_height = 0.0;
    std::string source_digest;

    Box2 model_bounds() const;
};

GcodeLine parse_line(std::string_view text, std::size_t line_number = 0);
GcodeDocument parse(std::string_view text);
std::string serialize(const GcodeDocument& doc);

/// Detects layers (slicer markers first, Z heuristic otherwise) and splits each
/// layer's extrusion moves into `k` parts balanced by extrusion path length.
GcodeDocument segment_layers(GcodeDocument doc, int k);

/// Per-move kinematic state replayed over the document.
struct MotionState {
    double x = 0.0, y = 0.0, z = 0.0, e = 0.0;
    double feedrate = 0.0;
    bool absolute_xyz = true;
    bool absolute_e = true;
};

/// Returns the state *after* each line (size == doc.lines.size()).
std::vector<MotionState> replay_motion(const GcodeDocument& doc);

// ---------------------------------------------------------------------------
// Checkpoints and purge tower

struct PurgeTowerSpec {
    Point2 center{15.0, 15.0};
    double diameter = 20.0;
    double layer_height = 0.35;
    double extrusion_width = 0.45;
    double nozzle_diameter = 0.4;
    double filament_diameter = 1.75;
    double feedrate_mm_min = 1800.0;
};

enum class Granularity { per_layer, per_segment, every_n_layers };

struct CheckpointPolicy {
    Granularity granularity = Granularity::per_layer;
    /// k for per-segment, n for every-n-layers.
    int count = 1;
    Point2 park_position{0.0, 0.0};
    double park_z_lift = 5.0;
    std::string capture_marker = "PRINTLOOP_CAPTURE";
    std::string pause_command = "PAUSE";
    std::optional<PurgeTowerSpec> purge_tower;

    static CheckpointPolicy per_layer();
    static CheckpointPolicy per_segment(int k);
    static CheckpointPolicy every_n_layers(int n);
};

/// Places the purge tower next to the park position, on the side facing the bed.
PurgeTowerSpec default_purge_placement(const CheckpointPolicy& policy, double diameter,
                                       double layer_height);

struct CheckpointMarker {
    int layer_index = 0;
    int segment_index = 0;
};

GcodeDocument inject_checkpoints(const GcodeDocument& doc, const CheckpointPolicy& policy);

/// Removes every sentinel-delimited block; the result serializes to the
/// pre-injection text.
GcodeDocument strip_checkpoints(const GcodeDocument& doc);

/// Capture markers found in an injected document, in file order.
std::vector<CheckpointMarker> list_checkpoints(const GcodeDocument& doc,
                                               std::string_view capture_marker = "PRINTLOOP_CAPTURE");

std::vector<std::vector<std::string>> synthesize_purge_tower(const PurgeTowerSpec& spec, int n_layers);

// ---------------------------------------------------------------------------
// Parameter commands

enum class Parameter {
    speed_factor,
    flow_factor,
    nozzle_temp,
    bed_temp,
    fan,
    pressure_advance,
    retraction,
    z_offset,
};

class UnsupportedParameter : public std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

std::string_view parameter_name(Parameter p);
/// Throws UnsupportedParameter for names outside the whitelist.
Parameter parameter_from_name(std::string_view name);

/// Fractions for factors and fan (0.75 = 75 %), degrees C for temperatures,
/// seconds for pressure advance, mm for the z-offset adjustment (relative).
/// Retraction uses `value` = length (mm) and `secondary` = speed (mm/s).
struct ParameterChange {
    Parameter parameter;
    double value = 0.0;
    double secondary = 0.0;

    bool operator==(const ParameterChange&) const = default;
};

std::vector<std::string> render_parameter_command(const ParameterChange& change);

/// Inverse of render_parameter_command for a single line; nullopt for lines
/// that are not parameter commands.
std::optional<ParameterChange> parse_parameter_command(std::string_view line);

}  // namespace printloop::gcode
