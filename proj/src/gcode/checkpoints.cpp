#include "printloop/gcode.hpp"
#include "printloop/util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace printloop::gcode {

namespace {

constexpr std::string_view kBeginPrefix = "<printloop:begin ";
constexpr std::string_view kEndPrefix = "<printloop:end ";

bool is_sentinel(const GcodeLine& line, std::string_view prefix) {
    return !line.command && line.comment && line.comment->starts_with(prefix);
}

struct InsertionPoint {
    std::size_t before_line = 0;
    int layer = 0;
    int segment = 0;
};

std::vector<InsertionPoint> insertion_points(const GcodeDocument& doc, const CheckpointPolicy& policy) {
    std::vector<InsertionPoint> points;
    std::vector<const LayerSegment*> printed;
    for (const auto& layer : doc.layers) {
        if (!layer.sub_segments.empty()) printed.push_back(&layer);
    }
    for (std::size_t i = 0; i < printed.size(); ++i) {
        const auto& layer = *printed[i];
        switch (policy.granularity) {
        case Granularity::per_segment:
            for (std::size_t s = 0; s < layer.sub_segments.size(); ++s) {
                points.push_back({layer.sub_segments[s].end, layer.layer_index, static_cast<int>(s)});
            }
            break;
        case Granularity::per_layer:
            points.push_back({layer.extrusion_span().end, layer.layer_index, 0});
            break;
        case Granularity::every_n_layers:
            if ((i + 1) % static_cast<std::size_t>(policy.count) == 0 || i + 1 == printed.size()) {
                points.push_back({layer.extrusion_span().end, layer.layer_index, 0});
            }
            break;
        }
    }
    return points;
}

std::vector<std::string> wrap_block(const std::string& id, std::vector<std::string> body) {
    std::vector<std::string> out;
    out.reserve(body.size() + 2);
    out.push_back(fmt::format(";{}{}>", kBeginPrefix, id));
    for (auto& l : body) out.push_back(std::move(l));
    out.push_back(fmt::format(";{}{}>", kEndPrefix, id));
    return out;
}

}  // namespace

CheckpointPolicy CheckpointPolicy::per_layer() { return {}; }

CheckpointPolicy CheckpointPolicy::per_segment(int k) {
    CheckpointPolicy p;
    p.granularity = Granularity::per_segment;
    p.count = k;
    return p;
}

CheckpointPolicy CheckpointPolicy::every_n_layers(int n) {
    CheckpointPolicy p;
    p.granularity = Granularity::every_n_layers;
    p.count = n;
    return p;
}

PurgeTowerSpec default_purge_placement(const CheckpointPolicy& policy, double diameter, double layer_height) {
    PurgeTowerSpec spec;
    spec.diameter = diameter;
    spec.layer_height = layer_height;
    const double offset = diameter / 2.0 + 5.0;
    spec.center = {policy.park_position.x + offset, policy.park_position.y + offset};
    return spec;
}

std::vector<std::vector<std::string>> synthesize_purge_tower(const PurgeTowerSpec& spec, int n_layers) {
    if (!(spec.diameter > spec.nozzle_diameter)) {
        throw std::invalid_argument("purge tower diameter must exceed the nozzle width");
    }
    if (n_layers < 1) throw std::invalid_argument("purge tower needs at least one layer");

    const double filament_area = std::numbers::pi * spec.filament_diameter * spec.filament_diameter / 4.0;
    const double e_per_mm = spec.layer_height * spec.extrusion_width / filament_area;

    std::vector<double> radii;
    for (double r = spec.diameter / 2.0 - spec.extrusion_width / 2.0; r >= spec.extrusion_width / 2.0;
         r -= spec.extrusion_width) {
        radii.push_back(r);
    }

    std::vector<std::vector<std::string>> blocks;
    blocks.reserve(static_cast<std::size_t>(n_layers));
    for (int layer = 0; layer < n_layers; ++layer) {
        std::vector<std::string> block;
        const double z = spec.layer_height * (layer + 1);
        block.push_back(fmt::format("; printloop purge layer={}", layer));
        block.push_back("M83");
        block.push_back(fmt::format("G1 Z{} F600", fixed(z, 3)));
        for (const double r : radii) {
            const int n = std::max(12, static_cast<int>(std::ceil(2.0 * std::numbers::pi * r / 1.5)));
            double px = spec.center.x + r;
            double py = spec.center.y;
            block.push_back(fmt::format("G0 X{} Y{} F{}", fixed(px, 3), fixed(py, 3), fixed(spec.feedrate_mm_min * 2, 0)));
            for (int i = 1; i <= n; ++i) {
                const double a = 2.0 * std::numbers::pi * i / n;
                const double x = spec.center.x + r * std::cos(a);
                const double y = spec.center.y + r * std::sin(a);
                const double e = std::hypot(x - px, y - py) * e_per_mm;
                block.push_back(fmt::format("G1 X{} Y{} E{} F{}", fixed(x, 3), fixed(y, 3), fixed(e, 3),
                                            fixed(spec.feedrate_mm_min, 0)));
                px = x;
                py = y;
            }
        }
        blocks.push_back(std::move(block));
    }
    return blocks;
}

GcodeDocument inject_checkpoints(const GcodeDocument& input, const CheckpointPolicy& policy) {
    if (policy.count < 1) throw std::invalid_argument("checkpoint count must be >= 1");
    const int k = policy.granularity == Granularity::per_segment ? policy.count : 1;
    const bool resegment = input.layers.empty() ||
                           (policy.granularity == Granularity::per_segment &&
                            std::any_of(input.layers.begin(), input.layers.end(), [&](const auto& l) {
                                return !l.sub_segments.empty() && static_cast<int>(l.sub_segments.size()) != k;
                            }));
    const GcodeDocument doc = resegment ? segment_layers(input, k) : input;

    const auto points = insertion_points(doc, policy);
    const auto states = replay_motion(doc);

    std::vector<std::vector<std::string>> purge;
    int printed_layers = 0;
    for (const auto& l : doc.layers) printed_layers += l.sub_segments.empty() ? 0 : 1;
    if (policy.purge_tower) {
        Box2 tower;
        const double reach = policy.purge_tower->diameter / 2.0 + policy.purge_tower->extrusion_width / 2.0;
        tower.expand(policy.purge_tower->center.x - reach, policy.purge_tower->center.y - reach);
        tower.expand(policy.purge_tower->center.x + reach, policy.purge_tower->center.y + reach);
        if (tower.intersects(doc.model_bounds())) {
            throw ToolpathError("purge tower footprint intersects the model bounding box");
        }
        purge = synthesize_purge_tower(*policy.purge_tower, printed_layers);
    }

    // layer_index -> ordinal among printed layers
    std::vector<int> ordinal(doc.layers.size(), -1);
    {
        int o = 0;
        for (std::size_t i = 0; i < doc.layers.size(); ++i) {
            if (!doc.layers[i].sub_segments.empty()) ordinal[i] = o++;
        }
    }

    std::vector<std::pair<std::size_t, std::vector<std::string>>> inserts;
    std::size_t block_no = 0;
    auto next_id = [&] { return derived_uuid(doc.source_digest + ":" + std::to_string(block_no++)); };

    if (!purge.empty()) {
        const auto& first = *std::find_if(doc.layers.begin(), doc.layers.end(),
                                          [](const auto& l) { return !l.sub_segments.empty(); });
        std::vector<std::string> body{"; printloop prime", "SAVE_GCODE_STATE NAME=PRINTLOOP"};
        for (auto& l : purge.front()) body.push_back(l);
        body.push_back("RESTORE_GCODE_STATE NAME=PRINTLOOP MOVE=0");
        inserts.emplace_back(first.extrusion_span().begin, wrap_block(next_id(), std::move(body)));
    }

    for (const auto& pt : points) {
        const auto& at = states[pt.before_line - 1];
        std::vector<std::string> body;
        body.push_back(fmt::format("; printloop checkpoint layer={} segment={}", pt.layer, pt.segment));
        body.push_back("SAVE_GCODE_STATE NAME=PRINTLOOP");
        body.push_back(policy.pause_command);
        body.push_back("G90");
        body.push_back(fmt::format("G1 Z{} F600", fixed(at.z + policy.park_z_lift, 3)));
        body.push_back(fmt::format("G0 X{} Y{} F6000", fixed(policy.park_position.x, 3),
                                   fixed(policy.park_position.y, 3)));
        body.push_back(fmt::format("{} LAYER={} SEGMENT={}", policy.capture_marker, pt.layer, pt.segment));
        const bool layer_done = policy.granularity != Granularity::per_segment ||
                                pt.segment + 1 == static_cast<int>(doc.layers[static_cast<std::size_t>(pt.layer)].sub_segments.size());
        const int next_tower_layer = ordinal[static_cast<std::size_t>(pt.layer)] + 1;
        if (!purge.empty() && layer_done && next_tower_layer < static_cast<int>(purge.size())) {
            for (const auto& l : purge[static_cast<std::size_t>(next_tower_layer)]) body.push_back(l);
        }
        body.push_back("; printloop resume");
        body.push_back("RESTORE_GCODE_STATE NAME=PRINTLOOP MOVE=1 MOVE_SPEED=100");
        inserts.emplace_back(pt.before_line, wrap_block(next_id(), std::move(body)));
    }

    std::stable_sort(inserts.begin(), inserts.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    GcodeDocument out;
    out.trailing_newline = doc.trailing_newline;
    out.layer_height = doc.layer_height;
    std::size_t next = 0;
    std::vector<std::size_t> remap(doc.lines.size() + 1, 0);
    for (std::size_t i = 0; i <= doc.lines.size(); ++i) {
        while (next < inserts.size() && inserts[next].first == i) {
            for (const auto& text : inserts[next].second) out.lines.push_back(parse_line(text));
            ++next;
        }
        remap[i] = out.lines.size();
        if (i < doc.lines.size()) out.lines.push_back(doc.lines[i]);
    }
    out.layers = doc.layers;
    for (auto& layer : out.layers) {
        layer.line_span = {remap[layer.line_span.begin], remap[layer.line_span.end]};
        for (auto& s : layer.sub_segments) s = {remap[s.begin], remap[s.end]};
    }
    out.source_digest = sha256_hex(serialize(out));
    return out;
}

GcodeDocument strip_checkpoints(const GcodeDocument& doc) {
    GcodeDocument out;
    out.trailing_newline = doc.trailing_newline;
    out.layer_height = doc.layer_height;
    std::optional<std::string> open;
    for (const auto& line : doc.lines) {
        if (!open && is_sentinel(line, kBeginPrefix)) {
            open = line.comment->substr(kBeginPrefix.size());
            continue;
        }
        if (open) {
            if (is_sentinel(line, kEndPrefix) && line.comment->substr(kEndPrefix.size()) == *open) {
                open.reset();
            }
            continue;
        }
        out.lines.push_back(line);
    }
    out.source_digest = sha256_hex(serialize(out));
    if (!doc.layers.empty()) {
        const int k = static_cast<int>(std::max<std::size_t>(1, doc.layers.front().sub_segments.size()));
        try {
            out = segment_layers(std::move(out), k);
        } catch (const ToolpathError&) {
        }
    }
    return out;
}

std::vector<CheckpointMarker> list_checkpoints(const GcodeDocument& doc, std::string_view capture_marker) {
    std::vector<CheckpointMarker> markers;
    const auto name = to_upper(capture_marker);
    for (const auto& line : doc.lines) {
        if (line.command != name) continue;
        CheckpointMarker m;
        for (const auto& [k, v] : line.args) {
            if (k == "LAYER") m.layer_index = std::stoi(v);
            if (k == "SEGMENT") m.segment_index = std::stoi(v);
        }
        markers.push_back(m);
    }
    return markers;
}

}  // namespace printloop::gcode
