#include "printloop/gcode.hpp"
#include "printloop/sim.hpp"
#include "printloop/util.hpp"

#include "../common/ini.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace printloop::sim {

using ini::read;

namespace {

gcode::Granularity granularity_from_string(const std::string& s) {
    const auto l = to_lower(s);
    if (l == "per_layer" || l == "layer") return gcode::Granularity::per_layer;
    if (l == "per_segment" || l == "segment") return gcode::Granularity::per_segment;
    if (l == "every_n_layers") return gcode::Granularity::every_n_layers;
    throw std::invalid_argument("unknown granularity '" + s + "'");
}

}  // namespace

Scenario parse_scenario(const std::string& text, const std::string& base_dir) {
    const auto tree = ini::parse(text, "scenario");

    Scenario s;
    if (auto sec = tree.get_child_optional("scenario")) {
        read(*sec, "name", s.name);
        std::string material;
        read(*sec, "material", material);
        if (!material.empty()) s.material = material_from_string(material);
        read(*sec, "part_description", s.part_description);
        read(*sec, "seed", s.seed);
        read(*sec, "layers", s.layers);
        read(*sec, "segments", s.segments);
        std::string granularity;
        read(*sec, "granularity", granularity);
        if (!granularity.empty()) s.granularity = granularity_from_string(granularity);
        read(*sec, "layer_height", s.layer_height);
        std::string gcode_path;
        read(*sec, "gcode", gcode_path);
        if (!gcode_path.empty()) {
            std::filesystem::path p(gcode_path);
            if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
            s.gcode_path = p.lexically_normal().string();
        }
        std::string absent;
        read(*sec, "absent_objects", absent);
        std::istringstream list(absent);
        for (std::string item; std::getline(list, item, ',');) {
            if (!trim(item).empty()) s.absent_objects.emplace_back(trim(item));
        }
    }
    if (auto sec = tree.get_child_optional("nominal")) {
        read(*sec, "flow_factor", s.nominal.flow_factor);
        read(*sec, "speed", s.nominal.speed_mm_s);
        read(*sec, "nozzle_temp", s.nominal.nozzle_temp);
        read(*sec, "bed_temp", s.nominal.bed_temp);
    }
    // Initial commanded values default to nominal.
    s.initial.base_speed_mm_s = s.nominal.speed_mm_s;
    s.initial.nozzle_target = s.nominal.nozzle_temp;
    s.initial.bed_target = s.nominal.bed_temp;
    if (auto sec = tree.get_child_optional("initial")) {
        read(*sec, "flow_factor", s.initial.flow_factor);
        read(*sec, "speed_factor", s.initial.speed_factor);
        read(*sec, "print_speed", s.initial.base_speed_mm_s);
        read(*sec, "nozzle_temp", s.initial.nozzle_target);
        read(*sec, "bed_temp", s.initial.bed_target);
        read(*sec, "fan", s.initial.fan);
        read(*sec, "z_offset", s.initial.z_offset);
        read(*sec, "pressure_advance", s.initial.pressure_advance);
        read(*sec, "retract_length", s.initial.retraction_length);
        read(*sec, "retract_speed", s.initial.retraction_speed);
        read(*sec, "z_error", s.initial_z_error);
    }
    if (auto sec = tree.get_child_optional("render")) {
        read(*sec, "width", s.render.width);
        read(*sec, "height", s.render.height);
        const int mx = static_cast<int>(std::lround(s.render.width * 0.1));
        const int my = static_cast<int>(std::lround(s.render.height * 0.1));
        s.render.footprint = {mx, my, s.render.width - mx, s.render.height - my};
    }
    for (const auto& [name, sec] : tree) {
        if (!name.starts_with("perturbation")) continue;
        Perturbation p;
        read(sec, "layer", p.layer);
        std::string kind;
        read(sec, "kind", kind);
        p.kind = perturbation_kind_from_string(kind);
        read(sec, "magnitude", p.magnitude);
        s.perturbations.push_back(p);
    }

    if (s.layers < 1) throw std::invalid_argument("scenario: layers must be >= 1");
    if (s.segments < 1) throw std::invalid_argument("scenario: segments must be >= 1");
    if (!(s.nominal.speed_mm_s > 0.0)) throw std::invalid_argument("scenario: nominal speed must be positive");
    return s;
}

Scenario load_scenario(const std::string& path) {
    const auto base = std::filesystem::path(path).parent_path().string();
    return parse_scenario(read_file(path), base.empty() ? "." : base);
}

std::vector<CheckpointSlot> plan_checkpoints(const Scenario& scenario) {
    const int per_layer_slots = scenario.granularity == gcode::Granularity::per_segment ? scenario.segments : 1;
    std::vector<CheckpointSlot> slots;

    if (!scenario.gcode_path) {
        for (int l = 0; l < scenario.layers; ++l) {
            for (int k = 0; k < per_layer_slots; ++k) slots.push_back({l, k, scenario.render.footprint});
        }
        return slots;
    }

    const auto doc = gcode::segment_layers(gcode::parse(read_file(*scenario.gcode_path)), per_layer_slots);
    const auto model = doc.model_bounds();
    const auto& area = scenario.render.footprint;
    const double mw = std::max(1e-6, model.max_x - model.min_x);
    const double mh = std::max(1e-6, model.max_y - model.min_y);
    const double scale = std::min((area.x1 - area.x0) / mw, (area.y1 - area.y0) / mh);
    const double ox = area.x0 + ((area.x1 - area.x0) - mw * scale) / 2.0;
    const double oy = area.y0 + ((area.y1 - area.y0) - mh * scale) / 2.0;
    for (const auto& layer : doc.layers) {
        if (layer.sub_segments.empty()) continue;
        const auto& b = layer.extrusion_bounds;
        PixelRect fp = area;
        if (!b.empty) {
            // Image y grows downward, bed y grows upward.
            fp.x0 = static_cast<int>(std::floor(ox + (b.min_x - model.min_x) * scale));
            fp.x1 = static_cast<int>(std::ceil(ox + (b.max_x - model.min_x) * scale));
            fp.y0 = static_cast<int>(std::floor(oy + (model.max_y - b.max_y) * scale));
            fp.y1 = static_cast<int>(std::ceil(oy + (model.max_y - b.min_y) * scale));
            if (fp.area() == 0) fp = area;
        }
        const int n = static_cast<int>(layer.sub_segments.size());
        if (scenario.granularity == gcode::Granularity::every_n_layers) {
            const bool last = &layer == &doc.layers.back();
            if ((layer.layer_index + 1) % std::max(1, scenario.segments) != 0 && !last) continue;
        }
        for (int k = 0; k < (per_layer_slots > 1 ? n : 1); ++k) slots.push_back({layer.layer_index, k, fp});
    }
    return slots;
}

}  // namespace printloop::sim
