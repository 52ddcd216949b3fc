#include "printloop/metrics.hpp"
#include "printloop/kernels.hpp"
#include "printloop/util.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace printloop::metrics {

std::uint8_t threshold_level(double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw std::invalid_argument(fmt::format("threshold {} outside (0, 1)", threshold));
    }
    return static_cast<std::uint8_t>(std::ceil(threshold * 255.0));
}

namespace {

void require_image(const GrayImage& image) {
    if (image.empty() || image.width <= 0 || image.height <= 0) throw std::invalid_argument("occupancy of an empty image");
}

}  // namespace

double occupancy(const GrayImage& image, double threshold) {
    require_image(image);
    const auto level = threshold_level(threshold);
    return static_cast<double>(kernels::parallel::count_at_least(image, level)) / static_cast<double>(image.size());
}

double occupancy(const GrayImage& image, const PixelRect& footprint, double threshold) {
    require_image(image);
    const PixelRect clipped{std::max(0, footprint.x0), std::max(0, footprint.y0), std::min(image.width, footprint.x1),
                            std::min(image.height, footprint.y1)};
    if (clipped.area() == 0) throw MetricsError("footprint mask has zero area");
    const auto level = threshold_level(threshold);
    return static_cast<double>(kernels::parallel::count_at_least(image, level, clipped)) /
           static_cast<double>(clipped.area());
}

double occupancy(const GrayImage& image, const GrayImage& mask, double threshold) {
    require_image(image);
    if (mask.width != image.width || mask.height != image.height) {
        throw std::invalid_argument("mask size differs from image size");
    }
    const auto area = kernels::parallel::count_nonzero(mask);
    if (area == 0) throw MetricsError("footprint mask has zero area");
    const auto level = threshold_level(threshold);
    return static_cast<double>(kernels::parallel::count_at_least_masked(image, level, mask)) /
           static_cast<double>(area);
}

std::string_view to_string(AnnotatorRole r) {
    switch (r) {
    case AnnotatorRole::expert: return "expert";
    case AnnotatorRole::participant: return "participant";
    case AnnotatorRole::llm: return "llm";
    }
    return "expert";
}

AnnotatorRole annotator_role_from_string(std::string_view s) {
    const auto v = to_lower(trim(s));
    if (v == "expert") return AnnotatorRole::expert;
    if (v == "participant") return AnnotatorRole::participant;
    if (v == "llm") return AnnotatorRole::llm;
    throw std::invalid_argument("unknown annotator role '" + std::string(s) + "'");
}

nlohmann::json AnnotationSet::to_json() const {
    nlohmann::json layers_json = nlohmann::json::object();
    for (const auto& [layer, modes] : layers) {
        nlohmann::json m = nlohmann::json::array();
        for (const auto mode : modes) m.push_back(std::string(printloop::to_string(mode)));
        layers_json[std::to_string(layer)] = m;
    }
    return {{"annotator", annotator}, {"role", std::string(to_string(role))}, {"layers", layers_json}};
}

std::vector<AnnotationSet> parse_annotations(const std::string& text) {
    std::vector<AnnotationSet> out;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = trim(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = trim(line.substr(0, hash));
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            auto comma = line.find(',', pos);
            if (comma == std::string_view::npos) comma = line.size();
            cols.emplace_back(trim(line.substr(pos, comma - pos)));
            pos = comma + 1;
        }
        if (cols.size() != 4) throw MetricsError(fmt::format("annotation line {}: expected 4 columns", line_no));
        if (to_lower(cols[0]) == "layer") continue;  // header
        int layer = 0;
        try {
            std::size_t used = 0;
            layer = std::stoi(cols[0], &used);
            if (used != cols[0].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw MetricsError(fmt::format("annotation line {}: bad layer '{}'", line_no, cols[0]));
        }
        if (layer < 1) throw MetricsError(fmt::format("annotation line {}: layers are numbered from 1", line_no));
        AnnotatorRole role;
        try {
            role = annotator_role_from_string(cols[2]);
        } catch (const std::invalid_argument& e) {
            throw MetricsError(fmt::format("annotation line {}: {}", line_no, e.what()));
        }
        auto it = std::find_if(out.begin(), out.end(), [&](const AnnotationSet& s) { return s.annotator == cols[1]; });
        if (it == out.end()) {
            out.push_back({cols[1], role, {}});
            it = std::prev(out.end());
        } else if (it->role != role) {
            throw MetricsError(fmt::format("annotation line {}: annotator '{}' changes role", line_no, cols[1]));
        }
        auto& modes = it->layers[layer];
        if (to_lower(cols[3]) == "none") continue;
        const auto mode = failure_mode_from_alias(cols[3]);
        if (!mode) throw MetricsError(fmt::format("annotation line {}: unknown failure mode '{}'", line_no, cols[3]));
        modes.insert(*mode);
    }
    return out;
}

std::vector<AnnotationSet> load_annotations(const std::string& path) { return parse_annotations(read_file(path)); }

AnnotationSet merge_union(const std::vector<AnnotationSet>& sets, AnnotatorRole role) {
    AnnotationSet merged{"", role, {}};
    std::vector<std::string> names;
    for (const auto& s : sets) {
        if (s.role != role) continue;
        names.push_back(s.annotator);
        for (const auto& [layer, modes] : s.layers) merged.layers[layer].insert(modes.begin(), modes.end());
    }
    if (names.empty()) throw MetricsError(fmt::format("no annotator with role {}", to_string(role)));
    for (const auto& n : names) merged.annotator += (merged.annotator.empty() ? "" : "+") + n;
    return merged;
}

AnnotationSet detections_from_log(const std::vector<nlohmann::json>& records) {
    AnnotationSet out{"llm", AnnotatorRole::llm, {}};
    for (const auto& r : records) {
        if (r.value("kind", "") != "report" || r.value("module", "") != "detector") continue;
        const auto& p = r.at("payload");
        auto& modes = out.layers[p.at("layer_index").get<int>() + 1];
        for (const auto& f : p.at("failures")) {
            if (auto m = failure_mode_from_string(f.at("mode").get<std::string>())) modes.insert(*m);
        }
    }
    return out;
}

std::optional<double> ModeCounts::precision() const {
    if (tp + fp == 0) return std::nullopt;
    return static_cast<double>(tp) / (tp + fp);
}

std::optional<double> ModeCounts::recall() const {
    if (tp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / (tp + fn);
}

nlohmann::json ConfusionMatrix::to_json() const {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [mode, c] : modes) {
        auto opt = [](std::optional<double> v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
        m[std::string(printloop::to_string(mode))] = {{"tp", c.tp},
                                                      {"fp", c.fp},
                                                      {"fn", c.fn},
                                                      {"tn", c.tn},
                                                      {"precision", opt(c.precision())},
                                                      {"recall", opt(c.recall())}};
    }
    return {{"layers", layers}, {"modes", m}};
}

std::string ConfusionMatrix::to_csv() const {
    std::string out = "mode,tp,fp,fn,tn,precision,recall\n";
    for (const auto& [mode, c] : modes) {
        auto opt = [](std::optional<double> v) { return v ? fixed(*v, 4) : std::string{}; };
        out += fmt::format("{},{},{},{},{},{},{}\n", printloop::to_string(mode), c.tp, c.fp, c.fn, c.tn,
                           opt(c.precision()), opt(c.recall()));
    }
    return out;
}

ConfusionMatrix compare_detections(const AnnotationSet& detected, const AnnotationSet& truth) {
    if (truth.role != AnnotatorRole::expert) throw MetricsError("ground truth must come from expert annotators");
    std::set<int> d_layers, t_layers;
    for (const auto& [l, _] : detected.layers) d_layers.insert(l);
    for (const auto& [l, _] : truth.layers) t_layers.insert(l);
    if (d_layers != t_layers) {
        auto range = [](const std::set<int>& s) {
            return s.empty() ? std::string("none") : fmt::format("{}..{} ({} layers)", *s.begin(), *s.rbegin(), s.size());
        };
        throw MetricsError("layer ranges differ: detected " + range(d_layers) + ", truth " + range(t_layers));
    }
    ConfusionMatrix cm;
    cm.layers = static_cast<int>(t_layers.size());
    for (const auto mode : kAllFailureModes) {
        ModeCounts c;
        for (const auto layer : t_layers) {
            const bool d = detected.layers.at(layer).count(mode) > 0;
            const bool t = truth.layers.at(layer).count(mode) > 0;
            if (d && t) ++c.tp;
            else if (d) ++c.fp;
            else if (t) ++c.fn;
            else ++c.tn;
        }
        cm.modes[mode] = c;
    }
    return cm;
}

Trajectory parameter_trajectory(const std::vector<nlohmann::json>& records) {
    Trajectory out;
    for (const auto& r : records) {
        if (r.value("kind", "") != "action") continue;
        const auto& p = r.at("payload");
        if (p.value("status", "") != "ok" || !p.contains("changes")) continue;
        const int cp = r.value("checkpoint", 0);
        for (const auto& c : p.at("changes")) {
            auto& series = out[c.at("parameter").get<std::string>()];
            if (series.empty() && c.contains("before") && !c["before"].is_null()) {
                series.push_back({0, c["before"].get<double>(), true});
            }
            series.push_back({cp, c.at("expected").get<double>(), false});
        }
    }
    return out;
}

OccupancySeries occupancy_series(const std::vector<nlohmann::json>& records) {
    OccupancySeries out;
    for (const auto& r : records) {
        if (r.value("kind", "") != "checkpoint_end") continue;
        const auto& p = r.at("payload");
        if (!p.contains("occupancy") || p["occupancy"].is_null()) continue;
        out.push_back({r.value("checkpoint", 0), p["occupancy"].get<double>()});
    }
    return out;
}

std::string trajectory_csv(const Trajectory& trajectory) {
    std::string out = "parameter,checkpoint,value,baseline\n";
    for (const auto& [name, points] : trajectory) {
        for (const auto& p : points) {
            out += fmt::format("{},{},{},{}\n", name, p.checkpoint, fixed(p.value, 4), p.baseline ? 1 : 0);
        }
    }
    return out;
}

std::string occupancy_csv(const OccupancySeries& series) {
    std::string out = "checkpoint,occupancy\n";
    for (const auto& p : series) out += fmt::format("{},{}\n", p.checkpoint, fixed(p.occupancy, 6));
    return out;
}

std::string series_svg(const std::string& title, const std::vector<std::pair<double, double>>& points,
                       const std::string& x_label, const std::string& y_label) {
    constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
    if (!points.empty()) {
        x_min = x_max = points.front().first;
        y_min = y_max = points.front().second;
        for (const auto& [x, y] : points) {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    }
    if (x_max - x_min < 1e-9) x_max = x_min + 1;
    const double pad = std::max(1e-6, (y_max - y_min) * 0.1);
    if (y_max - y_min < 1e-9) {
        y_min -= std::max(0.05, std::abs(y_min) * 0.05);
        y_max += std::max(0.05, std::abs(y_max) * 0.05);
    } else {
        y_min -= pad;
        y_max += pad;
    }
    auto sx = [&](double x) { return L + (x - x_min) / (x_max - x_min) * (W - L - R); };
    auto sy = [&](double y) { return H - B - (y - y_min) / (y_max - y_min) * (H - T - B); };
    auto esc = [](const std::string& s) {
        std::string o;
        for (char c : s) {
            if (c == '<') o += "&lt;";
            else if (c == '>') o += "&gt;";
            else if (c == '&') o += "&amp;";
            else o += c;
        }
        return o;
    };

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        "<text x=\"{2}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{3}</text>\n",
        W, H, W / 2, esc(title));
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", L, H - B, W - R);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", L, T, H - B);
    for (int i = 0; i <= 4; ++i) {
        const double y = y_min + (y_max - y_min) * i / 4.0;
        svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", L - 6, sy(y) + 4, fixed(y, 3));
        const double x = x_min + (x_max - x_min) * i / 4.0;
        svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", sx(x), H - B + 18,
                           fixed(x, 1));
    }
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", (L + W - R) / 2, H - 10,
                       esc(x_label));
    svg += fmt::format("<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
                       (T + H - B) / 2, esc(y_label));
    if (!points.empty()) {
        std::string path;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto [x, y] = points[i];
            if (i == 0) {
                path += fmt::format("M{:.1f},{:.1f}", sx(x), sy(y));
            } else {
                path += fmt::format(" H{:.1f} V{:.1f}", sx(x), sy(y));
            }
        }
        svg += "<path d=\"" + path + "\" fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"2\"/>\n";
        for (const auto& [x, y] : points) {
            svg += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3.5\" fill=\"#1f5fa8\"/>\n", sx(x), sy(y));
        }
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace printloop::metrics
