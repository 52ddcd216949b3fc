#include "printloop/gcode.hpp"
#include "printloop/util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace printloop::gcode {

namespace {

constexpr double kZEpsilon = 1e-6;

bool is_layer_marker(const GcodeLine& line) {
    if (!line.comment || line.command) return false;
    const auto c = trim(*line.comment);
    return c.starts_with("LAYER:") || c.starts_with("LAYER_CHANGE");
}

std::optional<double> layer_height_comment(const GcodeLine& line) {
    if (!line.comment) return std::nullopt;
    auto c = trim(*line.comment);
    std::string_view value;
    if (c.starts_with("Layer height:")) {
        value = trim(c.substr(13));
    } else if (c.starts_with("layer_height =")) {
        value = trim(c.substr(14));
    } else {
        return std::nullopt;
    }
    try {
        return std::stod(std::string(value));
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

struct ExtrusionMove {
    std::size_t line = 0;
    double length = 0.0;
};

// Positive E delta together with XY travel.
std::vector<ExtrusionMove> extrusion_moves(const GcodeDocument& doc,
                                           const std::vector<MotionState>& states) {
    std::vector<ExtrusionMove> moves;
    MotionState prev;
    for (std::size_t i = 0; i < doc.lines.size(); ++i) {
        const auto& s = states[i];
        if (doc.lines[i].is_move() && doc.lines[i].param('E') && s.e > prev.e + 1e-9) {
            const double len = std::hypot(s.x - prev.x, s.y - prev.y);
            if (len > 1e-9) moves.push_back({i, len});
        }
        prev = s;
    }
    return moves;
}

std::vector<Span> detect_layer_spans(const GcodeDocument& doc, const std::vector<MotionState>& states,
                                     const std::vector<ExtrusionMove>& moves) {
    std::vector<std::size_t> markers;
    for (std::size_t i = 0; i < doc.lines.size(); ++i) {
        if (is_layer_marker(doc.lines[i])) markers.push_back(i);
    }
    std::vector<Span> spans;
    if (!markers.empty()) {
        for (std::size_t m = 0; m < markers.size(); ++m) {
            const auto end = m + 1 < markers.size() ? markers[m + 1] : doc.lines.size();
            spans.push_back({markers[m], end});
        }
        return spans;
    }

    // Z heuristic: a new layer begins where Z was last changed before the
    // first extrusion at a higher Z.
    double layer_z = -std::numeric_limits<double>::infinity();
    std::size_t z_set_line = 0;
    double prev_z = 0.0;
    std::size_t next_move = 0;
    for (std::size_t i = 0; i < doc.lines.size(); ++i) {
        if (std::abs(states[i].z - prev_z) > kZEpsilon) z_set_line = i;
        prev_z = states[i].z;
        if (next_move < moves.size() && moves[next_move].line == i) {
            ++next_move;
            if (states[i].z > layer_z + kZEpsilon) {
                const auto start = spans.empty() ? z_set_line : std::max(z_set_line, spans.back().begin + 1);
                if (!spans.empty()) spans.back().end = start;
                spans.push_back({start, doc.lines.size()});
                layer_z = states[i].z;
            }
        }
    }
    return spans;
}

// Splits moves [first, last) into `k` contiguous groups whose cumulative
// lengths land as close as possible to the equal-share targets.
std::vector<std::size_t> balanced_cuts(const std::vector<double>& lengths, int k) {
    const auto n = lengths.size();
    std::vector<double> cum(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) cum[i + 1] = cum[i] + lengths[i];
    const auto parts = std::min<std::size_t>(static_cast<std::size_t>(k), n);
    std::vector<std::size_t> cuts{0};
    for (std::size_t p = 1; p < parts; ++p) {
        const double target = cum[n] * static_cast<double>(p) / static_cast<double>(parts);
        const auto lo = cuts.back() + 1;
        const auto hi = n - (parts - p);  // leave one move per remaining part
        std::size_t best = lo;
        for (auto c = lo; c <= hi; ++c) {
            if (std::abs(cum[c] - target) < std::abs(cum[best] - target)) best = c;
        }
        cuts.push_back(best);
    }
    cuts.push_back(n);
    return cuts;
}

}  // namespace

GcodeDocument segment_layers(GcodeDocument doc, int k) {
    if (k < 1) throw std::invalid_argument("segment count must be >= 1");
    const auto states = replay_motion(doc);
    const auto moves = extrusion_moves(doc, states);
    if (moves.empty()) throw ToolpathError("empty toolpath: no extrusion moves");

    const auto spans = detect_layer_spans(doc, states, moves);
    doc.layers.clear();
    std::size_t mi = 0;
    for (std::size_t li = 0; li < spans.size(); ++li) {
        LayerSegment layer;
        layer.layer_index = static_cast<int>(li);
        layer.line_span = spans[li];

        std::vector<ExtrusionMove> mine;
        while (mi < moves.size() && moves[mi].line < spans[li].begin) ++mi;
        while (mi < moves.size() && moves[mi].line < spans[li].end) mine.push_back(moves[mi++]);

        if (!mine.empty()) {
            layer.z = states[mine.front().line].z;
            std::vector<double> lengths;
            lengths.reserve(mine.size());
            for (const auto& m : mine) {
                lengths.push_back(m.length);
                const auto& s = states[m.line];
                const auto& p = m.line > 0 ? states[m.line - 1] : MotionState{};
                layer.extrusion_bounds.expand(s.x, s.y);
                layer.extrusion_bounds.expand(p.x, p.y);
            }
            const auto cuts = balanced_cuts(lengths, k);
            for (std::size_t p = 0; p + 1 < cuts.size(); ++p) {
                const auto begin = p == 0 ? mine.front().line : mine[cuts[p] - 1].line + 1;
                const auto end = mine[cuts[p + 1] - 1].line + 1;
                layer.sub_segments.push_back({begin, end});
                double len = 0.0;
                for (auto m = cuts[p]; m < cuts[p + 1]; ++m) len += lengths[m];
                layer.sub_segment_lengths.push_back(len);
            }
        } else {
            layer.z = states[spans[li].begin].z;
        }
        doc.layers.push_back(std::move(layer));
    }

    std::optional<double> from_comment;
    for (const auto& line : doc.lines) {
        if ((from_comment = layer_height_comment(line))) break;
    }
    if (from_comment) {
        doc.layer_height = *from_comment;
    } else {
        double best = std::numeric_limits<double>::infinity();
        double prev = 0.0;
        for (const auto& layer : doc.layers) {
            if (layer.sub_segments.empty()) continue;
            const double dz = layer.z - prev;
            if (dz > kZEpsilon) best = std::min(best, dz);
            prev = layer.z;
        }
        doc.layer_height = std::isfinite(best) ? best : 0.0;
    }
    return doc;
}

}  // namespace printloop::gcode
