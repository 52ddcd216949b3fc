#pragma once

#include "printloop/failure_mode.hpp"
#include "printloop/image.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace printloop::metrics {

class MetricsError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Occupancy

inline constexpr double kDefaultThreshold = 0.5;

/// Pixel value that counts as occupied for a normalized threshold in (0, 1).
std::uint8_t threshold_level(double threshold);

/// Occupied pixels over total pixels. A binary image (0/255) works with any threshold.
double occupancy(const GrayImage& image, double threshold = kDefaultThreshold);
/// Restricted to a footprint rectangle.
double occupancy(const GrayImage& image, const PixelRect& footprint, double threshold = kDefaultThreshold);
/// Restricted to the non-zero pixels of `mask` (same size as the image).
double occupancy(const GrayImage& image, const GrayImage& mask, double threshold = kDefaultThreshold);

struct OccupancyPoint {
    int checkpoint = 0;
    double occupancy = 0.0;
};

using OccupancySeries = std::vector<OccupancyPoint>;

// ---------------------------------------------------------------------------
// Annotations and confusion matrices

enum class AnnotatorRole { expert, participant, llm };

std::string_view to_string(AnnotatorRole r);
AnnotatorRole annotator_role_from_string(std::string_view s);

/// Labels per layer (1-based layer numbers). A layer mapped to an empty set
/// was inspected and found clean.
struct AnnotationSet {
    std::string annotator;
    AnnotatorRole role = AnnotatorRole::expert;
    std::map<int, std::set<FailureMode>> layers;

    nlohmann::json to_json() const;
};

/// Table rows `layer,annotator,role,mode` (mode `none` marks a clean layer).
/// Blank lines, `#` comments and a header row are skipped. One set per annotator, in order of appearance.
std::vector<AnnotationSet> parse_annotations(const std::string& text);
std::vector<AnnotationSet> load_annotations(const std::string& path);

/// Union of every annotator with the given role; layers covered by any of them.
AnnotationSet merge_union(const std::vector<AnnotationSet>& sets, AnnotatorRole role);

/// Detector reports in a session log, as an annotation set (role llm).
AnnotationSet detections_from_log(const std::vector<nlohmann::json>& records);

struct ModeCounts {
    int tp = 0, fp = 0, fn = 0, tn = 0;

    int total() const { return tp + fp + fn + tn; }
    /// Undefined (nullopt) when the denominator is zero.
    std::optional<double> precision() const;
    std::optional<double> recall() const;
    bool operator==(const ModeCounts&) const = default;
};

struct ConfusionMatrix {
    int layers = 0;
    std::map<FailureMode, ModeCounts> modes;  // every catalog mode

    const ModeCounts& at(FailureMode m) const { return modes.at(m); }
    nlohmann::json to_json() const;
    std::string to_csv() const;
};

/// Per-layer, per-mode comparison. Both sets must cover the same layers and
/// the truth must come from experts.
ConfusionMatrix compare_detections(const AnnotationSet& detected, const AnnotationSet& truth);

// ---------------------------------------------------------------------------
// Series from a session log

struct TrajectoryPoint {
    int checkpoint = 0;  // 0 for the value read before the first change
    double value = 0.0;
    bool baseline = false;
};

using Trajectory = std::map<std::string, std::vector<TrajectoryPoint>>;

/// Commanded values per parameter from accepted `action` records.
Trajectory parameter_trajectory(const std::vector<nlohmann::json>& records);
/// Occupancy per checkpoint from `checkpoint_end` records.
OccupancySeries occupancy_series(const std::vector<nlohmann::json>& records);

std::string trajectory_csv(const Trajectory& trajectory);
std::string occupancy_csv(const OccupancySeries& series);

/// Minimal line chart (step series) as a standalone SVG document.
std::string series_svg(const std::string& title, const std::vector<std::pair<double, double>>& points,
                       const std::string& x_label, const std::string& y_label);

}  // namespace printloop::metrics
