#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace printloop {

/// Visible defect categories. Layer shift is intentionally not representable:
/// it cannot be corrected without discarding the part.
enum class FailureMode {
    warping,
    layer_separation,
    bed_adhesion,
    under_extrusion,
    over_extrusion,
    inconsistent_extrusion,
    stringing_oozing,
    blobs_zits,
    print_cracks,
    ghosting,
    ringing,
    elephant_foot,
};

inline constexpr std::size_t kFailureModeCount = 12;

inline constexpr std::array<FailureMode, kFailureModeCount> kAllFailureModes{
    FailureMode::warping,          FailureMode::layer_separation, FailureMode::bed_adhesion,
    FailureMode::under_extrusion,  FailureMode::over_extrusion,   FailureMode::inconsistent_extrusion,
    FailureMode::stringing_oozing, FailureMode::blobs_zits,       FailureMode::print_cracks,
    FailureMode::ghosting,         FailureMode::ringing,          FailureMode::elephant_foot,
};

std::string_view to_string(FailureMode mode);
std::optional<FailureMode> failure_mode_from_string(std::string_view name);
/// Lenient lookup for model output: case, spaces, hyphens and common short
/// names ("stringing", "blobs", "extrusion inconsistency") are accepted.
std::optional<FailureMode> failure_mode_from_alias(std::string_view text);

/// Per-mode severity in [0, 1].
class DefectSeverities {
public:
    double operator[](FailureMode m) const { return values_[static_cast<std::size_t>(m)]; }
    /// Stores the value clamped to [0, 1].
    void set(FailureMode m, double v);
    bool all_zero() const;
    double max() const;

    bool operator==(const DefectSeverities&) const = default;

private:
    std::array<double, kFailureModeCount> values_{};
};

}  // namespace printloop
