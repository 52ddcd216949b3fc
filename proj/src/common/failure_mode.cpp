#include "printloop/failure_mode.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

namespace printloop {

namespace {

constexpr std::array<std::string_view, kFailureModeCount> kNames{
    "warping",          "layer_separation", "bed_adhesion", "under_extrusion", "over_extrusion",
    "inconsistent_extrusion", "stringing_oozing", "blobs_zits", "print_cracks", "ghosting",
    "ringing",          "elephant_foot",
};

}  // namespace

std::string_view to_string(FailureMode mode) { return kNames[static_cast<std::size_t>(mode)]; }

std::optional<FailureMode> failure_mode_from_string(std::string_view name) {
    for (std::size_t i = 0; i < kNames.size(); ++i) {
        if (kNames[i] == name) return kAllFailureModes[i];
    }
    return std::nullopt;
}

std::optional<FailureMode> failure_mode_from_alias(std::string_view text) {
    std::string key;
    for (const char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!key.empty() && key.back() != '_') {
            key += '_';
        }
    }
    while (!key.empty() && key.back() == '_') key.pop_back();
    if (auto m = failure_mode_from_string(key)) return m;
    static const std::pair<std::string_view, FailureMode> aliases[] = {
        {"stringing", FailureMode::stringing_oozing},
        {"oozing", FailureMode::stringing_oozing},
        {"stringing_and_oozing", FailureMode::stringing_oozing},
        {"blobs", FailureMode::blobs_zits},
        {"zits", FailureMode::blobs_zits},
        {"blobs_and_zits", FailureMode::blobs_zits},
        {"extrusion_inconsistency", FailureMode::inconsistent_extrusion},
        {"inconsistent_extrusions", FailureMode::inconsistent_extrusion},
        {"underextrusion", FailureMode::under_extrusion},
        {"overextrusion", FailureMode::over_extrusion},
        {"poor_bed_adhesion", FailureMode::bed_adhesion},
        {"adhesion", FailureMode::bed_adhesion},
        {"delamination", FailureMode::layer_separation},
        {"cracks", FailureMode::print_cracks},
        {"cracking", FailureMode::print_cracks},
        {"elephants_foot", FailureMode::elephant_foot},
    };
    for (const auto& [alias, mode] : aliases) {
        if (alias == key) return mode;
    }
    return std::nullopt;
}

void DefectSeverities::set(FailureMode m, double v) {
    values_[static_cast<std::size_t>(m)] = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
}

bool DefectSeverities::all_zero() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

double DefectSeverities::max() const { return *std::max_element(values_.begin(), values_.end()); }

}  // namespace printloop
