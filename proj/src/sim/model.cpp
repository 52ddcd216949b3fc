#include "printloop/kernels.hpp"
#include "printloop/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace printloop::sim {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

constexpr std::uint8_t kStrandValue = 170;

void draw_strands(RenderedLayer& out, int count, std::mt19937_64& rng) {
    const auto& fp = out.footprint;
    auto& img = out.decorated;
    std::uniform_int_distribution<int> side(0, 3);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> length(20, 60);
    for (int s = 0; s < count; ++s) {
        double x = 0, y = 0, dx = 0, dy = 0;
        const double t = unit(rng);
        switch (side(rng)) {
        case 0: x = fp.x0 + t * (fp.x1 - fp.x0); y = fp.y0 - 1; dx = unit(rng) - 0.5; dy = -1; break;
        case 1: x = fp.x0 + t * (fp.x1 - fp.x0); y = fp.y1; dx = unit(rng) - 0.5; dy = 1; break;
        case 2: x = fp.x0 - 1; y = fp.y0 + t * (fp.y1 - fp.y0); dx = -1; dy = unit(rng) - 0.5; break;
        default: x = fp.x1; y = fp.y0 + t * (fp.y1 - fp.y0); dx = 1; dy = unit(rng) - 0.5; break;
        }
        const int len = length(rng);
        for (int i = 0; i < len; ++i) {
            const int px = static_cast<int>(std::lround(x + dx * i));
            const int py = static_cast<int>(std::lround(y + dy * i));
            if (px < 0 || py < 0 || px >= img.width || py >= img.height) break;
            if (!fp.contains(px, py)) img.at(px, py) = kStrandValue;
        }
    }
}

// Marks on occupied pixels only; values stay in the occupied range.
void draw_surface_cues(RenderedLayer& out, const DefectSeverities& sev, std::mt19937_64& rng) {
    const auto& fp = out.footprint;
    auto& img = out.decorated;
    const auto& bin = out.binary;
    auto mark = [&](int x, int y, std::uint8_t v) {
        if (fp.contains(x, y) && bin.at(x, y) != 0) img.at(x, y) = v;
    };

    const double separation = std::max(sev[FailureMode::layer_separation], sev[FailureMode::bed_adhesion]);
    if (separation > 0.0) {
        const int spacing = std::max(4, static_cast<int>(std::lround(24.0 * (1.0 - separation))) + 4);
        for (int y = fp.y0; y < fp.y1; y += spacing) {
            for (int x = fp.x0; x < fp.x1; ++x) mark(x, y, kernels::kOccupiedMin);
        }
    }
    const int blobs = static_cast<int>(std::lround(sev[FailureMode::blobs_zits] * 20.0));
    std::uniform_int_distribution<int> bx(fp.x0, std::max(fp.x0, fp.x1 - 1));
    std::uniform_int_distribution<int> by(fp.y0, std::max(fp.y0, fp.y1 - 1));
    for (int b = 0; b < blobs; ++b) {
        const int cx = bx(rng), cy = by(rng);
        for (int dy = -2; dy <= 2; ++dy) {
            for (int dx = -2; dx <= 2; ++dx) {
                if (dx * dx + dy * dy <= 4) mark(cx + dx, cy + dy, 255);
            }
        }
    }
    const double warp = sev[FailureMode::warping];
    if (warp > 0.0) {
        const int reach = static_cast<int>(std::lround(warp * 0.2 * std::min(fp.x1 - fp.x0, fp.y1 - fp.y0)));
        for (int d = 0; d < reach; ++d) {
            for (int i = 0; i <= d; ++i) {
                mark(fp.x0 + i, fp.y0 + d - i, 255);
                mark(fp.x1 - 1 - i, fp.y0 + d - i, 255);
                mark(fp.x0 + i, fp.y1 - 1 - d + i, 255);
                mark(fp.x1 - 1 - i, fp.y1 - 1 - d + i, 255);
            }
        }
    }
}

}  // namespace

DefectSeverities compute_severities(const ProcessState& s, const Nominal& nominal) {
    DefectSeverities out;
    const double under = clamp01((1.0 - s.flow_factor) / 0.25);
    const double over = clamp01((s.flow_factor - 1.15) / 0.25);
    const double speed_excess = clamp01((s.speed_mm_s - nominal.speed_mm_s) / nominal.speed_mm_s);
    out.set(FailureMode::under_extrusion, under);
    out.set(FailureMode::over_extrusion, over);
    out.set(FailureMode::inconsistent_extrusion, speed_excess * 0.8 + 0.2 * under);

    const double hot = std::max(0.0, (s.nozzle_temp - nominal.nozzle_temp) / 30.0);
    const double short_retract = std::max(0.0, (2.0 - s.retraction_length) / 2.0);
    const double slow_retract = std::max(0.0, (40.0 - s.retraction_speed) / 40.0);
    out.set(FailureMode::stringing_oozing, 0.5 * hot + 0.4 * short_retract + 0.1 * slow_retract);

    const double z = clamp01(std::abs(s.z_offset_error) / 0.2);
    out.set(s.first_layer ? FailureMode::bed_adhesion : FailureMode::layer_separation, z);

    out.set(FailureMode::warping,
            s.bed_temp < nominal.bed_temp ? clamp01((nominal.bed_temp - s.bed_temp) / 30.0) : 0.0);
    out.set(FailureMode::blobs_zits, 0.6 * over + 0.4 * std::max(0.0, (0.05 - s.pressure_advance) / 0.05));
    return out;
}

DefectSeverities compute_severities(const printer::PrinterSnapshot& p, const Nominal& nominal, double z_offset_error,
                                    bool first_layer) {
    ProcessState s;
    s.flow_factor = p.flow_factor.value_or(nominal.flow_factor);
    s.speed_mm_s = p.print_speed.value_or(nominal.speed_mm_s);
    s.nozzle_temp = p.nozzle_temp ? p.nozzle_temp->actual : nominal.nozzle_temp;
    s.bed_temp = p.bed_temp ? p.bed_temp->actual : nominal.bed_temp;
    if (p.retraction) {
        s.retraction_length = p.retraction->length.value_or(s.retraction_length);
        s.retraction_speed = p.retraction->speed.value_or(s.retraction_speed);
    }
    s.pressure_advance = p.pressure_advance.value_or(0.05);
    s.z_offset_error = z_offset_error;
    s.first_layer = first_layer;
    return compute_severities(s, nominal);
}

double gap_fraction(const DefectSeverities& sev) {
    return std::clamp(0.6 * sev[FailureMode::under_extrusion] + 0.1 * sev[FailureMode::inconsistent_extrusion], 0.0,
                      1.0);
}

RenderedLayer render_layer_image(const DefectSeverities& severities, std::uint64_t seed, const RenderSpec& spec) {
    RenderedLayer out;
    out.footprint = {std::clamp(spec.footprint.x0, 0, spec.width), std::clamp(spec.footprint.y0, 0, spec.height),
                     std::clamp(spec.footprint.x1, 0, spec.width), std::clamp(spec.footprint.y1, 0, spec.height)};
    const auto& fp = out.footprint;
    out.binary = GrayImage(spec.width, spec.height, 0);
    for (int y = fp.y0; y < fp.y1; ++y) {
        for (int x = fp.x0; x < fp.x1; ++x) out.binary.at(x, y) = 255;
    }

    out.gap_fraction = gap_fraction(severities);
    out.ground_truth_occupancy = 1.0 - out.gap_fraction;

    const long long area = fp.area();
    const long long target = std::llround(out.gap_fraction * static_cast<double>(area));
    std::mt19937_64 rng(seed);
    if (target > 0) {
        const int fw = fp.x1 - fp.x0;
        std::uniform_int_distribution<int> row(fp.y0, fp.y1 - 1);
        std::uniform_int_distribution<int> col(fp.x0, fp.x1 - 1);
        std::uniform_int_distribution<int> streak(std::max(4, fw / 40), std::max(8, fw / 8));
        long long carved = 0;
        long long attempts = 0;
        const long long budget = 64 * target + 4096;
        while (carved < target && attempts++ < budget) {
            const int y = row(rng);
            const int x0 = col(rng);
            const int len = streak(rng);
            for (int x = x0; x < std::min(fp.x1, x0 + len) && carved < target; ++x) {
                if (out.binary.at(x, y) != 0) {
                    out.binary.at(x, y) = 0;
                    ++carved;
                }
            }
        }
        // Dense carving fallback keeps the carved count exact.
        for (int y = fp.y0; y < fp.y1 && carved < target; ++y) {
            for (int x = fp.x0; x < fp.x1 && carved < target; ++x) {
                if (out.binary.at(x, y) != 0) {
                    out.binary.at(x, y) = 0;
                    ++carved;
                }
            }
        }
    }

    out.decorated = kernels::parallel::shade(out.binary, seed);
    // Background outside the footprint is plain (no texture) so strands stand out.
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            if (!fp.contains(x, y)) out.decorated.at(x, y) = 20;
        }
    }
    draw_strands(out, static_cast<int>(std::lround(severities[FailureMode::stringing_oozing] * 12.0)), rng);
    draw_surface_cues(out, severities, rng);
    return out;
}

}  // namespace printloop::sim
