#pragma once

// Pixel kernels used by the renderer and the occupancy metric. Every kernel
// exists twice: `serial` is the reference, `parallel` is the OpenMP version
// used in production paths. Both must produce identical results.

#include "printloop/image.hpp"

#include <cstdint>
#include <optional>

namespace printloop::kernels {

/// Deterministic per-pixel hash; the texture of a pixel depends only on
/// (x, y, seed), so rows can be rendered in any order.
std::uint32_t pixel_hash(int x, int y, std::uint64_t seed);

namespace serial {

/// Pixels with value >= threshold inside `region` (whole image when absent).
long long count_at_least(const GrayImage& image, std::uint8_t threshold,
                         const std::optional<PixelRect>& region = std::nullopt);
/// Pixels with value >= threshold where mask is non-zero.
long long count_at_least_masked(const GrayImage& image, std::uint8_t threshold, const GrayImage& mask);
long long count_nonzero(const GrayImage& mask);
GrayImage binarize(const GrayImage& image, std::uint8_t threshold);
/// Occupied pixels get a bright textured value, empty pixels a dark one.
GrayImage shade(const GrayImage& binary, std::uint64_t seed);
GrayImage box_downsample(const GrayImage& image, int factor);

}  // namespace serial

namespace parallel {

long long count_at_least(const GrayImage& image, std::uint8_t threshold,
                         const std::optional<PixelRect>& region = std::nullopt);
long long count_at_least_masked(const GrayImage& image, std::uint8_t threshold, const GrayImage& mask);
long long count_nonzero(const GrayImage& mask);
GrayImage binarize(const GrayImage& image, std::uint8_t threshold);
GrayImage shade(const GrayImage& binary, std::uint64_t seed);
GrayImage box_downsample(const GrayImage& image, int factor);

int max_threads();

}  // namespace parallel

/// Shading ranges; occupied values stay above 0.5 of full scale and empty ones below it.
inline constexpr std::uint8_t kOccupiedMin = 150;
inline constexpr std::uint8_t kEmptyMax = 90;

}  // namespace printloop::kernels
