#pragma once

#include "printloop/kernels.hpp"

namespace printloop::kernels::detail {

inline std::uint8_t shade_pixel(std::uint8_t occupied, int x, int y, std::uint64_t seed) {
    const auto h = pixel_hash(x, y, seed);
    if (occupied != 0) {
        return static_cast<std::uint8_t>(kOccupiedMin + h % (256u - kOccupiedMin));
    }
    return static_cast<std::uint8_t>(h % (kEmptyMax + 1u));
}

inline void check_mask(const GrayImage& image, const GrayImage& mask) {
    if (image.width != mask.width || image.height != mask.height) {
        throw ImageError("mask size does not match image");
    }
}

inline PixelRect clip(const GrayImage& image, const std::optional<PixelRect>& region) {
    if (!region) return {0, 0, image.width, image.height};
    return {std::max(0, region->x0), std::max(0, region->y0), std::min(image.width, region->x1),
            std::min(image.height, region->y1)};
}

}  // namespace printloop::kernels::detail
