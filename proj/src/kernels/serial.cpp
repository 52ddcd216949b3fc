#include "common.hpp"

#include <algorithm>

namespace printloop::kernels {

std::uint32_t pixel_hash(int x, int y, std::uint64_t seed) {
    // splitmix64 finalizer over the packed coordinates
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)) |
                                                      (static_cast<std::uint64_t>(static_cast<std::uint32_t>(y)) << 32));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return static_cast<std::uint32_t>(z ^ (z >> 31));
}

namespace serial {

long long count_at_least(const GrayImage& image, std::uint8_t threshold, const std::optional<PixelRect>& region) {
    const auto r = detail::clip(image, region);
    long long n = 0;
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            n += image.at(x, y) >= threshold ? 1 : 0;
        }
    }
    return n;
}

long long count_at_least_masked(const GrayImage& image, std::uint8_t threshold, const GrayImage& mask) {
    detail::check_mask(image, mask);
    long long n = 0;
    for (std::size_t i = 0; i < image.size(); ++i) {
        n += (mask.pixels[i] != 0 && image.pixels[i] >= threshold) ? 1 : 0;
    }
    return n;
}

long long count_nonzero(const GrayImage& mask) {
    return static_cast<long long>(std::count_if(mask.pixels.begin(), mask.pixels.end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

GrayImage binarize(const GrayImage& image, std::uint8_t threshold) {
    GrayImage out(image.width, image.height);
    for (std::size_t i = 0; i < image.size(); ++i) {
        out.pixels[i] = image.pixels[i] >= threshold ? 255 : 0;
    }
    return out;
}

GrayImage shade(const GrayImage& binary, std::uint64_t seed) {
    GrayImage out(binary.width, binary.height);
    for (int y = 0; y < binary.height; ++y) {
        for (int x = 0; x < binary.width; ++x) {
            out.at(x, y) = detail::shade_pixel(binary.at(x, y), x, y, seed);
        }
    }
    return out;
}

GrayImage box_downsample(const GrayImage& image, int factor) {
    if (factor <= 1) return image;
    GrayImage out(image.width / factor, image.height / factor);
    const int area = factor * factor;
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            int sum = 0;
            for (int dy = 0; dy < factor; ++dy) {
                for (int dx = 0; dx < factor; ++dx) sum += image.at(x * factor + dx, y * factor + dy);
            }
            out.at(x, y) = static_cast<std::uint8_t>((sum + area / 2) / area);
        }
    }
    return out;
}

}  // namespace serial
}  // namespace printloop::kernels
