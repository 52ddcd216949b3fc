#include "common.hpp"

#include <omp.h>

namespace printloop::kernels::parallel {

int max_threads() { return omp_get_max_threads(); }

long long count_at_least(const GrayImage& image, std::uint8_t threshold, const std::optional<PixelRect>& region) {
    const auto r = detail::clip(image, region);
    long long n = 0;
#pragma omp parallel for schedule(static) reduction(+ : n)
    for (int y = r.y0; y < r.y1; ++y) {
        const auto* row = image.pixels.data() + static_cast<std::size_t>(y) * image.width;
        for (int x = r.x0; x < r.x1; ++x) {
            n += row[x] >= threshold ? 1 : 0;
        }
    }
    return n;
}

long long count_at_least_masked(const GrayImage& image, std::uint8_t threshold, const GrayImage& mask) {
    detail::check_mask(image, mask);
    const auto total = static_cast<long long>(image.size());
    const auto* px = image.pixels.data();
    const auto* mk = mask.pixels.data();
    long long n = 0;
#pragma omp parallel for schedule(static) reduction(+ : n)
    for (long long i = 0; i < total; ++i) {
        n += (mk[i] != 0 && px[i] >= threshold) ? 1 : 0;
    }
    return n;
}

long long count_nonzero(const GrayImage& mask) {
    const auto total = static_cast<long long>(mask.size());
    const auto* mk = mask.pixels.data();
    long long n = 0;
#pragma omp parallel for schedule(static) reduction(+ : n)
    for (long long i = 0; i < total; ++i) {
        n += mk[i] != 0 ? 1 : 0;
    }
    return n;
}

GrayImage binarize(const GrayImage& image, std::uint8_t threshold) {
    GrayImage out(image.width, image.height);
    const auto total = static_cast<long long>(image.size());
    const auto* in = image.pixels.data();
    auto* dst = out.pixels.data();
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < total; ++i) {
        dst[i] = in[i] >= threshold ? 255 : 0;
    }
    return out;
}

GrayImage shade(const GrayImage& binary, std::uint64_t seed) {
    GrayImage out(binary.width, binary.height);
    const int w = binary.width;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < binary.height; ++y) {
        for (int x = 0; x < w; ++x) {
            out.pixels[static_cast<std::size_t>(y) * w + x] =
                detail::shade_pixel(binary.pixels[static_cast<std::size_t>(y) * w + x], x, y, seed);
        }
    }
    return out;
}

GrayImage box_downsample(const GrayImage& image, int factor) {
    if (factor <= 1) return image;
    GrayImage out(image.width / factor, image.height / factor);
    const int area = factor * factor;
    const int ow = out.width;
#pragma omp parallel for schedule(static)
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < ow; ++x) {
            int sum = 0;
            for (int dy = 0; dy < factor; ++dy) {
                const auto* row = image.pixels.data() + static_cast<std::size_t>(y * factor + dy) * image.width;
                for (int dx = 0; dx < factor; ++dx) sum += row[x * factor + dx];
            }
            out.pixels[static_cast<std::size_t>(y) * ow + x] = static_cast<std::uint8_t>((sum + area / 2) / area);
        }
    }
    return out;
}

}  // namespace printloop::kernels::parallel
