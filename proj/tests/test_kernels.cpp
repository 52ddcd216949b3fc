#include "printloop/image.hpp"
#include "printloop/kernels.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace printloop;
namespace k = printloop::kernels;

namespace {

GrayImage random_image(int w, int h, std::uint32_t seed) {
    GrayImage img(w, h);
    std::mt19937 rng(seed);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng());
    return img;
}

long long brute_count(const GrayImage& img, std::uint8_t t, PixelRect r) {
    long long n = 0;
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) n += img.at(x, y) >= t ? 1 : 0;
    }
    return n;
}

}  // namespace

TEST(Kernels, CountsMatchBruteForce) {
    for (std::uint32_t seed = 1; seed <= 5; ++seed) {
        const auto img = random_image(97 + static_cast<int>(seed), 61, seed);
        const PixelRect full{0, 0, img.width, img.height};
        const PixelRect part{7, 3, 50, 40};
        for (int t : {0, 1, 128, 255}) {
            const auto level = static_cast<std::uint8_t>(t);
            EXPECT_EQ(k::serial::count_at_least(img, level), brute_count(img, level, full));
            EXPECT_EQ(k::parallel::count_at_least(img, level), brute_count(img, level, full));
            EXPECT_EQ(k::parallel::count_at_least(img, level, part), brute_count(img, level, part));
        }
    }
}

TEST(Kernels, ParallelEqualsSerial) {
    const auto img = random_image(256, 192, 42);
    auto mask = random_image(256, 192, 43);
    for (auto& p : mask.pixels) p = p > 100 ? 255 : 0;
    EXPECT_EQ(k::parallel::count_at_least_masked(img, 128, mask), k::serial::count_at_least_masked(img, 128, mask));
    EXPECT_EQ(k::parallel::count_nonzero(mask), k::serial::count_nonzero(mask));
    EXPECT_EQ(k::parallel::binarize(img, 128), k::serial::binarize(img, 128));
    const auto bin = k::serial::binarize(img, 128);
    EXPECT_EQ(k::parallel::shade(bin, 9), k::serial::shade(bin, 9));
    EXPECT_EQ(k::parallel::box_downsample(img, 4), k::serial::box_downsample(img, 4));
}

TEST(Kernels, ShadeKeepsOccupancyClasses) {
    const auto bin = k::serial::binarize(random_image(64, 64, 5), 128);
    const auto shaded = k::parallel::shade(bin, 1234);
    for (std::size_t i = 0; i < bin.size(); ++i) {
        if (bin.pixels[i]) {
            EXPECT_GE(shaded.pixels[i], k::kOccupiedMin);
        } else {
            EXPECT_LE(shaded.pixels[i], k::kEmptyMax);
        }
    }
}

TEST(Kernels, BoxDownsampleAveragesBlocks) {
    GrayImage img(4, 2);
    img.pixels = {0, 255, 10, 20, 255, 0, 30, 40};
    const auto d = k::serial::box_downsample(img, 2);
    ASSERT_EQ(d.width, 2);
    ASSERT_EQ(d.height, 1);
    EXPECT_NEAR(d.pixels[0], 127.5, 0.51);
    EXPECT_EQ(d.pixels[1], 25);
}

TEST(Images, PngRoundTripAndFit) {
    const auto img = random_image(300, 120, 3);
    EXPECT_EQ(decode_png(encode_png(img)), img);
    const auto fitted = fit_long_edge(img, 100);
    EXPECT_EQ(fitted.width, 100);
    EXPECT_EQ(fitted.height, 40);
    EXPECT_EQ(fit_long_edge(img, 1024), img);
    const std::vector<std::uint8_t> junk = {1, 2, 3};
    EXPECT_THROW(decode_png(junk), ImageError);
}
