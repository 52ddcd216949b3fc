#include "printloop/util.hpp"

#include <gtest/gtest.h>

#include <random>
#include <regex>

using namespace printloop;

TEST(Util, Sha256KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Util, Base64KnownVectorsAndRoundTrip) {
    const std::string man = "Man";
    EXPECT_EQ(base64_encode({reinterpret_cast<const std::uint8_t*>(man.data()), man.size()}), "TWFu");
    const std::string ma = "Ma";
    EXPECT_EQ(base64_encode({reinterpret_cast<const std::uint8_t*>(ma.data()), ma.size()}), "TWE=");

    std::mt19937 rng(7);
    for (int n = 0; n < 64; ++n) {
        std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
        for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
        EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
    }
}

TEST(Util, FixedNeverPrintsNegativeZero) {
    EXPECT_EQ(fixed(-0.0001, 3), "0.000");
    EXPECT_EQ(fixed(1.05, 3), "1.050");
    EXPECT_EQ(fixed(-0.05, 3), "-0.050");
}

TEST(Util, DerivedUuidIsStableAndWellFormed) {
    const auto a = derived_uuid("seed");
    EXPECT_EQ(a, derived_uuid("seed"));
    EXPECT_NE(a, derived_uuid("seed2"));
    EXPECT_TRUE(std::regex_match(a, std::regex("[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}")));
}

TEST(Util, TrimAndSplit) {
    EXPECT_EQ(trim("  a b \t"), "a b");
    const auto parts = split_ws("  G1  X1\tY2 ");
    ASSERT_EQ(parts.size(), 3u);
    EXPECT_EQ(parts[2], "Y2");
    EXPECT_EQ(to_upper("m221"), "M221");
}
