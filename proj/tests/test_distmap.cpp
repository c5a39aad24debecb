#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include <bdrseg/distmap.hpp>

#include "oracles.hpp"

using namespace bdrseg;

namespace {

BinaryMask square(int frame, int y0, int x0, int side)
{
    BinaryMask m(frame, frame, 0);
    for (int y = y0; y < y0 + side; ++y)
        for (int x = x0; x < x0 + side; ++x)
            m(y, x) = 1;
    return m;
}

} // namespace

TEST(BoundaryPixels, FullFrameKeepsOuterRing)
{
    BinaryMask m(3, 3, 1);
    auto b = boundary_pixels(m);
    EXPECT_EQ(b.size(), 8u);
    EXPECT_EQ(std::count(b.begin(), b.end(), Pixel{1, 1}), 0);
}

TEST(BoundaryPixels, SinglePixel)
{
    BinaryMask m(4, 4, 0);
    m(2, 1) = 1;
    EXPECT_EQ(boundary_pixels(m), (std::vector<Pixel>{{2, 1}}));
}

TEST(BoundaryPixels, CenteredSquareRing)
{
    auto b = boundary_pixels(square(5, 1, 1, 3));
    std::vector<Pixel> ring{{1, 1}, {1, 2}, {1, 3}, {2, 1}, {2, 3}, {3, 1}, {3, 2}, {3, 3}};
    EXPECT_EQ(b, ring);
}

TEST(BoundaryPixels, MatchesOracleOnRandomMasks)
{
    std::mt19937_64 rng(11);
    std::bernoulli_distribution coin(0.6);
    for (int t = 0; t < 50; ++t) {
        BinaryMask m(12, 9, 0);
        for (auto& v : m.values())
            v = coin(rng);
        if (count_foreground(m) == 0)
            continue;
        EXPECT_EQ(boundary_pixels(m), oracle::boundary(m));
    }
}

TEST(BoundaryPixels, EmptyMaskRejected)
{
    BinaryMask m(4, 4, 0);
    try {
        boundary_pixels(m);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptyMask);
    }
}

TEST(EuclideanDt, ThreeFourFive)
{
    std::vector<Pixel> sites{{0, 0}};
    auto d = euclidean_dt(sites, 6, 6);
    EXPECT_DOUBLE_EQ(d(3, 4), 5.0);
    EXPECT_EQ(d(0, 0), 0.0);
}

TEST(EuclideanDt, ZeroOnSites)
{
    std::vector<Pixel> sites{{1, 2}, {4, 4}, {0, 5}};
    auto d = euclidean_dt(sites, 6, 7);
    for (auto p : sites)
        EXPECT_EQ(d[p], 0.0);
}

TEST(EuclideanDt, MatchesBruteForceOnRandomSiteSets)
{
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> coord(0, 31);
    std::uniform_int_distribution<int> count(1, 80);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        std::vector<Pixel> sites(static_cast<std::size_t>(count(rng)));
        for (auto& s : sites)
            s = {coord(rng), coord(rng)};
        auto fast = euclidean_dt(sites, 32, 32);
        auto slow = oracle::edt(sites, 32, 32);
        for (std::size_t i = 0; i < slow.size(); ++i)
            worst = std::max(worst, std::abs(fast.values()[i] - slow[i]));
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(EuclideanDt, NonSquareFrame)
{
    std::vector<Pixel> sites{{0, 10}, {6, 0}};
    auto fast = euclidean_dt(sites, 7, 13);
    auto slow = oracle::edt(sites, 7, 13);
    for (std::size_t i = 0; i < slow.size(); ++i)
        EXPECT_NEAR(fast.values()[i], slow[i], 1e-12);
}

TEST(EuclideanDt, Errors)
{
    std::vector<Pixel> none;
    try {
        euclidean_dt(none, 4, 4);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EmptySiteSet);
    }
    std::vector<Pixel> outside{{4, 0}};
    EXPECT_THROW(euclidean_dt(outside, 4, 4), Error);
}

TEST(DistanceMap, BoundaryIsExactlyOne)
{
    auto m = square(7, 2, 2, 3);
    auto d = mask_to_distance_map(m);
    for (auto p : boundary_pixels(m))
        EXPECT_EQ(d[p], 1.0f);
}

TEST(DistanceMap, UnitAndDiagonalNeighbors)
{
    auto d = mask_to_distance_map(square(7, 2, 2, 3));
    EXPECT_NEAR(d(1, 3), 0.367879, 1e-6);
    EXPECT_NEAR(d(3, 3), 0.367879, 1e-6);
    EXPECT_NEAR(d(1, 1), 0.243117, 1e-6);
}

TEST(DistanceMap, RangeAndMonotonicity)
{
    BinaryMask m(20, 24, 0);
    for (int y = 3; y < 15; ++y)
        for (int x = 5; x < 9 + y; ++x)
            m(y, x) = 1;
    auto d = mask_to_distance_map(m);
    auto ring = boundary_pixels(m);
    auto raw = oracle::edt(ring, 20, 24);
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_GT(d.values()[i], 0.0f);
        EXPECT_LE(d.values()[i], 1.0f);
        EXPECT_EQ(d.values()[i] == 1.0f, raw[i] == 0.0);
    }
    for (std::size_t i = 0; i < d.size(); i += 7)
        for (std::size_t j = 0; j < d.size(); j += 5)
            if (raw[i] < raw[j]) {
                EXPECT_GT(d.values()[i], d.values()[j]);
            }
}

TEST(DistanceMap, TranslationEquivariant)
{
    auto a = mask_to_distance_map(square(24, 6, 6, 7));
    auto b = mask_to_distance_map(square(24, 8, 9, 7));
    // away from the frame the field depends only on the offset to the square
    for (int y = 4; y < 16; ++y)
        for (int x = 4; x < 15; ++x)
            EXPECT_EQ(a(y, x), b(y + 2, x + 3));
}

TEST(DistanceMap, EmptyMaskRejected)
{
    EXPECT_THROW(mask_to_distance_map(BinaryMask(5, 5, 0)), Error);
}
