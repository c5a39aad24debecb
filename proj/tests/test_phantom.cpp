#include <cmath>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include <bdrseg/imgio.hpp>
#include <bdrseg/metrics.hpp>
#include <bdrseg/phantom.hpp>

using namespace bdrseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("bdrseg_phantom_" + name);
    fs::remove_all(dir);
    return dir;
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return io::detail::read_file(p); }

double area_fraction(const BinaryMask& m)
{
    return static_cast<double>(count_foreground(m)) / static_cast<double>(m.size());
}

} // namespace

TEST(GenSample, SameSeedBitIdentical)
{
    auto p = sample_params(PhantomRanges{}, 42);
    auto a = gen_sample(p), b = gen_sample(p);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.mask, b.mask);
    p.seed = 43;
    EXPECT_NE(gen_sample(p).image, a.image);
}

TEST(GenSample, NoiseFreeIsPiecewiseFlat)
{
    PhantomParams p;
    p.speckle = 0.0;
    p.blur_sigma = 0.0;
    p.gain_y = p.gain_x = 0.0;
    p.notch_depth = 0.0;
    auto s = gen_sample(p);
    // background, sinus and cortex are each a single level
    std::set<float> inside, outside;
    for (std::size_t i = 0; i < s.image.size(); ++i)
        (s.mask.values()[i] ? inside : outside).insert(s.image.values()[i]);
    EXPECT_EQ(outside.size(), 1u);
    EXPECT_EQ(inside.size(), 2u);
}

TEST(GenSample, AreaBoundsOverManySeeds)
{
    PhantomRanges r;
    for (std::uint64_t s = 0; s < 500; ++s) {
        auto sample = gen_sample(sample_params(r, s));
        const double a = area_fraction(sample.mask);
        EXPECT_GE(a, kMinAreaFraction);
        EXPECT_LE(a, kMaxAreaFraction);
        for (auto v : sample.image.values())
            ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
        // every mask supports a distance map
        EXPECT_NO_THROW(mask_to_distance_map(sample.mask));
    }
}

TEST(GenSample, InvalidParams)
{
    PhantomParams p;
    p.semi_major = 40.0;
    p.semi_minor = 30.0;
    EXPECT_THROW(gen_sample(p), Error);
    p = PhantomParams{};
    p.notch_depth = 0.7;
    EXPECT_THROW(gen_sample(p), Error);
    p = PhantomParams{};
    p.semi_minor = 5.0;
    EXPECT_THROW(gen_sample(p), Error);
}

TEST(ElasticAugment, ZeroFieldIsIdentity)
{
    auto s = gen_sample(sample_params(PhantomRanges{}, 3));
    auto out = elastic_augment(s.image, s.mask, constant_field(64, 64, 0.0f, 0.0f));
    EXPECT_EQ(out.image, s.image);
    EXPECT_EQ(out.mask, s.mask);
}

TEST(ElasticAugment, IntegerShift)
{
    auto s = gen_sample(sample_params(PhantomRanges{}, 4));
    auto out = elastic_augment(s.image, s.mask, constant_field(64, 64, 2.0f, 0.0f));
    for (int y = 0; y + 2 < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            EXPECT_EQ(out.mask(y, x), s.mask(y + 2, x));
            EXPECT_EQ(out.image(y, x), s.image(y + 2, x));
        }
}

TEST(ElasticAugment, RandomFieldsKeepMasksPlausible)
{
    PhantomRanges r;
    for (std::uint64_t t = 0; t < 100; ++t) {
        auto s = gen_sample(sample_params(r, 1000 + t));
        auto f = random_field(64, 64, kDefaultDisplacementCap, 77 + t);
        EXPECT_LE(f.max_magnitude(), kDefaultDisplacementCap + 1e-5);
        auto out = elastic_augment(s.image, s.mask, f);
        const double d = dice(out.mask, s.mask);
        EXPECT_GE(d, 0.6);
        EXPECT_LE(d, 1.0);
        EXPECT_GE(area_fraction(out.mask), kMinAreaFraction);
        EXPECT_LE(area_fraction(out.mask), kMaxAreaFraction);
        for (auto v : out.image.values())
            ASSERT_TRUE(std::isfinite(v) && v >= 0.0f && v <= 1.0f);
    }
}

TEST(ElasticAugment, FieldContract)
{
    EXPECT_THROW(random_field(32, 32, 2.0, 1, 3.0), Error);
    EXPECT_THROW(random_field(32, 32, 9.0, 1), Error);
    auto f = random_field(32, 32, 3.0, 5);
    EXPECT_NEAR(f.max_magnitude(), 3.0, 1e-5);
    // smooth: neighboring displacements differ far less than the amplitude
    double step = 0.0;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x + 1 < 32; ++x)
            step = std::max(step, std::abs(double(f.dx(y, x + 1) - f.dx(y, x))));
    EXPECT_LT(step, 1.0);
}

TEST(ElasticAugment, ShapeMismatch)
{
    Image img(8, 8);
    BinaryMask m(8, 9);
    try {
        elastic_augment(img, m, constant_field(8, 8, 0, 0));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
    }
}

TEST(MakeDataset, SplitSizes)
{
    auto dir = scratch("split");
    auto m = make_dataset(dir, 105, 80, 1, PhantomRanges{});
    EXPECT_EQ(m.split("train").size(), 105u);
    EXPECT_EQ(m.split("test").size(), 80u);
    auto back = read_manifest(dir);
    EXPECT_EQ(back.records, m.records);
    fs::remove_all(dir);
}

TEST(MakeDataset, TwoSamplesDisjoint)
{
    auto dir = scratch("pair");
    auto m = make_dataset(dir, 1, 1, 9, PhantomRanges{});
    ASSERT_EQ(m.records.size(), 2u);
    EXPECT_NE(m.records[0].id, m.records[1].id);
    EXPECT_NE(m.records[0].split, m.records[1].split);
    EXPECT_NE(bytes_of(dir / m.records[0].image_path), bytes_of(dir / m.records[1].image_path));
    // stored map equals the one derived from the stored mask
    auto mask = io::read_pgm_mask(dir / m.records[0].mask_path);
    EXPECT_EQ(io::read_fmap(dir / m.records[0].dmap_path), mask_to_distance_map(mask));
    fs::remove_all(dir);
}

TEST(MakeDataset, DeterministicAndThreadInvariant)
{
    auto a = scratch("a"), b = scratch("b");
    make_dataset(a, 6, 3, 21, PhantomRanges{}, 1);
    make_dataset(b, 6, 3, 21, PhantomRanges{}, 3);
    for (auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file())
            continue;
        auto rel = fs::relative(entry.path(), a);
        EXPECT_EQ(bytes_of(entry.path()), bytes_of(b / rel)) << rel;
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(MakeDataset, Errors)
{
    EXPECT_THROW(make_dataset(scratch("none"), 0, 0, 1, PhantomRanges{}), Error);
    try {
        make_dataset("/proc/bdrseg_cannot_write", 1, 0, 1, PhantomRanges{});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::IoFailure);
    }
}
