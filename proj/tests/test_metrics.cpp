#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <utility>

#include <gtest/gtest.h>

#include <bdrseg/metrics.hpp>

#include "oracles.hpp"

using namespace bdrseg;
namespace fs = std::filesystem;

namespace {

ErrorKind kind_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::Usage;
}

BinaryMask box(int h, int w, int y0, int x0, int bh, int bw)
{
    BinaryMask m(h, w, 0);
    for (int y = y0; y < y0 + bh; ++y)
        for (int x = x0; x < x0 + bw; ++x)
            m(y, x) = 1;
    return m;
}

BinaryMask random_blob(std::mt19937_64& rng, int frame)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double cy = 8 + 16 * u(rng), cx = 8 + 16 * u(rng), ry = 3 + 5 * u(rng), rx = 3 + 5 * u(rng);
    BinaryMask m(frame, frame, 0);
    for (int y = 0; y < frame; ++y)
        for (int x = 0; x < frame; ++x)
            m(y, x) = std::pow((y - cy) / ry, 2) + std::pow((x - cx) / rx, 2) <= 1.0 || u(rng) < 0.01;
    return m;
}

/// Random paired samples with a random location shift.
std::pair<std::vector<double>, std::vector<double>> random_pair(std::mt19937_64& rng, int n)
{
    std::normal_distribution<double> g(0.0, 1.0);
    const double shift = std::uniform_real_distribution<double>(-0.8, 0.8)(rng);
    std::vector<double> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        x[i] = g(rng);
        y[i] = x[i] + shift + g(rng);
    }
    return {x, y};
}

fs::path scratch(const std::string& name)
{
    auto dir = fs::temp_directory_path() / ("bdrseg_metrics_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST(Dice, Examples)
{
    auto a = box(4, 4, 1, 0, 2, 2);
    EXPECT_EQ(dice(a, a), 1.0);
    EXPECT_EQ(dice(a, box(4, 4, 1, 2, 2, 2)), 0.0);
    EXPECT_EQ(dice(a, box(4, 4, 1, 1, 2, 2)), 0.5);
}

TEST(Dice, EmptyConventions)
{
    BinaryMask none(5, 5, 0);
    EXPECT_EQ(dice(none, none), 1.0);
    EXPECT_EQ(dice(none, box(5, 5, 0, 0, 1, 1)), 0.0);
    EXPECT_EQ(kind_of([&] { dice(none, BinaryMask(5, 6, 0)); }), ErrorKind::ShapeMismatch);
}

TEST(Dice, SymmetricAndMaximalOnlyWhenEqual)
{
    std::mt19937_64 rng(3);
    for (int t = 0; t < 50; ++t) {
        auto a = random_blob(rng, 32), b = random_blob(rng, 32);
        EXPECT_EQ(dice(a, b), dice(b, a));
        EXPECT_LE(dice(a, b), 1.0);
        if (a != b) {
            EXPECT_LT(dice(a, b), 1.0);
        }
    }
}

TEST(Accuracy, Examples)
{
    auto a = box(10, 10, 2, 2, 5, 5);
    EXPECT_EQ(pixel_accuracy(a, a), 1.0);
    BinaryMask inv = a;
    for (auto& v : inv.values())
        v = !v;
    EXPECT_EQ(pixel_accuracy(a, inv), 0.0);
    BinaryMask one = a;
    one(0, 0) = 1;
    EXPECT_DOUBLE_EQ(pixel_accuracy(a, one), 0.99);
}

TEST(MeanDistance, IdenticalIsZero)
{
    auto a = box(16, 16, 3, 4, 6, 7);
    EXPECT_EQ(mean_boundary_distance(a, a), 0.0);
}

TEST(MeanDistance, ConcentricSquares)
{
    auto outer = box(20, 20, 4, 4, 12, 12), inner = box(20, 20, 6, 6, 8, 8);
    const double got = mean_boundary_distance(outer, inner);
    EXPECT_NEAR(got, oracle::mean_boundary_distance(outer, inner), 1e-12);
    // inner ring sits 2 px from the outer ring on every side
    auto ring = boundary_pixels(inner);
    auto d = euclidean_dt(boundary_pixels(outer), 20, 20);
    for (auto p : ring)
        EXPECT_EQ(d[p], 2.0);
}

TEST(MeanDistance, MatchesBruteForceOnRandomPairs)
{
    std::mt19937_64 rng(8);
    for (int t = 0; t < 100; ++t) {
        auto a = random_blob(rng, 32), b = random_blob(rng, 32);
        const double got = mean_boundary_distance(a, b);
        EXPECT_NEAR(got, oracle::mean_boundary_distance(a, b), 1e-9);
        EXPECT_DOUBLE_EQ(got, mean_boundary_distance(b, a));
    }
}

TEST(MeanDistance, EmptyMaskRejected)
{
    EXPECT_EQ(kind_of([] { mean_boundary_distance(BinaryMask(4, 4, 0), box(4, 4, 1, 1, 2, 2)); }),
              ErrorKind::EmptyMask);
}

TEST(Metrics, TranslationInvariant)
{
    std::mt19937_64 rng(12);
    for (int t = 0; t < 20; ++t) {
        auto a = random_blob(rng, 32), b = random_blob(rng, 32);
        BinaryMask pa(40, 40, 0), pb(40, 40, 0), sa(40, 40, 0), sb(40, 40, 0);
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                pa(y + 2, x + 2) = a(y, x);
                pb(y + 2, x + 2) = b(y, x);
                sa(y + 5, x + 7) = a(y, x);
                sb(y + 5, x + 7) = b(y, x);
            }
        EXPECT_EQ(dice(pa, pb), dice(sa, sb));
        EXPECT_EQ(pixel_accuracy(pa, pb), pixel_accuracy(sa, sb));
        EXPECT_NEAR(mean_boundary_distance(pa, pb), mean_boundary_distance(sa, sb), 1e-12);
    }
}

TEST(Wilcoxon, EqualSamplesTooFew)
{
    std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8};
    EXPECT_EQ(kind_of([&] { wilcoxon_signed_rank(x, x); }), ErrorKind::TooFewSamples);
    std::vector<double> y{1, 2, 3, 4, 5, 6, 7, 9, 10};
    EXPECT_EQ(kind_of([&] { wilcoxon_signed_rank(x, y); }), ErrorKind::ShapeMismatch);
}

TEST(Wilcoxon, AllPositiveEight)
{
    std::vector<double> x{1.5, 2.7, 3.1, 4.9, 5.2, 6.4, 7.8, 8.3}, y(8);
    for (int i = 0; i < 8; ++i)
        y[i] = x[i] - 0.1 * (i + 1);
    auto r = wilcoxon_signed_rank(x, y);
    EXPECT_TRUE(r.exact);
    EXPECT_EQ(r.statistic, 36.0);
    EXPECT_EQ(r.p_value, 0.0078125);
}

TEST(Wilcoxon, ExactMatchesEnumeration)
{
    std::mt19937_64 rng(101);
    for (int t = 0; t < 60; ++t) {
        const int n = std::uniform_int_distribution<int>(6, 16)(rng);
        auto [x, y] = random_pair(rng, n);
        // coarse rounding creates tied magnitudes
        if (t % 2)
            for (auto& v : y)
                v = std::round(v * 2.0) / 2.0;
        std::vector<double> xs, ys;
        for (int i = 0; i < n; ++i)
            if (x[i] != y[i]) {
                xs.push_back(x[i]);
                ys.push_back(y[i]);
            }
        if (xs.size() < 6)
            continue;
        auto r = wilcoxon_exact(xs, ys);
        auto ranks = detail::signed_ranks(xs, ys).ranks;
        EXPECT_NEAR(r.p_value, oracle::wilcoxon_enumerate(ranks, r.statistic), 1e-12);
    }
}

TEST(Wilcoxon, NormalApproximationAgreesAtTen)
{
    std::mt19937_64 rng(10);
    auto [x, y] = random_pair(rng, 10);
    EXPECT_NEAR(wilcoxon_exact(x, y).p_value, wilcoxon_normal(x, y).p_value, 0.05);
}

TEST(Wilcoxon, NormalApproximationAgreesFifteenToTwentyFive)
{
    std::mt19937_64 rng(2718);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        auto [x, y] = random_pair(rng, std::uniform_int_distribution<int>(15, 25)(rng));
        worst = std::max(worst, std::abs(wilcoxon_exact(x, y).p_value - wilcoxon_normal(x, y).p_value));
    }
    EXPECT_LT(worst, 0.05);
}

TEST(Wilcoxon, LargeSamplesUseNormal)
{
    std::mt19937_64 rng(4);
    auto [x, y] = random_pair(rng, 40);
    auto r = wilcoxon_signed_rank(x, y);
    EXPECT_FALSE(r.exact);
    EXPECT_EQ(r.n, 40);
}

TEST(Report, AggregateUsesPopulationStd)
{
    MethodReport m;
    m.samples = {{"a", 1.0, 0.0, 1.0}, {"b", 0.5, 2.0, 0.9}};
    aggregate(m);
    EXPECT_DOUBLE_EQ(m.mean[kDice], 0.75);
    EXPECT_DOUBLE_EQ(m.std[kDice], 0.25);
    EXPECT_DOUBLE_EQ(m.mean[kMeanDistance], 1.0);
    EXPECT_DOUBLE_EQ(m.std[kMeanDistance], 1.0);
}

TEST(Report, EmptyPredictionScoresDiagonal)
{
    auto s = score_sample("x", BinaryMask(3, 4, 0), box(3, 4, 1, 1, 1, 1));
    EXPECT_EQ(s.dice, 0.0);
    EXPECT_EQ(s.mean_distance, 5.0);
}

TEST(Report, TextRoundtripIsByteExact)
{
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    EvalReport rep;
    for (const char* name : {"proposed", "brn"}) {
        MethodReport m;
        m.name = name;
        for (int i = 0; i < 7; ++i)
            m.samples.push_back({"s" + std::to_string(i), u(rng), 5 * u(rng), u(rng)});
        aggregate(m);
        rep.methods.push_back(m);
    }
    rep.p_values = paired_p_values(rep.methods[0], rep.methods[1]);
    const auto text = format_report(rep);
    EXPECT_EQ(format_report(parse_report(text)), text);

    rep.p_values = std::array<double, 3>{std::nan(""), 0.5, 1.0};
    const auto with_nan = format_report(rep);
    EXPECT_EQ(format_report(parse_report(with_nan)), with_nan);
    EXPECT_EQ(kind_of([] { parse_report("# something else\n"); }), ErrorKind::MalformedHeader);
    EXPECT_EQ(kind_of([&] { parse_report(std::string(kReportHeader) + "\nmethod\tx\ns0\t1\t2\n"); }),
              ErrorKind::MalformedHeader);
}

TEST(Report, SummaryColumnsAlign)
{
    EvalReport rep;
    for (auto [name, d] : {std::pair{"a", 0.5}, std::pair{"b", 82.44}}) {
        MethodReport m;
        m.name = name;
        m.samples = {{"s0", 0.9, d, 0.9}, {"s1", 0.8, 3 * d, 0.8}};
        aggregate(m);
        rep.methods.push_back(m);
    }
    rep.p_values = std::array<double, 3>{0.01, 0.02, 0.03};
    std::istringstream in(format_summary(rep));
    std::string line;
    std::vector<std::size_t> starts;
    while (std::getline(in, line)) {
        ASSERT_GE(line.size(), 56u);
        EXPECT_NE(line[34], ' ') << line;
        EXPECT_EQ(line[33], ' ') << line;
        starts.push_back(line.find_first_not_of(' ', 54));
    }
    EXPECT_EQ(starts.size(), 4u);
    for (auto s : starts)
        EXPECT_EQ(s, 55u);
}

TEST(Evaluate, PredictionEqualsTruth)
{
    auto dir = scratch("same");
    fs::create_directories(dir / "masks");
    std::vector<ManifestRecord> recs;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 6; ++i) {
        const auto id = "s" + std::to_string(i);
        io::write_pgm(dir / "masks" / (id + ".pgm"), random_blob(rng, 32));
        recs.push_back({id, "", "masks/" + id + ".pgm", "", "test"});
    }
    write_manifest(dir, recs);
    auto m = read_manifest(dir);
    auto r = evaluate(m, m, "self");
    EXPECT_EQ(r.mean[kDice], 1.0);
    EXPECT_EQ(r.std[kDice], 0.0);
    EXPECT_EQ(r.mean[kMeanDistance], 0.0);
    EXPECT_EQ(r.mean[kAccuracy], 1.0);

    auto missing = m;
    missing.records.push_back({"extra", "", "masks/s0.pgm", "", "test"});
    EXPECT_EQ(kind_of([&] { evaluate(missing, m, "x"); }), ErrorKind::ManifestMismatch);
    fs::remove_all(dir);
}

TEST(Evaluate, DominatingMethodIsSignificant)
{
    MethodReport good, bad;
    for (int i = 0; i < 8; ++i) {
        const double base = 0.8 + 0.01 * i;
        good.samples.push_back({"s" + std::to_string(i), base + 0.05 + 0.003 * i, 1.0 - 0.02 * i, 0.99});
        bad.samples.push_back({"s" + std::to_string(i), base, 2.0, 0.98 - 0.001 * i});
    }
    auto p = paired_p_values(good, bad);
    EXPECT_LT(p[kDice], 0.05);
    EXPECT_LT(p[kMeanDistance], 0.05);
    EXPECT_LT(p[kAccuracy], 0.05);
}
