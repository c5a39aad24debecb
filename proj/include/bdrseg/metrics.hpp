#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "distmap.hpp"
#include "error.hpp"
#include "grid.hpp"
#include "imgio.hpp"
#include "manifest.hpp"

namespace bdrseg {

/// 2|a n b| / (|a| + |b|); 1 when both masks are empty.
inline double dice(const BinaryMask& a, const BinaryMask& b)
{
    require_same_shape(a, b, "dice");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool pa = a.values()[i] != 0, pb = b.values()[i] != 0;
        na += pa;
        nb += pb;
        both += pa && pb;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

/// (TP + TN) / pixels.
inline double pixel_accuracy(const BinaryMask& a, const BinaryMask& b)
{
    require_same_shape(a, b, "pixel_accuracy");
    if (a.size() == 0)
        return 1.0;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        agree += (a.values()[i] != 0) == (b.values()[i] != 0);
    return static_cast<double>(agree) / static_cast<double>(a.size());
}

/// Symmetric mean boundary distance in pixels: the average of (mean distance
/// from a's boundary pixels to b's boundary) and the reverse.
inline double mean_boundary_distance(const BinaryMask& a, const BinaryMask& b)
{
    require_same_shape(a, b, "mean_boundary_distance");
    const auto ba = boundary_pixels(a);
    const auto bb = boundary_pixels(b);
    auto directed = [&](const std::vector<Pixel>& from, const std::vector<Pixel>& to) {
        const auto d = euclidean_dt(to, a.height(), a.width());
        double s = 0.0;
        for (auto p : from)
            s += d[p];
        return s / static_cast<double>(from.size());
    };
    return 0.5 * (directed(ba, bb) + directed(bb, ba));
}

// --- Wilcoxon signed-rank -------------------------------------------------

struct WilcoxonResult {
    double statistic = 0.0; ///< W+, sum of ranks of positive differences
    double p_value = 1.0;   ///< two-sided
    int n = 0;              ///< non-zero differences used
    bool exact = false;
};

inline constexpr int kWilcoxonMinSamples = 6;
inline constexpr int kWilcoxonExactLimit = 25;

namespace detail {

struct SignedRanks {
    std::vector<double> ranks; ///< average ranks of |d|, ties averaged
    std::vector<bool> positive;
    double tie_term = 0.0; ///< sum over tie groups of t^3 - t
};

inline SignedRanks signed_ranks(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size())
        fail(ErrorKind::ShapeMismatch, "wilcoxon: samples differ in length");
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] - y[i] != 0.0)
            d.push_back(x[i] - y[i]);
    if (d.size() < static_cast<std::size_t>(kWilcoxonMinSamples))
        fail(ErrorKind::TooFewSamples, "wilcoxon: " + std::to_string(d.size()) + " non-zero differences, need 6");
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
    SignedRanks r;
    r.ranks.resize(d.size());
    r.positive.resize(d.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]]))
            ++j;
        const double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
        const double t = static_cast<double>(j - i + 1);
        r.tie_term += t * t * t - t;
        for (std::size_t k = i; k <= j; ++k)
            r.ranks[order[k]] = avg;
        i = j + 1;
    }
    for (std::size_t i = 0; i < d.size(); ++i)
        r.positive[i] = d[i] > 0.0;
    return r;
}

inline double positive_rank_sum(const SignedRanks& r)
{
    double w = 0.0;
    for (std::size_t i = 0; i < r.ranks.size(); ++i)
        if (r.positive[i])
            w += r.ranks[i];
    return w;
}

} // namespace detail

/// Exact null distribution over all 2^n sign assignments (counted with a
/// subset-sum table over doubled ranks, which are integers).
inline WilcoxonResult wilcoxon_exact(std::span<const double> x, std::span<const double> y)
{
    const auto r = detail::signed_ranks(x, y);
    const int n = static_cast<int>(r.ranks.size());
    if (n > 62)
        fail(ErrorKind::InvalidParams, "wilcoxon_exact: too many samples for enumeration");
    std::vector<std::int64_t> doubled(r.ranks.size());
    std::int64_t total = 0;
    for (std::size_t i = 0; i < r.ranks.size(); ++i) {
        doubled[i] = std::llround(2.0 * r.ranks[i]);
        total += doubled[i];
    }
    std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
    count[0] = 1.0;
    for (auto v : doubled)
        for (std::int64_t s = total; s >= v; --s)
            count[s] += count[s - v];

    WilcoxonResult out;
    out.statistic = detail::positive_rank_sum(r);
    out.n = n;
    out.exact = true;
    const std::int64_t observed = std::llround(2.0 * out.statistic);
    const std::int64_t dev = std::llabs(2 * observed - total);
    double extreme = 0.0;
    for (std::int64_t s = 0; s <= total; ++s)
        if (std::llabs(2 * s - total) >= dev)
            extreme += count[s];
    out.p_value = std::min(1.0, extreme / std::ldexp(1.0, n));
    return out;
}

/// Normal approximation with continuity correction and tie-corrected variance.
inline WilcoxonResult wilcoxon_normal(std::span<const double> x, std::span<const double> y)
{
    const auto r = detail::signed_ranks(x, y);
    const double n = static_cast<double>(r.ranks.size());
    WilcoxonResult out;
    out.statistic = detail::positive_rank_sum(r);
    out.n = static_cast<int>(r.ranks.size());
    out.exact = false;
    const double mean = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - r.tie_term / 48.0;
    if (var <= 0.0) {
        out.p_value = 1.0;
        return out;
    }
    const double z = std::max(0.0, std::abs(out.statistic - mean) - 0.5) / std::sqrt(var);
    out.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
    return out;
}

/// Two-sided paired test; exact for n <= 25 non-zero differences, normal otherwise.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y)
{
    const auto r = detail::signed_ranks(x, y);
    return r.ranks.size() <= static_cast<std::size_t>(kWilcoxonExactLimit) ? wilcoxon_exact(x, y)
                                                                            : wilcoxon_normal(x, y);
}

// --- evaluation report ----------------------------------------------------

struct SampleMetrics {
    std::string id;
    double dice = 0.0;
    double mean_distance = 0.0;
    double accuracy = 0.0;
};

enum Metric : std::size_t { kDice = 0, kMeanDistance = 1, kAccuracy = 2 };
inline constexpr std::array<const char*, 3> kMetricNames{"dice", "mean_distance", "accuracy"};

struct MethodReport {
    std::string name;
    std::vector<SampleMetrics> samples;
    std::array<double, 3> mean{};
    std::array<double, 3> std{};
};

struct EvalReport {
    std::vector<MethodReport> methods;
    /// Paired Wilcoxon p-values of methods[0] vs methods[1], per metric.
    std::optional<std::array<double, 3>> p_values;
};

inline double metric_of(const SampleMetrics& s, std::size_t m)
{
    return m == kDice ? s.dice : m == kMeanDistance ? s.mean_distance : s.accuracy;
}

/// Mean and population standard deviation of each metric.
inline void aggregate(MethodReport& r)
{
    const double n = static_cast<double>(r.samples.size());
    for (std::size_t m = 0; m < 3; ++m) {
        if (r.samples.empty()) {
            r.mean[m] = r.std[m] = 0.0;
            continue;
        }
        double s = 0.0;
        for (const auto& x : r.samples)
            s += metric_of(x, m);
        const double mean = s / n;
        double v = 0.0;
        for (const auto& x : r.samples)
            v += (metric_of(x, m) - mean) * (metric_of(x, m) - mean);
        r.mean[m] = mean;
        r.std[m] = std::sqrt(v / n);
    }
}

/// Metrics of one predicted mask. An empty prediction scores the frame
/// diagonal as its mean distance.
inline SampleMetrics score_sample(const std::string& id, const BinaryMask& pred, const BinaryMask& truth)
{
    SampleMetrics s;
    s.id = id;
    s.dice = dice(pred, truth);
    s.accuracy = pixel_accuracy(pred, truth);
    if (count_foreground(pred) == 0 || count_foreground(truth) == 0)
        s.mean_distance = std::hypot(static_cast<double>(pred.height()), static_cast<double>(pred.width()));
    else
        s.mean_distance = mean_boundary_distance(pred, truth);
    return s;
}

/// Scores every record of the prediction manifest against the ground-truth
/// record with the same id.
inline MethodReport evaluate(const Manifest& pred, const Manifest& gt, const std::string& name)
{
    if (pred.records.empty())
        fail(ErrorKind::ManifestMismatch, "prediction manifest is empty");
    MethodReport r;
    r.name = name;
    for (const auto& rec : pred.records) {
        const auto* truth = gt.find(rec.id);
        if (!truth)
            fail(ErrorKind::ManifestMismatch, "id '" + rec.id + "' has no ground truth");
        if (rec.mask_path.empty() || truth->mask_path.empty())
            fail(ErrorKind::ManifestMismatch, "id '" + rec.id + "' lacks a mask path");
        const auto pm = io::read_pgm_mask(pred.resolve(rec.mask_path));
        const auto tm = io::read_pgm_mask(gt.resolve(truth->mask_path));
        r.samples.push_back(score_sample(rec.id, pm, tm));
    }
    aggregate(r);
    return r;
}

/// Paired p-values (Wilcoxon) per metric; NaN when a test is undefined
/// (fewer than six non-zero differences).
inline std::array<double, 3> paired_p_values(const MethodReport& a, const MethodReport& b)
{
    if (a.samples.size() != b.samples.size())
        fail(ErrorKind::ManifestMismatch, "compared methods cover different samples");
    for (std::size_t i = 0; i < a.samples.size(); ++i)
        if (a.samples[i].id != b.samples[i].id)
            fail(ErrorKind::ManifestMismatch, "compared methods list samples in different order");
    std::array<double, 3> p{};
    for (std::size_t m = 0; m < 3; ++m) {
        std::vector<double> x, y;
        for (std::size_t i = 0; i < a.samples.size(); ++i) {
            x.push_back(metric_of(a.samples[i], m));
            y.push_back(metric_of(b.samples[i], m));
        }
        try {
            p[m] = wilcoxon_signed_rank(x, y).p_value;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::TooFewSamples)
                throw;
            p[m] = std::nan("");
        }
    }
    return p;
}

namespace detail {

inline std::string format_real(double v)
{
    if (std::isnan(v))
        return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_real(const std::string& s)
{
    if (s == "nan")
        return std::nan("");
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        fail(ErrorKind::MalformedHeader, "report: bad number '" + s + "'");
    }
    if (used != s.size())
        fail(ErrorKind::MalformedHeader, "report: bad number '" + s + "'");
    return v;
}

inline std::vector<std::string> split_tabs(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos)
            break;
        start = tab + 1;
    }
    return out;
}

} // namespace detail

inline constexpr const char* kReportHeader = "# bdrseg evaluation report v1";

/// Tab-separated: per method a "method" line, a column header, one row per
/// sample, then "mean" and "std" footer rows; an optional trailing "p_value" row.
inline std::string format_report(const EvalReport& report)
{
    using detail::format_real;
    std::string out = std::string(kReportHeader) + "\n";
    for (const auto& m : report.methods) {
        out += "method\t" + m.name + "\n";
        out += "id\tdice\tmean_distance\taccuracy\n";
        for (const auto& s : m.samples)
            out += s.id + "\t" + format_real(s.dice) + "\t" + format_real(s.mean_distance) + "\t" +
                   format_real(s.accuracy) + "\n";
        out += "mean\t" + format_real(m.mean[0]) + "\t" + format_real(m.mean[1]) + "\t" + format_real(m.mean[2]) + "\n";
        out += "std\t" + format_real(m.std[0]) + "\t" + format_real(m.std[1]) + "\t" + format_real(m.std[2]) + "\n";
    }
    if (report.p_values) {
        const auto& p = *report.p_values;
        out += "p_value\t" + format_real(p[0]) + "\t" + format_real(p[1]) + "\t" + format_real(p[2]) + "\n";
    }
    return out;
}

inline EvalReport parse_report(const std::string& text)
{
    using detail::parse_real;
    EvalReport report;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kReportHeader)
        fail(ErrorKind::MalformedHeader, "report: missing header line");
    auto expect_cols = [](const std::vector<std::string>& f, std::size_t n) {
        if (f.size() != n)
            fail(ErrorKind::MalformedHeader, "report: expected " + std::to_string(n) + " columns");
    };
    while (std::getline(in, line)) {
        const auto f = detail::split_tabs(line);
        if (f[0] == "method") {
            expect_cols(f, 2);
            report.methods.push_back({f[1], {}, {}, {}});
        } else if (f[0] == "id") {
            continue;
        } else if (f[0] == "p_value") {
            expect_cols(f, 4);
            report.p_values = std::array<double, 3>{parse_real(f[1]), parse_real(f[2]), parse_real(f[3])};
        } else {
            expect_cols(f, 4);
            if (report.methods.empty())
                fail(ErrorKind::MalformedHeader, "report: row before any method line");
            auto& m = report.methods.back();
            const std::array<double, 3> v{parse_real(f[1]), parse_real(f[2]), parse_real(f[3])};
            if (f[0] == "mean")
                m.mean = v;
            else if (f[0] == "std")
                m.std = v;
            else
                m.samples.push_back({f[0], v[0], v[1], v[2]});
        }
    }
    return report;
}

inline void write_report(const std::filesystem::path& path, const EvalReport& report)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
    out << format_report(report);
    if (!out)
        fail(ErrorKind::IoFailure, "write error on " + path.string());
}

inline EvalReport read_report(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::IoFailure, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_report(ss.str());
}

/// Human-readable summary: one row per method, "mean +- std" per metric, then p-values.
inline std::string format_summary(const EvalReport& report)
{
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-12s %-20s %-20s %-20s\n", "method", "dice", "mean distance", "accuracy");
    out += buf;
    for (const auto& m : report.methods) {
        char cell[3][64];
        std::snprintf(cell[0], sizeof cell[0], "%.4f +- %.4f", m.mean[0], m.std[0]);
        std::snprintf(cell[1], sizeof cell[1], "%.3f +- %.3f", m.mean[1], m.std[1]);
        std::snprintf(cell[2], sizeof cell[2], "%.4f +- %.4f", m.mean[2], m.std[2]);
        std::snprintf(buf, sizeof buf, "%-12s %-20s %-20s %-20s\n", m.name.c_str(), cell[0], cell[1], cell[2]);
        out += buf;
    }
    if (report.p_values) {
        const auto& p = *report.p_values;
        std::snprintf(buf, sizeof buf, "%-12s %-20.3g %-20.3g %-20.3g\n", "p-value", p[0], p[1], p[2]);
        out += buf;
    }
    return out;
}

} // namespace bdrseg
