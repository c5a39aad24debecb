#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "distmap.hpp"
#include "error.hpp"
#include "grid.hpp"
#include "imgio.hpp"
#include "manifest.hpp"

namespace bdrseg {

/// Geometry and appearance of one synthetic kidney-like ultrasound frame.
struct PhantomParams {
    int height = 64;
    int width = 64;
    double semi_major = 16.0; ///< a, pixels
    double semi_minor = 10.0; ///< b, pixels
    double angle = 0.0;       ///< radians
    double center_y = 32.0;
    double center_x = 32.0;
    double notch_depth = 0.3; ///< bean concavity in [0, 0.6]
    double blur_sigma = 1.0;
    double speckle = 0.3; ///< multiplicative noise strength in [0, 1]
    double gain_y = 0.0;  ///< background gain gradient across the frame
    double gain_x = 0.0;
    std::uint64_t seed = 0;
};

struct PhantomSample {
    Image image;
    BinaryMask mask;
};

inline constexpr double kMinAreaFraction = 0.05;
inline constexpr double kMaxAreaFraction = 0.60;

namespace detail {

/// Separable Gaussian filter with edge clamping; sigma <= 0 is the identity.
inline Grid<float> gaussian_blur(const Grid<float>& in, double sigma)
{
    if (sigma <= 0.0)
        return in;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& v : k)
        v /= sum;
    const int h = in.height(), w = in.width();
    Grid<float> tmp(h, w), out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += k[i + radius] * in(y, std::clamp(x + i, 0, w - 1));
            tmp(y, x) = static_cast<float>(s);
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i)
                s += k[i + radius] * tmp(std::clamp(y + i, 0, h - 1), x);
            out(y, x) = static_cast<float>(s);
        }
    return out;
}

/// Normalized radial coordinate of a pixel: 0 at the center, 1 on the bean outline.
inline double bean_radius(const PhantomParams& p, double y, double x)
{
    const double c = std::cos(p.angle), s = std::sin(p.angle);
    const double u = (x - p.center_x) * c + (y - p.center_y) * s;
    const double v = -(x - p.center_x) * s + (y - p.center_y) * c;
    const double eu = u / p.semi_major, ev = v / p.semi_minor;
    const double rho = std::sqrt(eu * eu + ev * ev);
    const double theta = std::atan2(ev, eu);
    // concavity centered on the +minor axis (the hilum side)
    const double lobe = std::pow(0.5 * (1.0 + std::sin(theta)), 4.0);
    return rho / (1.0 - p.notch_depth * lobe);
}

inline void validate(const PhantomParams& p)
{
    auto bad = [](const std::string& what) { fail(ErrorKind::InvalidParams, "phantom: " + what); };
    if (p.height < 16 || p.width < 16)
        bad("frame must be at least 16x16");
    if (p.semi_major < 6.0 || p.semi_minor < 6.0)
        bad("half-axes must be >= 6 pixels");
    if (p.notch_depth < 0.0 || p.notch_depth > 0.6)
        bad("notch depth outside [0, 0.6]");
    if (p.speckle < 0.0 || p.speckle > 1.0)
        bad("speckle strength outside [0, 1]");
    if (p.blur_sigma < 0.0)
        bad("negative blur sigma");
}

} // namespace detail

/// Renders a bean-shaped mask and an ultrasound-like image: tissue
/// background with a gain ramp, dark sinus, bright cortical rim, Gaussian
/// blur, then multiplicative Gaussian speckle; clamped to [0, 1].
inline PhantomSample gen_sample(const PhantomParams& p)
{
    detail::validate(p);
    std::mt19937_64 rng(p.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double background = 0.38 + 0.14 * uni(rng);
    const double cortex = 0.65 + 0.15 * uni(rng);
    const double sinus = 0.18 + 0.14 * uni(rng);
    const double rim = 0.6 + 0.2 * uni(rng);

    PhantomSample s{Image(p.height, p.width), BinaryMask(p.height, p.width, 0)};
    for (int y = 0; y < p.height; ++y) {
        for (int x = 0; x < p.width; ++x) {
            const double r = detail::bean_radius(p, y, x);
            double v;
            if (r <= 1.0) {
                s.mask(y, x) = 1;
                v = r > rim ? cortex : sinus;
            } else {
                const double gy = p.gain_y * (static_cast<double>(y) / p.height - 0.5);
                const double gx = p.gain_x * (static_cast<double>(x) / p.width - 0.5);
                v = background * (1.0 + gy + gx);
            }
            s.image(y, x) = static_cast<float>(v);
        }
    }
    const double area = static_cast<double>(count_foreground(s.mask)) / static_cast<double>(s.mask.size());
    if (area < kMinAreaFraction || area > kMaxAreaFraction)
        fail(ErrorKind::InvalidParams, "phantom mask covers " + std::to_string(area) + " of the frame");

    s.image = detail::gaussian_blur(s.image, p.blur_sigma);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto& v : s.image.values()) {
        const double speckled = p.speckle > 0.0 ? v * (1.0 + p.speckle * noise(rng)) : v;
        v = static_cast<float>(std::clamp(speckled, 0.0, 1.0));
    }
    return s;
}

/// Dense displacement field; sample (y, x) reads the source at (y + dy, x + dx).
struct DeformationField {
    Grid<float> dy;
    Grid<float> dx;

    double max_magnitude() const
    {
        double m = 0.0;
        for (std::size_t i = 0; i < dy.size(); ++i)
            m = std::max(m, std::hypot(static_cast<double>(dy.values()[i]), static_cast<double>(dx.values()[i])));
        return m;
    }
};

inline constexpr double kDefaultDisplacementCap = 8.0;
inline constexpr double kMinFieldSigma = 4.0;

inline DeformationField constant_field(int height, int width, float dy, float dx)
{
    return {Grid<float>(height, width, dy), Grid<float>(height, width, dx)};
}

/// Smooth random field: white noise filtered with a Gaussian of `sigma`,
/// rescaled so the largest displacement equals `amplitude`.
inline DeformationField random_field(int height, int width, double amplitude, std::uint64_t seed,
                                     double sigma = 6.0, double cap = kDefaultDisplacementCap)
{
    if (sigma < kMinFieldSigma)
        fail(ErrorKind::InvalidParams, "deformation sigma must be >= 4 pixels");
    if (amplitude < 0.0 || amplitude > cap)
        fail(ErrorKind::InvalidParams, "deformation amplitude outside [0, cap]");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    DeformationField f{Grid<float>(height, width), Grid<float>(height, width)};
    for (auto& v : f.dy.values())
        v = static_cast<float>(uni(rng));
    for (auto& v : f.dx.values())
        v = static_cast<float>(uni(rng));
    f.dy = detail::gaussian_blur(f.dy, sigma);
    f.dx = detail::gaussian_blur(f.dx, sigma);
    const double m = f.max_magnitude();
    const double scale = m > 0.0 ? amplitude / m : 0.0;
    for (auto& v : f.dy.values())
        v = static_cast<float>(v * scale);
    for (auto& v : f.dx.values())
        v = static_cast<float>(v * scale);
    return f;
}

/// Warps image (bilinear) and mask (nearest neighbor) with the same field;
/// samples outside the frame take the nearest edge value.
inline PhantomSample elastic_augment(const Image& image, const BinaryMask& mask, const DeformationField& field)
{
    require_same_shape(image, mask, "elastic_augment mask");
    require_same_shape(image, field.dy, "elastic_augment field");
    require_same_shape(image, field.dx, "elastic_augment field");
    const int h = image.height(), w = image.width();
    PhantomSample out{Image(h, w), BinaryMask(h, w, 0)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double sy = std::clamp(y + static_cast<double>(field.dy(y, x)), 0.0, h - 1.0);
            const double sx = std::clamp(x + static_cast<double>(field.dx(y, x)), 0.0, w - 1.0);
            const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            const double fy = sy - y0, fx = sx - x0;
            const double v = (1 - fy) * ((1 - fx) * image(y0, x0) + fx * image(y0, x1)) +
                             fy * ((1 - fx) * image(y1, x0) + fx * image(y1, x1));
            out.image(y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            out.mask(y, x) = mask(static_cast<int>(std::lround(sy)), static_cast<int>(std::lround(sx)));
        }
    }
    return out;
}

/// Sampling ranges for randomized phantom parameters. Lengths are fractions
/// of the shorter frame side so the same ranges serve 64x64 and 321x321.
struct PhantomRanges {
    int height = 64;
    int width = 64;
    double major_min = 0.20, major_max = 0.32; ///< a / min(h, w)
    double ratio_min = 0.55, ratio_max = 0.80; ///< b / a
    double notch_min = 0.0, notch_max = 0.45;
    double blur_min = 0.5, blur_max = 1.5;
    double speckle_min = 0.15, speckle_max = 0.45;
    double gain_max = 0.3;
    /// Minimum gap between the outline's bounding circle and the frame edge.
    double margin = 3.0;
};

/// Deterministic draw of parameters for sample seed `seed`; redraws until the
/// rendered mask satisfies the area bounds.
inline PhantomParams sample_params(const PhantomRanges& r, std::uint64_t seed)
{
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto in = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };
    const double side = std::min(r.height, r.width);
    for (int attempt = 0; attempt < 64; ++attempt) {
        PhantomParams p;
        p.height = r.height;
        p.width = r.width;
        p.semi_major = std::max(6.0, in(r.major_min, r.major_max) * side);
        p.semi_minor = std::max(6.0, in(r.ratio_min, r.ratio_max) * p.semi_major);
        p.angle = in(0.0, std::numbers::pi);
        const double reach = p.semi_major + r.margin;
        p.center_y = in(reach, r.height - 1 - reach);
        p.center_x = in(reach, r.width - 1 - reach);
        p.notch_depth = in(r.notch_min, r.notch_max);
        p.blur_sigma = in(r.blur_min, r.blur_max);
        p.speckle = in(r.speckle_min, r.speckle_max);
        p.gain_y = in(-r.gain_max, r.gain_max);
        p.gain_x = in(-r.gain_max, r.gain_max);
        p.seed = seed;
        try {
            detail::validate(p);
            (void)gen_sample(p);
            return p;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::InvalidParams)
                throw;
        }
    }
    fail(ErrorKind::InvalidParams, "phantom ranges never produce a valid mask");
}

inline std::string sample_id(std::size_t index)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%05zu", index);
    return buf;
}

/// Writes images/, masks/, dmaps/ and manifest.jsonl under `out_dir`. Sample
/// i uses seed + i and belongs to the train split when i < n_train.
inline Manifest make_dataset(const std::filesystem::path& out_dir, std::size_t n_train, std::size_t n_test,
                             std::uint64_t seed, const PhantomRanges& ranges, unsigned threads = 1)
{
    if (n_train + n_test == 0)
        fail(ErrorKind::InvalidParams, "dataset must contain at least one sample");
    std::error_code ec;
    for (const char* sub : {"images", "masks", "dmaps"}) {
        std::filesystem::create_directories(out_dir / sub, ec);
        if (ec)
            fail(ErrorKind::IoFailure, "cannot create " + (out_dir / sub).string() + ": " + ec.message());
    }
    const std::size_t total = n_train + n_test;
    std::vector<ManifestRecord> records(total);
    for (std::size_t i = 0; i < total; ++i) {
        const auto id = sample_id(i);
        records[i] = {id, "images/" + id + ".pgm", "masks/" + id + ".pgm", "dmaps/" + id + ".fmap",
                      i < n_train ? "train" : "test"};
    }

    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(std::max(1u, threads));
    auto worker = [&](unsigned t) {
        try {
            for (std::size_t i = next++; i < total; i = next++) {
                const auto params = sample_params(ranges, seed + i);
                const auto s = gen_sample(params);
                io::write_pgm(out_dir / records[i].image_path, s.image);
                io::write_pgm(out_dir / records[i].mask_path, s.mask);
                io::write_fmap(out_dir / records[i].dmap_path, mask_to_distance_map(s.mask));
            }
        } catch (...) {
            errors[t] = std::current_exception();
        }
    };
    if (threads <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back(worker, t);
        for (auto& th : pool)
            th.join();
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
    write_manifest(out_dir, records);
    return Manifest{out_dir, records};
}

} // namespace bdrseg
