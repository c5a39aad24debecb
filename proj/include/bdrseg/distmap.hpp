#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "error.hpp"
#include "grid.hpp"

namespace bdrseg {

/// Foreground pixels with at least one background 4-neighbor; pixels outside
/// the frame count as background. Row-major order.
inline std::vector<Pixel> boundary_pixels(const BinaryMask& mask)
{
    std::vector<Pixel> out;
    auto bg = [&](int y, int x) { return !mask.contains(y, x) || mask(y, x) == 0; };
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask(y, x) && (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1)))
                out.push_back({y, x});
    if (out.empty())
        fail(ErrorKind::EmptyMask, "mask has no foreground pixels");
    return out;
}

namespace detail {

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) over one line:
/// out[q] = min_p (q - p)^2 + f[p]. Infinite samples contribute no parabola.
inline void squared_distance_1d(std::span<const double> f, std::span<double> out, std::vector<int>& v,
                                std::vector<double>& z)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    const int n = static_cast<int>(f.size());
    v.resize(static_cast<std::size_t>(n));
    z.resize(static_cast<std::size_t>(n) + 1);
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf)
            continue;
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        auto intersect = [&](int p) {
            return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
        };
        // z[0] = -inf stops the scan at k = 0
        double s = intersect(v[k]);
        while (s <= z[k]) {
            --k;
            s = intersect(v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(out.begin(), out.end(), inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q)
            ++j;
        const double d = q - v[j];
        out[q] = d * d + f[v[j]];
    }
}

} // namespace detail

/// Exact squared Euclidean distance from every pixel to the nearest site.
inline Grid<double> squared_euclidean_dt(std::span<const Pixel> sites, int height, int width)
{
    if (sites.empty())
        fail(ErrorKind::EmptySiteSet, "distance transform needs at least one site");
    constexpr double inf = std::numeric_limits<double>::infinity();
    Grid<double> g(height, width, inf);
    for (auto p : sites) {
        if (!g.contains(p))
            fail(ErrorKind::ShapeMismatch, "site outside the frame");
        g[p] = 0.0;
    }
    std::vector<double> line(static_cast<std::size_t>(std::max(height, width)));
    std::vector<double> out(line.size());
    std::vector<int> v;
    std::vector<double> z;
    for (int x = 0; x < width; ++x) {
        for (int y = 0; y < height; ++y)
            line[y] = g(y, x);
        detail::squared_distance_1d(std::span(line).first(height), std::span(out).first(height), v, z);
        for (int y = 0; y < height; ++y)
            g(y, x) = out[y];
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x)
            line[x] = g(y, x);
        detail::squared_distance_1d(std::span(line).first(width), std::span(out).first(width), v, z);
        for (int x = 0; x < width; ++x)
            g(y, x) = out[x];
    }
    return g;
}

inline Grid<double> euclidean_dt(std::span<const Pixel> sites, int height, int width)
{
    auto g = squared_euclidean_dt(sites, height, width);
    for (auto& v : g.values())
        v = std::sqrt(v);
    return g;
}

/// exp(-D), D = Euclidean distance to the nearest boundary pixel, over the whole frame.
inline DistanceMap mask_to_distance_map(const BinaryMask& mask)
{
    const auto boundary = boundary_pixels(mask);
    const auto d = euclidean_dt(boundary, mask.height(), mask.width());
    DistanceMap out(mask.height(), mask.width());
    for (std::size_t i = 0; i < d.size(); ++i)
        out.values()[i] = static_cast<float>(std::exp(-d.values()[i]));
    return out;
}

} // namespace bdrseg
