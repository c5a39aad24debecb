#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"
#include "grid.hpp"

namespace bdrseg {

struct PixelGraph {
    struct Edge {
        int u = 0; ///< index into vertices, u < v
        int v = 0;
        double weight = 0.0;
    };

    /// Sorted row-major, unique.
    std::vector<Pixel> vertices;
    std::vector<Edge> edges;
};

struct Contour {
    std::vector<Pixel> points;
    bool closed = false;
};

struct BrnOptions {
    double tau = 0.6;
    double link_radius = 1.5;
    double fallback_radius = 3.0;
    /// Fallback triggers when the largest component holds less than this
    /// fraction of the skeleton pixels.
    double min_component_fraction = 0.5;
};

/// Pixels with value >= tau, row-major.
inline std::vector<Pixel> binarize(const Grid<float>& dmap, double tau)
{
    if (!(tau > 0.0 && tau < 1.0))
        fail(ErrorKind::InvalidParams, "binarize: tau must lie in (0, 1)");
    std::vector<Pixel> out;
    for (int y = 0; y < dmap.height(); ++y)
        for (int x = 0; x < dmap.width(); ++x)
            if (static_cast<double>(dmap(y, x)) >= tau)
                out.push_back({y, x});
    if (out.empty())
        fail(ErrorKind::EmptyResult, "no pixel reaches the threshold");
    return out;
}

namespace detail {

// Neighbor ring in the order E, NE, N, NW, W, SW, S, SE.
inline constexpr std::array<int, 8> kRingDy{0, -1, -1, -1, 0, 1, 1, 1};
inline constexpr std::array<int, 8> kRingDx{1, 1, 0, -1, -1, -1, 0, 1};

/// Binary raster over the bounding box of a pixel set with a one-pixel empty margin.
struct LocalRaster {
    int oy = 0;
    int ox = 0;
    BinaryMask grid;

    explicit LocalRaster(std::span<const Pixel> pixels)
    {
        int y0 = pixels.front().y, y1 = y0, x0 = pixels.front().x, x1 = x0;
        for (auto p : pixels) {
            y0 = std::min(y0, p.y);
            y1 = std::max(y1, p.y);
            x0 = std::min(x0, p.x);
            x1 = std::max(x1, p.x);
        }
        oy = y0 - 1;
        ox = x0 - 1;
        grid = BinaryMask(y1 - y0 + 3, x1 - x0 + 3, 0);
        for (auto p : pixels)
            grid(p.y - oy, p.x - ox) = 1;
    }

    std::vector<Pixel> pixels() const
    {
        std::vector<Pixel> out;
        for (int y = 0; y < grid.height(); ++y)
            for (int x = 0; x < grid.width(); ++x)
                if (grid(y, x))
                    out.push_back({y + oy, x + ox});
        return out;
    }
};

inline std::array<bool, 8> ring(const BinaryMask& g, int y, int x)
{
    std::array<bool, 8> r{};
    for (int k = 0; k < 8; ++k)
        r[k] = g(y + kRingDy[k], x + kRingDx[k]) != 0;
    return r;
}

/// Yokoi 8-connectivity number; 1 means the pixel is simple.
inline int connectivity8(const std::array<bool, 8>& r)
{
    int c = 0;
    for (int k = 0; k < 8; k += 2) {
        const bool b0 = !r[k];
        const bool b1 = !r[(k + 1) % 8];
        const bool b2 = !r[(k + 2) % 8];
        c += static_cast<int>(b0) - static_cast<int>(b0 && b1 && b2);
    }
    return c;
}

inline int count8(const std::array<bool, 8>& r) { return static_cast<int>(std::count(r.begin(), r.end(), true)); }

struct DisjointSet {
    std::vector<int> parent;
    std::vector<int> size;

    explicit DisjointSet(std::size_t n) : parent(n), size(n, 1) { std::iota(parent.begin(), parent.end(), 0); }

    int find(int a)
    {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }

    bool unite(int a, int b)
    {
        a = find(a);
        b = find(b);
        if (a == b)
            return false;
        if (size[a] < size[b] || (size[a] == size[b] && b < a))
            std::swap(a, b);
        parent[b] = a;
        size[a] += size[b];
        return true;
    }
};

/// 8-connected digital segment (Bresenham), both endpoints included.
inline void append_segment(Pixel a, Pixel b, std::vector<Pixel>& out)
{
    int dy = std::abs(b.y - a.y), dx = std::abs(b.x - a.x);
    const int sy = a.y < b.y ? 1 : -1, sx = a.x < b.x ? 1 : -1;
    int err = dx - dy;
    Pixel p = a;
    while (true) {
        out.push_back(p);
        if (p == b)
            break;
        const int e2 = 2 * err;
        if (e2 > -dy) {
            err -= dy;
            p.x += sx;
        }
        if (e2 < dx) {
            err += dx;
            p.y += sy;
        }
    }
}

} // namespace detail

/// Topology-preserving thinning to an 8-connected, one-pixel-wide skeleton.
/// Border pixels (by N, S, E, W sub-iteration) are removed sequentially while
/// they are simple and not end points.
inline std::vector<Pixel> thin(std::span<const Pixel> pixels)
{
    if (pixels.empty())
        return {};
    detail::LocalRaster raster(pixels);
    auto& g = raster.grid;
    constexpr std::array<int, 4> dir_dy{-1, 1, 0, 0};
    constexpr std::array<int, 4> dir_dx{0, 0, 1, -1};
    bool changed = true;
    std::vector<Pixel> candidates;
    while (changed) {
        changed = false;
        for (int d = 0; d < 4; ++d) {
            candidates.clear();
            for (int y = 1; y + 1 < g.height(); ++y)
                for (int x = 1; x + 1 < g.width(); ++x)
                    if (g(y, x) && !g(y + dir_dy[d], x + dir_dx[d]))
                        candidates.push_back({y, x});
            for (auto p : candidates) {
                const auto r = detail::ring(g, p.y, p.x);
                if (detail::count8(r) >= 2 && detail::connectivity8(r) == 1) {
                    g(p.y, p.x) = 0;
                    changed = true;
                }
            }
        }
    }
    return raster.pixels();
}

/// Undirected graph linking every pixel pair within Euclidean `link_radius`.
inline PixelGraph build_graph(std::span<const Pixel> pixels, double link_radius)
{
    PixelGraph graph;
    if (pixels.empty())
        return graph;
    graph.vertices.assign(pixels.begin(), pixels.end());
    std::sort(graph.vertices.begin(), graph.vertices.end());
    graph.vertices.erase(std::unique(graph.vertices.begin(), graph.vertices.end()), graph.vertices.end());

    detail::LocalRaster raster(graph.vertices);
    Grid<int> index(raster.grid.height(), raster.grid.width(), -1);
    for (std::size_t i = 0; i < graph.vertices.size(); ++i)
        index(graph.vertices[i].y - raster.oy, graph.vertices[i].x - raster.ox) = static_cast<int>(i);

    const int reach = static_cast<int>(std::floor(link_radius));
    const double r2 = link_radius * link_radius;
    for (std::size_t i = 0; i < graph.vertices.size(); ++i) {
        const Pixel p = graph.vertices[i];
        for (int dy = 0; dy <= reach; ++dy) {
            for (int dx = -reach; dx <= reach; ++dx) {
                if (dy == 0 && dx <= 0)
                    continue;
                if (dy * dy + dx * dx > r2)
                    continue;
                const int ly = p.y + dy - raster.oy;
                const int lx = p.x + dx - raster.ox;
                if (!index.contains(ly, lx) || index(ly, lx) < 0)
                    continue;
                const int j = index(ly, lx);
                graph.edges.push_back({static_cast<int>(i), j, std::sqrt(static_cast<double>(dy * dy + dx * dx))});
            }
        }
    }
    std::sort(graph.edges.begin(), graph.edges.end(),
              [](const auto& a, const auto& b) { return a.u != b.u ? a.u < b.u : a.v < b.v; });
    return graph;
}

/// Kruskal minimum spanning forest; edges ordered by (weight, u, v).
/// Returns indices into `graph.edges`.
inline std::vector<std::size_t> minimum_spanning_forest(const PixelGraph& graph)
{
    std::vector<std::size_t> order(graph.edges.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ea = graph.edges[a];
        const auto& eb = graph.edges[b];
        if (ea.weight != eb.weight)
            return ea.weight < eb.weight;
        if (ea.u != eb.u)
            return ea.u < eb.u;
        return ea.v < eb.v;
    });
    detail::DisjointSet dsu(graph.vertices.size());
    std::vector<std::size_t> tree;
    for (auto e : order)
        if (dsu.unite(graph.edges[e].u, graph.edges[e].v))
            tree.push_back(e);
    return tree;
}

struct MaxPathResult {
    Contour path;
    double weight = 0.0;
    /// Vertex count of the largest connected component.
    std::size_t component_size = 0;
};

/// MST of the largest connected component and its weighted diameter. Does
/// not enforce a minimum path length.
inline MaxPathResult mst_max_path_detailed(const PixelGraph& graph)
{
    if (graph.vertices.empty())
        fail(ErrorKind::EmptyResult, "mst_max_path: empty graph");
    const std::size_t n = graph.vertices.size();
    const auto tree = minimum_spanning_forest(graph);

    detail::DisjointSet dsu(n);
    for (auto e : tree)
        dsu.unite(graph.edges[e].u, graph.edges[e].v);
    // Largest component; ties go to the one holding the smallest vertex index.
    int best_root = dsu.find(0);
    for (std::size_t i = 1; i < n; ++i) {
        const int r = dsu.find(static_cast<int>(i));
        if (dsu.size[r] > dsu.size[best_root])
            best_root = r;
    }

    std::vector<std::vector<std::pair<int, double>>> adj(n);
    for (auto e : tree) {
        const auto& ed = graph.edges[e];
        if (dsu.find(ed.u) != best_root)
            continue;
        adj[ed.u].push_back({ed.v, ed.weight});
        adj[ed.v].push_back({ed.u, ed.weight});
    }
    int start = 0;
    while (dsu.find(start) != best_root)
        ++start;

    std::vector<double> dist(n);
    std::vector<int> parent(n);
    auto farthest = [&](int source) {
        std::fill(dist.begin(), dist.end(), -1.0);
        std::fill(parent.begin(), parent.end(), -1);
        std::vector<int> stack{source};
        dist[source] = 0.0;
        int best = source;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            if (dist[u] > dist[best] || (dist[u] == dist[best] && u < best))
                best = u;
            for (auto [v, w] : adj[u]) {
                if (dist[v] >= 0.0)
                    continue;
                dist[v] = dist[u] + w;
                parent[v] = u;
                stack.push_back(v);
            }
        }
        return best;
    };

    const int a = farthest(start);
    const int b = farthest(a);
    MaxPathResult result;
    result.weight = dist[b];
    result.component_size = static_cast<std::size_t>(dsu.size[best_root]);
    for (int v = b; v != -1; v = parent[v])
        result.path.points.push_back(graph.vertices[v]);
    std::reverse(result.path.points.begin(), result.path.points.end());
    return result;
}

inline constexpr std::size_t kMinContourVertices = 8;

/// Weighted diameter of the MST of the largest component, as an open path.
inline Contour mst_max_path(const PixelGraph& graph)
{
    auto r = mst_max_path_detailed(graph);
    if (r.path.points.size() < kMinContourVertices)
        fail(ErrorKind::DegenerateContour, "max path has only " + std::to_string(r.path.points.size()) + " vertices");
    return std::move(r.path);
}

/// Rasterized closed curve through the path (endpoints joined by a straight segment).
inline std::vector<Pixel> rasterize_closed(std::span<const Pixel> points)
{
    std::vector<Pixel> curve;
    for (std::size_t i = 0; i < points.size(); ++i)
        detail::append_segment(points[i], points[(i + 1) % points.size()], curve);
    return curve;
}

/// Joins the path endpoints, rasterizes the closed curve and fills its
/// interior. Result = curve plus every pixel not 4-reachable from the frame
/// border without crossing the curve.
inline BinaryMask close_and_fill(const Contour& path, int height, int width)
{
    if (path.points.size() < kMinContourVertices)
        fail(ErrorKind::DegenerateContour, "contour has only " + std::to_string(path.points.size()) + " vertices");
    const auto curve = rasterize_closed(path.points);
    BinaryMask on_curve(height, width, 0);
    for (auto p : curve) {
        if (!on_curve.contains(p))
            fail(ErrorKind::OpenRegion, "closed contour leaves the frame");
        on_curve[p] = 1;
    }

    BinaryMask exterior(height, width, 0);
    std::deque<Pixel> queue;
    auto seed = [&](int y, int x) {
        if (!on_curve(y, x) && !exterior(y, x)) {
            exterior(y, x) = 1;
            queue.push_back({y, x});
        }
    };
    for (int x = 0; x < width; ++x) {
        seed(0, x);
        seed(height - 1, x);
    }
    for (int y = 0; y < height; ++y) {
        seed(y, 0);
        seed(y, width - 1);
    }
    constexpr std::array<int, 4> dy{-1, 1, 0, 0};
    constexpr std::array<int, 4> dx{0, 0, -1, 1};
    while (!queue.empty()) {
        const Pixel p = queue.front();
        queue.pop_front();
        for (int k = 0; k < 4; ++k) {
            const int y = p.y + dy[k], x = p.x + dx[k];
            if (exterior.contains(y, x))
                seed(y, x);
        }
    }

    BinaryMask mask(height, width, 0);
    std::size_t interior = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const bool inside = !exterior.values()[i];
        mask.values()[i] = inside ? 1 : 0;
        interior += inside && !on_curve.values()[i];
    }
    if (interior == 0)
        fail(ErrorKind::OpenRegion, "closed contour encloses no interior pixels");

    // Diagonal curve steps whose corners both lie outside get a bridge pixel,
    // so the mask stays 4-connected even where the curve folds back on itself.
    for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
        const Pixel a = curve[i], b = curve[i + 1];
        if (a.y != b.y && a.x != b.x && !mask(a.y, b.x) && !mask(b.y, a.x))
            mask(a.y, b.x) = 1;
    }
    return mask;
}

inline BinaryMask brn_segment_pixels(std::span<const Pixel> above, int height, int width, const BrnOptions& opt)
{
    const auto skeleton = thin(above);
    auto result = mst_max_path_detailed(build_graph(skeleton, opt.link_radius));
    const double fraction = static_cast<double>(result.component_size) / static_cast<double>(skeleton.size());
    if (fraction < opt.min_component_fraction && opt.fallback_radius > opt.link_radius)
        result = mst_max_path_detailed(build_graph(skeleton, opt.fallback_radius));
    if (result.path.points.size() < kMinContourVertices)
        fail(ErrorKind::DegenerateContour,
             "max path has only " + std::to_string(result.path.points.size()) + " vertices");
    return close_and_fill(result.path, height, width);
}

/// Threshold, thin, link, take the MST's longest path, close it and fill.
inline BinaryMask brn_segment(const Grid<float>& dmap, const BrnOptions& opt = {})
{
    const auto above = binarize(dmap, opt.tau);
    return brn_segment_pixels(above, dmap.height(), dmap.width(), opt);
}

/// One "y x" pair per line; the closing edge is implied.
inline std::string format_contour(const Contour& c)
{
    std::string out;
    for (auto p : c.points)
        out += std::to_string(p.y) + " " + std::to_string(p.x) + "\n";
    return out;
}

inline Contour parse_contour(const std::string& text)
{
    Contour c;
    c.closed = true;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        std::istringstream ls(line);
        Pixel p;
        std::string extra;
        if (!(ls >> p.y >> p.x) || (ls >> extra))
            fail(ErrorKind::MalformedHeader, "contour line is not a 'y x' pair: " + line);
        c.points.push_back(p);
    }
    return c;
}

inline void write_contour(const std::filesystem::path& path, const Contour& c)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::IoFailure, "cannot open " + path.string() + " for writing");
    out << format_contour(c);
    if (!out)
        fail(ErrorKind::IoFailure, "write error on " + path.string());
}

inline Contour read_contour(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::IoFailure, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_contour(ss.str());
}

} // namespace bdrseg
