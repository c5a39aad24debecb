#pragma once

// Exhaustive minimum spanning tree and random graph generation, shared by the
// contour tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include <bdrseg/contour.hpp>

namespace oracle {

using WeightedEdges = std::vector<std::tuple<int, int, double>>;

/// Vertex i sits at pixel (0, i); edges keep their given weights.
inline bdrseg::PixelGraph abstract_graph(int n, const WeightedEdges& edges)
{
    bdrseg::PixelGraph g;
    for (int i = 0; i < n; ++i)
        g.vertices.push_back({0, i});
    for (auto [u, v, w] : edges)
        g.edges.push_back({std::min(u, v), std::max(u, v), w});
    return g;
}

/// Connected graph on n vertices: a random tree plus up to `extra` distinct
/// further edges, weights U(0.1, 10).
inline WeightedEdges random_connected_graph(std::mt19937_64& rng, int n, int extra)
{
    std::uniform_real_distribution<double> w(0.1, 10.0);
    std::set<std::pair<int, int>> used;
    WeightedEdges edges;
    for (int v = 1; v < n; ++v) {
        const int u = std::uniform_int_distribution<int>(0, v - 1)(rng);
        used.insert({u, v});
        edges.push_back({u, v, w(rng)});
    }
    extra = std::min(n * (n - 1) / 2 - (n - 1), extra);
    std::uniform_int_distribution<int> vd(0, n - 1);
    while (static_cast<int>(edges.size()) < n - 1 + extra) {
        int a = vd(rng), b = vd(rng);
        if (a == b)
            continue;
        if (a > b)
            std::swap(a, b);
        if (used.insert({a, b}).second)
            edges.push_back({a, b, w(rng)});
    }
    return edges;
}

/// Minimum spanning tree weight by trying every (n-1)-edge subset.
inline double exhaustive_mst(int n, const WeightedEdges& edges)
{
    const int m = static_cast<int>(edges.size());
    double best = INFINITY;
    std::vector<int> pick(static_cast<std::size_t>(std::max(n - 1, 0)));
    std::vector<int> parent(static_cast<std::size_t>(n));
    std::function<int(int)> root = [&](int v) { return parent[v] == v ? v : parent[v] = root(parent[v]); };
    std::function<void(int, int, double)> rec = [&](int start, int depth, double w) {
        if (depth == n - 1) {
            std::iota(parent.begin(), parent.end(), 0);
            for (int e : pick) {
                const int a = root(std::get<0>(edges[e])), b = root(std::get<1>(edges[e]));
                if (a == b)
                    return;
                parent[a] = b;
            }
            best = std::min(best, w);
            return;
        }
        for (int e = start; e <= m - (n - 1 - depth); ++e) {
            pick[depth] = e;
            rec(e + 1, depth + 1, w + std::get<2>(edges[e]));
        }
    };
    rec(0, 0, 0.0);
    return best;
}

} // namespace oracle
