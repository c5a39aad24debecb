#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "layers.hpp"
#include "tensor.hpp"

namespace bdrseg::nn {

/// One differentiable quantity probed by the checker: its current values and
/// the analytic gradient of the scalar objective with respect to them.
struct GradProbe {
    std::string name;
    std::span<double> values;
    std::span<const double> analytic;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_probe;
    std::size_t evaluations = 0;
    bool passed = true;
};

/// Compares analytic gradients with central-difference Jacobian-vector
/// products along `directions` random directions per probe. The error of one
/// product is |analytic - numeric| / max(|analytic|, |numeric|, abs_floor), so
/// products below `abs_floor` are held to an absolute error of
/// tolerance * abs_floor instead.
/// `objective` must recompute the scalar from the current probe values.
template <typename Objective>
GradCheckReport check_gradients(Objective&& objective, std::span<const GradProbe> probes, double step,
                                double tolerance, int directions = 12, std::uint64_t seed = 7,
                                double abs_floor = 1e-9)
{
    GradCheckReport report;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (const auto& probe : probes) {
        std::vector<double> saved(probe.values.begin(), probe.values.end());
        std::vector<double> dir(saved.size());
        for (int d = 0; d < directions; ++d) {
            for (auto& v : dir)
                v = dist(rng);
            double analytic = 0.0;
            for (std::size_t i = 0; i < dir.size(); ++i) {
                analytic += probe.analytic[i] * dir[i];
                probe.values[i] = saved[i] + step * dir[i];
            }
            const double plus = objective();
            for (std::size_t i = 0; i < dir.size(); ++i)
                probe.values[i] = saved[i] - step * dir[i];
            const double minus = objective();
            std::copy(saved.begin(), saved.end(), probe.values.begin());
            report.evaluations += 2;
            const double numeric = (plus - minus) / (2.0 * step);
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), abs_floor});
            if (!(rel <= report.max_rel_error)) {
                report.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
                report.worst_probe = probe.name;
            }
        }
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

/// Checks one layer: objective = <layer(x), r> for a fixed random projection r.
/// Input values are drawn from U(-1, 1) and pushed at least `kink_margin` away
/// from zero so ReLU kinks are not straddled by the finite difference.
inline GradCheckReport grad_check_layer(Layer<double>& layer, const Shape4& input_shape, double step,
                                        double tolerance, std::uint64_t seed = 1, double kink_margin = 1e-3)
{
    std::mt19937_64 rng(seed);
    Tensor4<double> x(input_shape);
    fill_uniform(x, -1.0, 1.0, rng);
    for (auto& v : x.data())
        if (std::abs(v) < kink_margin)
            v = v < 0 ? v - kink_margin : v + kink_margin;
    Tensor4<double> r(layer.output_shape(input_shape));
    fill_uniform(r, -1.0, 1.0, rng);

    auto params = layer.parameters();
    for (auto& p : params)
        p.tensor->zero_grad();
    layer.set_need_input_grad(true);
    layer.forward(x);
    Tensor4<double> dx = layer.backward(r);

    std::vector<std::vector<double>> analytic;
    std::vector<GradProbe> probes;
    analytic.emplace_back(dx.data().begin(), dx.data().end());
    for (auto& p : params)
        analytic.emplace_back(p.tensor->grad().begin(), p.tensor->grad().end());
    probes.push_back({"input", x.data(), analytic[0]});
    for (std::size_t i = 0; i < params.size(); ++i)
        probes.push_back({params[i].name, params[i].tensor->data(), analytic[i + 1]});

    auto objective = [&] { return dot(layer.forward(x), r); };
    return check_gradients(objective, probes, step, tolerance, 12, seed + 1);
}

} // namespace bdrseg::nn
