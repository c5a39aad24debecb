#pragma once

// Finite-difference check of the whole pipeline at a tiny size, shared by the
// unit tests and the acceptance binary.

#include <random>
#include <span>
#include <vector>

#include <bdrseg/models.hpp>
#include <bdrseg/nn/gradcheck.hpp>

namespace check {

inline bdrseg::PipelineConfig tiny_config(bool mirrored = false)
{
    bdrseg::PipelineConfig c;
    c.input_h = c.input_w = 16;
    c.encoder.widths = {4, 4, 4, 4, 4};
    c.head.projection = {4};
    c.head.deconv_widths = {4, 4, 4};
    c.classifier.widths = {3, 3};
    c.classifier.mirrored = mirrored;
    return c;
}

/// Combined loss of a 16x16 pipeline against a random target map and a fixed
/// square mask, checked for every parameter tensor and the input image.
/// Biases are redrawn from U(-0.2, 0.2).
inline bdrseg::nn::GradCheckReport tiny_pipeline_gradcheck(std::uint64_t seed, double lambda,
                                                           bool mirrored = false)
{
    using namespace bdrseg;
    using namespace bdrseg::nn;
    Pipeline<double> p(tiny_config(mirrored), seed);
    p.set_input_grad(true);
    std::mt19937_64 rng(seed + 100);
    std::uniform_real_distribution<double> bias(-0.2, 0.2);
    for (auto& q : p.parameters())
        if (q.name.ends_with("bias"))
            for (auto& v : q.tensor->data())
                v = bias(rng);

    Tensor4<double> x(1, 3, 16, 16), target(1, 1, 16, 16);
    fill_uniform(x, 0.0, 1.0, rng);
    fill_uniform(target, 0.0, 1.0, rng);
    BinaryMask mask(16, 16, 0);
    for (int y = 4; y < 12; ++y)
        for (int xx = 3; xx < 11; ++xx)
            mask(y, xx) = 1;
    std::span<const BinaryMask> masks(&mask, 1);

    auto objective = [&] {
        auto o = p.forward(x);
        return combined_loss(o.dmap, target, o.logits, masks, lambda).value;
    };
    p.zero_grad();
    auto o = p.forward(x);
    auto loss = combined_loss(o.dmap, target, o.logits, masks, lambda);
    auto dx = p.backward(loss.d_dmap, loss.d_logits);

    auto params = p.parameters();
    std::vector<std::vector<double>> analytic;
    analytic.emplace_back(dx.data().begin(), dx.data().end());
    for (auto& q : params)
        analytic.emplace_back(q.tensor->grad().begin(), q.tensor->grad().end());
    std::vector<GradProbe> probes{{"input", x.data(), analytic[0]}};
    for (std::size_t i = 0; i < params.size(); ++i)
        probes.push_back({params[i].name, params[i].tensor->data(), analytic[i + 1]});
    // products under 1e-4 are held to an absolute 1e-9
    return check_gradients(objective, std::span<const GradProbe>(probes), 1e-6, 1e-5, 12, seed, 1e-4);
}

} // namespace check
