#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "../grid.hpp"
#include "kernels.hpp"
#include "tensor.hpp"

namespace bdrseg::nn {

struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_h = 3;
    int kernel_w = 3;
    int stride = 1;
    int padding = 0;
    int dilation = 1;

    /// floor((in + 2p - d(k-1) - 1)/s) + 1
    int output_extent(int in, int kernel) const noexcept
    {
        const int span = in + 2 * padding - dilation * (kernel - 1) - 1;
        if (span < 0)
            return 0;
        return span / stride + 1;
    }
    int output_h(int in) const noexcept { return output_extent(in, kernel_h); }
    int output_w(int in) const noexcept { return output_extent(in, kernel_w); }
    Shape4 weight_shape() const noexcept { return {out_channels, in_channels, kernel_h, kernel_w}; }
    Shape4 bias_shape() const noexcept { return {1, out_channels, 1, 1}; }
};

struct DeconvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel_h = 4;
    int kernel_w = 4;
    int stride = 2;
    int padding = 1;

    /// (in - 1)s - 2p + k
    int output_h(int in) const noexcept { return (in - 1) * stride - 2 * padding + kernel_h; }
    int output_w(int in) const noexcept { return (in - 1) * stride - 2 * padding + kernel_w; }
    /// Same layout as the weights of the forward convolution it is the adjoint of.
    Shape4 weight_shape() const noexcept { return {in_channels, out_channels, kernel_h, kernel_w}; }
    Shape4 bias_shape() const noexcept { return {1, out_channels, 1, 1}; }
};

namespace detail {

inline void check_spec_positive(int stride, int kernel_h, int kernel_w, int padding, int dilation)
{
    if (stride < 1 || kernel_h < 1 || kernel_w < 1 || padding < 0 || dilation < 1)
        fail(ErrorKind::ShapeMismatch, "convolution geometry parameters out of range");
}

inline kernels::PatchGeometry conv_geometry(const ConvSpec& s, int in_h, int in_w)
{
    return {s.in_channels, in_h,      in_w,       s.kernel_h, s.kernel_w, s.stride,
            s.padding,     s.dilation, s.output_h(in_h), s.output_w(in_w)};
}

/// The transposed convolution's output plane read back by the matching forward convolution.
inline kernels::PatchGeometry deconv_geometry(const DeconvSpec& s, int in_h, int in_w)
{
    return {s.out_channels, s.output_h(in_h), s.output_w(in_w), s.kernel_h, s.kernel_w, s.stride,
            s.padding,      1,                in_h,             in_w};
}

template <typename Real>
void check_conv_inputs(const Tensor4<Real>& x, const ConvSpec& spec, const Tensor4<Real>& weights,
                       const Tensor4<Real>& bias)
{
    check_spec_positive(spec.stride, spec.kernel_h, spec.kernel_w, spec.padding, spec.dilation);
    if (x.c() != spec.in_channels)
        fail(ErrorKind::ShapeMismatch, "conv2d: input has " + std::to_string(x.c()) + " channels, spec expects " +
                                           std::to_string(spec.in_channels));
    require_shape(weights, spec.weight_shape(), "conv2d weights");
    require_shape(bias, spec.bias_shape(), "conv2d bias");
    if (spec.output_h(x.h()) < 1 || spec.output_w(x.w()) < 1)
        fail(ErrorKind::ShapeMismatch, "conv2d: output extent < 1 for input " + to_string(x.shape()));
}

template <typename Real>
void check_deconv_inputs(const Tensor4<Real>& x, const DeconvSpec& spec, const Tensor4<Real>& weights,
                         const Tensor4<Real>& bias)
{
    check_spec_positive(spec.stride, spec.kernel_h, spec.kernel_w, spec.padding, 1);
    if (x.c() != spec.in_channels)
        fail(ErrorKind::ShapeMismatch, "transposed_conv2d: input has " + std::to_string(x.c()) +
                                           " channels, spec expects " + std::to_string(spec.in_channels));
    require_shape(weights, spec.weight_shape(), "transposed_conv2d weights");
    require_shape(bias, spec.bias_shape(), "transposed_conv2d bias");
    if (spec.output_h(x.h()) < 1 || spec.output_w(x.w()) < 1)
        fail(ErrorKind::ShapeMismatch, "transposed_conv2d: output extent < 1 for input " + to_string(x.shape()));
}

template <typename Real>
void add_bias(std::span<Real> out, std::span<const Real> bias, std::size_t plane)
{
    for (std::size_t c = 0; c < bias.size(); ++c) {
        const Real b = bias[c];
        Real* p = out.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i)
            p[i] += b;
    }
}

template <typename Real>
void accumulate_bias_grad(std::span<const Real> dy, std::span<Real> dbias, std::size_t plane)
{
    for (std::size_t c = 0; c < dbias.size(); ++c) {
        const Real* p = dy.data() + c * plane;
        Real s = Real(0);
        for (std::size_t i = 0; i < plane; ++i)
            s += p[i];
        dbias[c] += s;
    }
}

} // namespace detail

/// Dilated, strided cross-correlation.
template <typename Real>
Tensor4<Real> conv2d(const Tensor4<Real>& x, const ConvSpec& spec, const Tensor4<Real>& weights,
                     const Tensor4<Real>& bias)
{
    detail::check_conv_inputs(x, spec, weights, bias);
    const auto g = detail::conv_geometry(spec, x.h(), x.w());
    Tensor4<Real> y(x.n(), spec.out_channels, g.out_h, g.out_w);
    std::vector<Real> col(g.rows() * g.cols());
    for (int i = 0; i < x.n(); ++i) {
        kernels::im2col(g, x.sample(i).data(), col.data());
        auto out = y.sample(i);
        kernels::gemm_nn(static_cast<std::size_t>(spec.out_channels), g.cols(), g.rows(), weights.data().data(),
                         col.data(), out.data());
        detail::add_bias(out, bias.data(), g.cols());
    }
    return y;
}

/// Accumulates dL/dW and dL/db into the gradient buffers of `weights` and
/// `bias`; returns dL/dx (empty tensor when `need_input_grad` is false).
template <typename Real>
Tensor4<Real> conv2d_backward(const Tensor4<Real>& x, const ConvSpec& spec, Tensor4<Real>& weights,
                              Tensor4<Real>& bias, const Tensor4<Real>& dy, bool need_input_grad = true)
{
    detail::check_conv_inputs(x, spec, weights, bias);
    const auto g = detail::conv_geometry(spec, x.h(), x.w());
    require_shape(dy, Shape4{x.n(), spec.out_channels, g.out_h, g.out_w}, "conv2d_backward dy");

    auto dw = weights.grad();
    auto db = bias.grad();
    Tensor4<Real> dx;
    if (need_input_grad)
        dx = Tensor4<Real>(x.shape());
    std::vector<Real> col(g.rows() * g.cols());
    std::vector<Real> scratch;
    const auto co = static_cast<std::size_t>(spec.out_channels);
    for (int i = 0; i < x.n(); ++i) {
        const auto dyi = dy.sample(i);
        kernels::im2col(g, x.sample(i).data(), col.data());
        kernels::gemm_nt(co, g.rows(), g.cols(), dyi.data(), col.data(), dw.data(), scratch);
        detail::accumulate_bias_grad(dyi, db, g.cols());
        if (need_input_grad) {
            std::fill(col.begin(), col.end(), Real(0));
            kernels::gemm_tn(g.rows(), g.cols(), co, weights.data().data(), dyi.data(), col.data());
            kernels::col2im(g, col.data(), dx.sample(i).data());
        }
    }
    return dx;
}

/// Transposed convolution (adjoint of conv2d with the same geometry), plus bias.
template <typename Real>
Tensor4<Real> transposed_conv2d(const Tensor4<Real>& x, const DeconvSpec& spec, const Tensor4<Real>& weights,
                                const Tensor4<Real>& bias)
{
    detail::check_deconv_inputs(x, spec, weights, bias);
    const auto g = detail::deconv_geometry(spec, x.h(), x.w());
    Tensor4<Real> y(x.n(), spec.out_channels, g.in_h, g.in_w);
    std::vector<Real> col(g.rows() * g.cols());
    const auto ci = static_cast<std::size_t>(spec.in_channels);
    for (int i = 0; i < x.n(); ++i) {
        std::fill(col.begin(), col.end(), Real(0));
        kernels::gemm_tn(g.rows(), g.cols(), ci, weights.data().data(), x.sample(i).data(), col.data());
        auto out = y.sample(i);
        kernels::col2im(g, col.data(), out.data());
        detail::add_bias(out, bias.data(), static_cast<std::size_t>(g.in_h) * g.in_w);
    }
    return y;
}

template <typename Real>
Tensor4<Real> transposed_conv2d_backward(const Tensor4<Real>& x, const DeconvSpec& spec, Tensor4<Real>& weights,
                                         Tensor4<Real>& bias, const Tensor4<Real>& dy, bool need_input_grad = true)
{
    detail::check_deconv_inputs(x, spec, weights, bias);
    const auto g = detail::deconv_geometry(spec, x.h(), x.w());
    require_shape(dy, Shape4{x.n(), spec.out_channels, g.in_h, g.in_w}, "transposed_conv2d_backward dy");

    auto dw = weights.grad();
    auto db = bias.grad();
    Tensor4<Real> dx;
    if (need_input_grad)
        dx = Tensor4<Real>(x.shape());
    std::vector<Real> col(g.rows() * g.cols());
    std::vector<Real> scratch;
    const auto ci = static_cast<std::size_t>(spec.in_channels);
    for (int i = 0; i < x.n(); ++i) {
        const auto dyi = dy.sample(i);
        kernels::im2col(g, dyi.data(), col.data());
        kernels::gemm_nt(ci, g.rows(), g.cols(), x.sample(i).data(), col.data(), dw.data(), scratch);
        detail::accumulate_bias_grad(dyi, db, static_cast<std::size_t>(g.in_h) * g.in_w);
        if (need_input_grad)
            kernels::gemm_nn(ci, g.cols(), g.rows(), weights.data().data(), col.data(), dx.sample(i).data());
    }
    return dx;
}

template <typename Real>
Tensor4<Real> relu(const Tensor4<Real>& x)
{
    Tensor4<Real> y(x.shape());
    auto in = x.data();
    auto out = y.data();
    for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = in[i] > Real(0) ? in[i] : Real(0);
    return y;
}

/// Subgradient at exactly 0 is 0.
template <typename Real>
Tensor4<Real> relu_backward(const Tensor4<Real>& x, const Tensor4<Real>& dy)
{
    require_shape(dy, x.shape(), "relu_backward dy");
    Tensor4<Real> dx(x.shape());
    auto in = x.data();
    auto g = dy.data();
    auto out = dx.data();
    for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = in[i] > Real(0) ? g[i] : Real(0);
    return dx;
}

struct PoolSpec {
    int window = 2;
    int stride = 2;
    int padding = 0;

    int output_extent(int in) const noexcept
    {
        const int span = in + 2 * padding - window;
        return span < 0 ? 0 : span / stride + 1;
    }
};

template <typename Real>
struct PoolResult {
    Tensor4<Real> out;
    /// Flat input offset that produced each output element.
    std::vector<std::uint32_t> argmax;
};

/// Max pooling; padded taps never win. Ties go to the first tap in row-major window order.
template <typename Real>
PoolResult<Real> maxpool2d_with_indices(const Tensor4<Real>& x, const PoolSpec& spec)
{
    if (spec.window < 1 || spec.stride < 1 || spec.padding < 0 || spec.padding >= spec.window)
        fail(ErrorKind::ShapeMismatch, "maxpool2d: invalid window/stride/padding");
    if (spec.window > x.h() + 2 * spec.padding || spec.window > x.w() + 2 * spec.padding)
        fail(ErrorKind::ShapeMismatch, "maxpool2d: window larger than input " + to_string(x.shape()));
    const int oh = spec.output_extent(x.h());
    const int ow = spec.output_extent(x.w());
    PoolResult<Real> r{Tensor4<Real>(x.n(), x.c(), oh, ow), {}};
    r.argmax.resize(r.out.size());
    std::size_t o = 0;
    for (int n = 0; n < x.n(); ++n) {
        for (int c = 0; c < x.c(); ++c) {
            for (int oy = 0; oy < oh; ++oy) {
                const int y0 = oy * spec.stride - spec.padding;
                for (int ox = 0; ox < ow; ++ox, ++o) {
                    const int x0 = ox * spec.stride - spec.padding;
                    Real best = -std::numeric_limits<Real>::infinity();
                    std::size_t best_at = 0;
                    bool found = false;
                    for (int ky = 0; ky < spec.window; ++ky) {
                        const int iy = y0 + ky;
                        if (iy < 0 || iy >= x.h())
                            continue;
                        for (int kx = 0; kx < spec.window; ++kx) {
                            const int ix = x0 + kx;
                            if (ix < 0 || ix >= x.w())
                                continue;
                            const std::size_t at = x.offset(n, c, iy, ix);
                            const Real v = x.data()[at];
                            if (!found || v > best) {
                                best = v;
                                best_at = at;
                                found = true;
                            }
                        }
                    }
                    r.out.data()[o] = best;
                    r.argmax[o] = static_cast<std::uint32_t>(best_at);
                }
            }
        }
    }
    return r;
}

template <typename Real>
Tensor4<Real> maxpool2d(const Tensor4<Real>& x, int window, int stride, int padding = 0)
{
    return maxpool2d_with_indices(x, PoolSpec{window, stride, padding}).out;
}

template <typename Real>
Tensor4<Real> maxpool2d_backward(const Shape4& input_shape, std::span<const std::uint32_t> argmax,
                                 const Tensor4<Real>& dy)
{
    if (argmax.size() != dy.size())
        fail(ErrorKind::ShapeMismatch, "maxpool2d_backward: index/gradient size mismatch");
    Tensor4<Real> dx(input_shape);
    auto out = dx.data();
    auto g = dy.data();
    for (std::size_t i = 0; i < g.size(); ++i)
        out[argmax[i]] += g[i];
    return dx;
}

/// Centered spatial crop; offsets are floor((in - out)/2).
template <typename Real>
Tensor4<Real> center_crop(const Tensor4<Real>& x, int out_h, int out_w)
{
    if (out_h > x.h() || out_w > x.w() || out_h < 1 || out_w < 1)
        fail(ErrorKind::ShapeMismatch, "center_crop: cannot crop " + to_string(x.shape()) + " to " +
                                           std::to_string(out_h) + "x" + std::to_string(out_w));
    const int top = (x.h() - out_h) / 2;
    const int left = (x.w() - out_w) / 2;
    Tensor4<Real> y(x.n(), x.c(), out_h, out_w);
    for (int n = 0; n < x.n(); ++n)
        for (int c = 0; c < x.c(); ++c)
            for (int yy = 0; yy < out_h; ++yy)
                for (int xx = 0; xx < out_w; ++xx)
                    y.at(n, c, yy, xx) = x.at(n, c, yy + top, xx + left);
    return y;
}

template <typename Real>
Tensor4<Real> center_crop_backward(const Shape4& input_shape, const Tensor4<Real>& dy)
{
    const int top = (input_shape.h - dy.h()) / 2;
    const int left = (input_shape.w - dy.w()) / 2;
    Tensor4<Real> dx(input_shape);
    for (int n = 0; n < dy.n(); ++n)
        for (int c = 0; c < dy.c(); ++c)
            for (int yy = 0; yy < dy.h(); ++yy)
                for (int xx = 0; xx < dy.w(); ++xx)
                    dx.at(n, c, yy + top, xx + left) = dy.at(n, c, yy, xx);
    return dx;
}

template <typename Real>
struct LossValue {
    double value = 0.0;
    Tensor4<Real> grad;
};

/// Mean squared error over all elements; grad = 2 (pred - target) / count.
template <typename Real>
LossValue<Real> l2_loss(const Tensor4<Real>& pred, const Tensor4<Real>& target)
{
    require_shape(target, pred.shape(), "l2_loss target");
    LossValue<Real> r{0.0, Tensor4<Real>(pred.shape())};
    const auto count = static_cast<double>(pred.size());
    if (pred.size() == 0)
        return r;
    auto p = pred.data();
    auto t = target.data();
    auto g = r.grad.data();
    const Real scale = static_cast<Real>(2.0 / count);
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Real d = p[i] - t[i];
        sum += static_cast<double>(d) * static_cast<double>(d);
        g[i] = scale * d;
    }
    r.value = sum / count;
    return r;
}

/// Mean per-pixel two-class cross-entropy after a channel softmax.
/// `labels[i]` holds the {0,1} labels of sample i.
template <typename Real>
LossValue<Real> softmax_ce_loss(const Tensor4<Real>& logits, std::span<const BinaryMask> labels)
{
    if (logits.c() != 2)
        fail(ErrorKind::ShapeMismatch, "softmax_ce_loss: expected 2 logit channels, got " + std::to_string(logits.c()));
    if (labels.size() != static_cast<std::size_t>(logits.n()))
        fail(ErrorKind::ShapeMismatch, "softmax_ce_loss: batch size mismatch");
    for (const auto& m : labels)
        if (m.height() != logits.h() || m.width() != logits.w())
            fail(ErrorKind::ShapeMismatch, "softmax_ce_loss: label extent mismatch");

    LossValue<Real> r{0.0, Tensor4<Real>(logits.shape())};
    const std::size_t plane = logits.shape().plane();
    const double count = static_cast<double>(plane) * logits.n();
    if (count == 0)
        return r;
    const Real inv = static_cast<Real>(1.0 / count);
    double sum = 0.0;
    for (int n = 0; n < logits.n(); ++n) {
        auto s = logits.sample(n);
        auto g = r.grad.sample(n);
        auto lab = labels[static_cast<std::size_t>(n)].values();
        for (std::size_t i = 0; i < plane; ++i) {
            const std::uint8_t label = lab[i];
            if (label > 1)
                fail(ErrorKind::LabelOutOfRange, "softmax_ce_loss: label " + std::to_string(label));
            const Real l0 = s[i];
            const Real l1 = s[plane + i];
            const Real m = std::max(l0, l1);
            const Real e0 = std::exp(l0 - m);
            const Real e1 = std::exp(l1 - m);
            const Real z = e0 + e1;
            const Real lse = m + std::log(z);
            sum += static_cast<double>(lse - (label ? l1 : l0));
            const Real p0 = e0 / z;
            const Real p1 = e1 / z;
            g[i] = (p0 - (label == 0 ? Real(1) : Real(0))) * inv;
            g[plane + i] = (p1 - (label == 1 ? Real(1) : Real(0))) * inv;
        }
    }
    r.value = sum / count;
    return r;
}

} // namespace bdrseg::nn
