#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ops.hpp"
#include "tensor.hpp"

namespace bdrseg::nn {

template <typename Real>
struct NamedParam {
    std::string name;
    Tensor4<Real>* tensor = nullptr;
};

/// A differentiable stage. `forward` caches whatever `backward` needs, so a
/// layer instance serves one forward/backward pair at a time.
template <typename Real>
class Layer {
public:
    virtual ~Layer() = default;

    virtual Tensor4<Real> forward(const Tensor4<Real>& x) = 0;
    /// Consumes dL/dy, accumulates parameter gradients, returns dL/dx.
    virtual Tensor4<Real> backward(const Tensor4<Real>& dy) = 0;
    virtual std::vector<NamedParam<Real>> parameters() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
    virtual std::string kind() const = 0;
    virtual Shape4 output_shape(const Shape4& in) const = 0;

    void set_need_input_grad(bool need) noexcept { need_input_grad_ = need; }

protected:
    bool need_input_grad_ = true;
};

/// Weight initialization schemes. Both are uniform on (-a, a):
/// ScaledUniform a = sqrt(6 / (fan_in + fan_out)); ReluUniform a = sqrt(6 / fan_in),
/// which keeps activation variance roughly constant through ReLU stacks.
enum class Init { ScaledUniform, ReluUniform };

template <typename Real, typename Rng>
void init_scaled_uniform(Tensor4<Real>& w, int fan_in, int fan_out, Rng& rng, Init scheme = Init::ScaledUniform)
{
    const double a = scheme == Init::ReluUniform ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                                 : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& v : w.data())
        v = static_cast<Real>(dist(rng));
}

template <typename Real>
class Conv2d final : public Layer<Real> {
public:
    explicit Conv2d(const ConvSpec& spec) : spec_(spec), weight_(spec.weight_shape()), bias_(spec.bias_shape()) {}

    template <typename Rng>
    Conv2d(const ConvSpec& spec, Rng& rng, Init scheme = Init::ScaledUniform) : Conv2d(spec)
    {
        const int k = spec.kernel_h * spec.kernel_w;
        init_scaled_uniform(weight_, spec.in_channels * k, spec.out_channels * k, rng, scheme);
    }

    Tensor4<Real> forward(const Tensor4<Real>& x) override
    {
        input_ = x;
        return conv2d(x, spec_, weight_, bias_);
    }
    Tensor4<Real> backward(const Tensor4<Real>& dy) override
    {
        return conv2d_backward(input_, spec_, weight_, bias_, dy, this->need_input_grad_);
    }
    std::vector<NamedParam<Real>> parameters() override { return {{"weight", &weight_}, {"bias", &bias_}}; }
    std::unique_ptr<Layer<Real>> clone() const override { return std::make_unique<Conv2d>(*this); }
    std::string kind() const override { return "conv2d"; }
    Shape4 output_shape(const Shape4& in) const override
    {
        return {in.n, spec_.out_channels, spec_.output_h(in.h), spec_.output_w(in.w)};
    }

    const ConvSpec& spec() const noexcept { return spec_; }
    Tensor4<Real>& weight() noexcept { return weight_; }
    Tensor4<Real>& bias() noexcept { return bias_; }

private:
    ConvSpec spec_;
    Tensor4<Real> weight_;
    Tensor4<Real> bias_;
    Tensor4<Real> input_;
};

template <typename Real>
class TransposedConv2d final : public Layer<Real> {
public:
    explicit TransposedConv2d(const DeconvSpec& spec)
        : spec_(spec), weight_(spec.weight_shape()), bias_(spec.bias_shape())
    {
    }

    template <typename Rng>
    TransposedConv2d(const DeconvSpec& spec, Rng& rng, Init scheme = Init::ScaledUniform) : TransposedConv2d(spec)
    {
        const int k = spec.kernel_h * spec.kernel_w;
        if (scheme == Init::ReluUniform) {
            // each output pixel sees k / stride taps per axis
            const int taps = std::max(1, spec.kernel_h / spec.stride) * std::max(1, spec.kernel_w / spec.stride);
            init_scaled_uniform(weight_, spec.in_channels * taps, spec.out_channels * k, rng, scheme);
        } else {
            init_scaled_uniform(weight_, spec.in_channels * k, spec.out_channels * k, rng, scheme);
        }
    }

    Tensor4<Real> forward(const Tensor4<Real>& x) override
    {
        input_ = x;
        return transposed_conv2d(x, spec_, weight_, bias_);
    }
    Tensor4<Real> backward(const Tensor4<Real>& dy) override
    {
        return transposed_conv2d_backward(input_, spec_, weight_, bias_, dy, this->need_input_grad_);
    }
    std::vector<NamedParam<Real>> parameters() override { return {{"weight", &weight_}, {"bias", &bias_}}; }
    std::unique_ptr<Layer<Real>> clone() const override { return std::make_unique<TransposedConv2d>(*this); }
    std::string kind() const override { return "transposed_conv2d"; }
    Shape4 output_shape(const Shape4& in) const override
    {
        return {in.n, spec_.out_channels, spec_.output_h(in.h), spec_.output_w(in.w)};
    }

    const DeconvSpec& spec() const noexcept { return spec_; }
    Tensor4<Real>& weight() noexcept { return weight_; }
    Tensor4<Real>& bias() noexcept { return bias_; }

private:
    DeconvSpec spec_;
    Tensor4<Real> weight_;
    Tensor4<Real> bias_;
    Tensor4<Real> input_;
};

template <typename Real>
class ReLU final : public Layer<Real> {
public:
    Tensor4<Real> forward(const Tensor4<Real>& x) override
    {
        input_ = x;
        return relu(x);
    }
    Tensor4<Real> backward(const Tensor4<Real>& dy) override { return relu_backward(input_, dy); }
    std::unique_ptr<Layer<Real>> clone() const override { return std::make_unique<ReLU>(*this); }
    std::string kind() const override { return "relu"; }
    Shape4 output_shape(const Shape4& in) const override { return in; }

private:
    Tensor4<Real> input_;
};

template <typename Real>
class MaxPool2d final : public Layer<Real> {
public:
    explicit MaxPool2d(const PoolSpec& spec) : spec_(spec) {}

    Tensor4<Real> forward(const Tensor4<Real>& x) override
    {
        input_shape_ = x.shape();
        auto r = maxpool2d_with_indices(x, spec_);
        argmax_ = std::move(r.argmax);
        return std::move(r.out);
    }
    Tensor4<Real> backward(const Tensor4<Real>& dy) override
    {
        return maxpool2d_backward(input_shape_, argmax_, dy);
    }
    std::unique_ptr<Layer<Real>> clone() const override { return std::make_unique<MaxPool2d>(*this); }
    std::string kind() const override { return "maxpool2d"; }
    Shape4 output_shape(const Shape4& in) const override
    {
        return {in.n, in.c, spec_.output_extent(in.h), spec_.output_extent(in.w)};
    }

private:
    PoolSpec spec_;
    Shape4 input_shape_{};
    std::vector<std::uint32_t> argmax_;
};

template <typename Real>
class CenterCrop final : public Layer<Real> {
public:
    CenterCrop(int out_h, int out_w) : out_h_(out_h), out_w_(out_w) {}

    Tensor4<Real> forward(const Tensor4<Real>& x) override
    {
        input_shape_ = x.shape();
        if (x.h() == out_h_ && x.w() == out_w_)
            return x;
        return center_crop(x, out_h_, out_w_);
    }
    Tensor4<Real> backward(const Tensor4<Real>& dy) override
    {
        if (input_shape_ == dy.shape())
            return dy;
        return center_crop_backward(input_shape_, dy);
    }
    std::unique_ptr<Layer<Real>> clone() const override { return std::make_unique<CenterCrop>(*this); }
    std::string kind() const override { return "center_crop"; }
    Shape4 output_shape(const Shape4& in) const override { return {in.n, in.c, out_h_, out_w_}; }

private:
    int out_h_;
    int out_w_;
    Shape4 input_shape_{};
};

/// Ordered chain of layers. Copies are deep.
template <typename Real>
class Sequential {
public:
    Sequential() = default;
    Sequential(const Sequential& other) { *this = other; }
    Sequential& operator=(const Sequential& other)
    {
        if (this != &other) {
            layers_.clear();
            for (const auto& l : other.layers_)
                layers_.push_back(l->clone());
        }
        return *this;
    }
    Sequential(Sequential&&) noexcept = default;
    Sequential& operator=(Sequential&&) noexcept = default;

    template <typename L>
    L& add(L layer)
    {
        auto owned = std::make_unique<L>(std::move(layer));
        L& ref = *owned;
        layers_.push_back(std::move(owned));
        return ref;
    }

    Tensor4<Real> forward(const Tensor4<Real>& x)
    {
        Tensor4<Real> h = x;
        for (auto& l : layers_)
            h = l->forward(h);
        return h;
    }

    Tensor4<Real> backward(const Tensor4<Real>& dy)
    {
        Tensor4<Real> g = dy;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
            g = (*it)->backward(g);
        return g;
    }

    /// Parameters named "<layer index>.<weight|bias>".
    std::vector<NamedParam<Real>> parameters()
    {
        std::vector<NamedParam<Real>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (auto& p : layers_[i]->parameters())
                out.push_back({std::to_string(i) + "." + p.name, p.tensor});
        return out;
    }

    Shape4 output_shape(Shape4 in) const
    {
        for (const auto& l : layers_)
            in = l->output_shape(in);
        return in;
    }

    /// The first layer's input is raw data; skip computing its gradient.
    void set_input_grad(bool need)
    {
        if (!layers_.empty())
            layers_.front()->set_need_input_grad(need);
    }

    std::size_t size() const noexcept { return layers_.size(); }
    Layer<Real>& layer(std::size_t i) { return *layers_[i]; }

private:
    std::vector<std::unique_ptr<Layer<Real>>> layers_;
};

} // namespace bdrseg::nn
