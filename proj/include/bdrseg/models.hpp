#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "grid.hpp"
#include "nn/layers.hpp"
#include "nn/ops.hpp"
#include "nn/tensor.hpp"

namespace bdrseg {

/// Feature extractor: one 3x3 conv + ReLU per block; the first three blocks
/// end in a stride-2 max pool (overall downsampling 8), later blocks are
/// atrous.
struct EncoderConfig {
    std::vector<int> widths{16, 32, 64, 64, 64};
    std::vector<int> dilations{1, 1, 1, 2, 4};
    int kernel = 3;

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Projection convs, three doubling deconvs (each + ReLU), then a linear 1x1 output.
struct HeadConfig {
    std::vector<int> projection{32};
    int projection_kernel = 3;
    std::vector<int> deconv_widths{32, 16, 8};
    int deconv_kernel = 4;
    /// Start the output 1x1 conv at zero instead of the seeded init.
    bool zero_output = false;

    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

/// Pixel classifier over the predicted distance map. `mirrored` swaps the
/// small full-resolution conv stack for a copy of encoder + head topology.
struct ClassifierConfig {
    std::vector<int> widths{8, 8};
    int kernel = 3;
    bool mirrored = false;

    friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

struct PipelineConfig {
    int input_h = 64;
    int input_w = 64;
    EncoderConfig encoder;
    HeadConfig head;
    ClassifierConfig classifier;
    std::string crop = "center";
    /// "relu_uniform" or "scaled_uniform"; see nn::Init.
    std::string init = "relu_uniform";

    friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

inline constexpr int kPooledBlocks = 3;
inline constexpr int kDoublingDeconvs = 3;

/// Extent after the encoder: three ceil-halvings, i.e. ceil(s / 8).
constexpr int feature_extent(int input) noexcept { return (input + 7) / 8; }

inline void validate(const PipelineConfig& c)
{
    auto bad = [](const std::string& what) { fail(ErrorKind::InvalidParams, "pipeline config: " + what); };
    if (c.input_h < 16 || c.input_w < 16)
        bad("input must be at least 16x16");
    if (c.encoder.widths.size() < kPooledBlocks)
        bad("encoder needs at least 3 pooled blocks");
    if (c.encoder.widths.size() != c.encoder.dilations.size())
        bad("encoder widths and dilations differ in length");
    if (c.encoder.kernel < 1 || c.encoder.kernel % 2 == 0)
        bad("encoder kernel must be odd");
    if (c.head.deconv_widths.size() != kDoublingDeconvs)
        bad("regression head needs exactly 3 doubling deconvolutions");
    if (c.head.deconv_kernel < 2 || c.head.deconv_kernel % 2 != 0)
        bad("deconv kernel must be even so stride 2 doubles the extent");
    if (c.head.projection_kernel < 1 || c.head.projection_kernel % 2 == 0)
        bad("projection kernel must be odd");
    if (c.classifier.kernel < 1 || c.classifier.kernel % 2 == 0)
        bad("classifier kernel must be odd");
    if (c.crop != "center")
        bad("only center crop is supported");
    if (c.init != "relu_uniform" && c.init != "scaled_uniform")
        bad("init must be relu_uniform or scaled_uniform");
    auto positive = [&](const std::vector<int>& v, const char* what) {
        for (int x : v)
            if (x < 1)
                bad(std::string(what) + " must be positive");
    };
    positive(c.encoder.widths, "encoder widths");
    positive(c.encoder.dilations, "encoder dilations");
    positive(c.head.projection, "projection widths");
    positive(c.head.deconv_widths, "deconv widths");
    positive(c.classifier.widths, "classifier widths");
}

/// Weight on the regression term, linear from lambda_start (first epoch) to
/// lambda_end (last epoch), clamped to [0, 1].
struct LossSchedule {
    double lambda_start = 0.9;
    double lambda_end = 0.1;
    int total_epochs = 1;

    double at(int epoch) const noexcept
    {
        double t = total_epochs > 1 ? static_cast<double>(epoch) / (total_epochs - 1) : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        return std::clamp(lambda_start + (lambda_end - lambda_start) * t, 0.0, 1.0);
    }
};

inline void validate(const LossSchedule& s)
{
    if (s.lambda_start < 0.0 || s.lambda_start > 1.0 || s.lambda_end < 0.0 || s.lambda_end > 1.0)
        fail(ErrorKind::InvalidParams, "loss schedule: lambda outside [0, 1]");
    if (s.lambda_start < s.lambda_end)
        fail(ErrorKind::InvalidParams, "loss schedule: lambda_start must be >= lambda_end");
    if (s.total_epochs < 1)
        fail(ErrorKind::InvalidParams, "loss schedule: total_epochs must be >= 1");
}

/// Grayscale replicated into three identical channels: 1 x 3 x h x w.
template <typename Real = float>
nn::Tensor4<Real> pseudo_color(const Image& image)
{
    nn::Tensor4<Real> t(1, 3, image.height(), image.width());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x)
                t.at(0, c, y, x) = static_cast<Real>(image(y, x));
    return t;
}

template <typename Real = float>
nn::Tensor4<Real> pseudo_color(std::span<const Image> images)
{
    if (images.empty())
        return nn::Tensor4<Real>(0, 3, 0, 0);
    const int h = images[0].height(), w = images[0].width();
    nn::Tensor4<Real> t(static_cast<int>(images.size()), 3, h, w);
    for (std::size_t i = 0; i < images.size(); ++i) {
        require_same_shape(images[i], images[0], "pseudo_color batch");
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    t.at(static_cast<int>(i), c, y, x) = static_cast<Real>(images[i](y, x));
    }
    return t;
}

template <typename Real>
struct CombinedLoss {
    double value = 0.0;
    /// Absent when lambda == 0: the distance-map target is never touched.
    std::optional<double> l2;
    double ce = 0.0;
    nn::Tensor4<Real> d_dmap;   ///< lambda * dL2/dpred (zeros when lambda == 0)
    nn::Tensor4<Real> d_logits; ///< (1 - lambda) * dCE/dlogits (zeros when lambda == 1)
};

/// lambda * l2_loss(pred, gt) + (1 - lambda) * softmax_ce_loss(logits, masks).
template <typename Real>
CombinedLoss<Real> combined_loss(const nn::Tensor4<Real>& pred_dmap, const nn::Tensor4<Real>& gt_dmap,
                                 const nn::Tensor4<Real>& logits, std::span<const BinaryMask> gt_masks,
                                 double lambda)
{
    if (!(lambda >= 0.0 && lambda <= 1.0))
        fail(ErrorKind::InvalidParams, "combined_loss: lambda outside [0, 1]");
    CombinedLoss<Real> r;
    r.d_dmap = nn::Tensor4<Real>(pred_dmap.shape());
    if (lambda > 0.0) {
        auto l2 = nn::l2_loss(pred_dmap, gt_dmap);
        r.l2 = l2.value;
        const Real s = static_cast<Real>(lambda);
        auto g = l2.grad.data();
        auto out = r.d_dmap.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            out[i] = s * g[i];
    }
    auto ce = nn::softmax_ce_loss(logits, gt_masks);
    r.ce = ce.value;
    r.d_logits = nn::Tensor4<Real>(logits.shape());
    if (lambda < 1.0) {
        const Real s = static_cast<Real>(1.0 - lambda);
        auto g = ce.grad.data();
        auto out = r.d_logits.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            out[i] = s * g[i];
    }
    r.value = (lambda > 0.0 ? lambda * *r.l2 : 0.0) + (1.0 - lambda) * r.ce;
    return r;
}

/// Encoder -> boundary distance regression head -> pixel classifier.
template <typename Real = float>
class Pipeline {
public:
    struct Output {
        nn::Tensor4<Real> dmap;   ///< n x 1 x h x w, linear (unclamped)
        nn::Tensor4<Real> logits; ///< n x 2 x h x w
    };

    explicit Pipeline(const PipelineConfig& config, std::uint64_t seed = 1) : config_(config)
    {
        validate(config_);
        init_ = config_.init == "scaled_uniform" ? nn::Init::ScaledUniform : nn::Init::ReluUniform;
        std::mt19937_64 rng(seed);
        build_encoder(encoder_, 3, rng);
        build_head(head_, config_.encoder.widths.back(), 1, config_.head.zero_output, rng);
        if (config_.classifier.mirrored) {
            build_encoder(classifier_, 1, rng);
            build_head(classifier_, config_.encoder.widths.back(), 2, false, rng);
        } else {
            int in = 1;
            const int k = config_.classifier.kernel;
            for (int w : config_.classifier.widths) {
                classifier_.add(nn::Conv2d<Real>({in, w, k, k, 1, k / 2, 1}, rng, init_));
                classifier_.add(nn::ReLU<Real>());
                in = w;
            }
            classifier_.add(nn::Conv2d<Real>({in, 2, 1, 1, 1, 0, 1}, rng, init_));
        }
        encoder_.set_input_grad(false);
    }

    const PipelineConfig& config() const noexcept { return config_; }

    Output forward(const nn::Tensor4<Real>& x)
    {
        if (x.c() != 3 || x.h() != config_.input_h || x.w() != config_.input_w)
            fail(ErrorKind::ShapeMismatch, "pipeline input " + nn::to_string(x.shape()) + " does not match config " +
                                               std::to_string(config_.input_h) + "x" +
                                               std::to_string(config_.input_w));
        Output out;
        features_shape_ = {};
        auto features = encoder_.forward(x);
        features_shape_ = features.shape();
        out.dmap = head_.forward(features);
        out.logits = classifier_.forward(out.dmap);
        return out;
    }

    /// Shape of the last encoder output seen by forward().
    const nn::Shape4& last_feature_shape() const noexcept { return features_shape_; }

    /// Back-propagates both loss terms. With `classifier_active` false the
    /// classifier is skipped entirely (its gradients stay untouched) and only
    /// `d_dmap` reaches the regression head.
    nn::Tensor4<Real> backward(const nn::Tensor4<Real>& d_dmap, const nn::Tensor4<Real>& d_logits,
                               bool classifier_active = true)
    {
        nn::Tensor4<Real> g = d_dmap;
        if (classifier_active) {
            auto from_cls = classifier_.backward(d_logits);
            auto a = g.data();
            auto b = from_cls.data();
            for (std::size_t i = 0; i < a.size(); ++i)
                a[i] += b[i];
        }
        return encoder_.backward(head_.backward(g));
    }

    /// Parameters named "<encoder|regression|classifier>.<layer>.<weight|bias>".
    std::vector<nn::NamedParam<Real>> parameters()
    {
        std::vector<nn::NamedParam<Real>> out;
        auto append = [&](nn::Sequential<Real>& s, const std::string& prefix) {
            for (auto& p : s.parameters())
                out.push_back({prefix + "." + p.name, p.tensor});
        };
        append(encoder_, "encoder");
        append(head_, "regression");
        append(classifier_, "classifier");
        return out;
    }

    std::vector<nn::NamedParam<Real>> classifier_parameters()
    {
        std::vector<nn::NamedParam<Real>> out;
        for (auto& p : classifier_.parameters())
            out.push_back({"classifier." + p.name, p.tensor});
        return out;
    }

    void zero_grad()
    {
        for (auto& p : parameters())
            p.tensor->zero_grad();
    }

    /// Enables dL/dx for the image input (gradient checking only).
    void set_input_grad(bool need) { encoder_.set_input_grad(need); }

    nn::Sequential<Real>& encoder() noexcept { return encoder_; }
    nn::Sequential<Real>& head() noexcept { return head_; }
    nn::Sequential<Real>& classifier() noexcept { return classifier_; }

private:
    template <typename Rng>
    void build_encoder(nn::Sequential<Real>& seq, int in, Rng& rng)
    {
        const auto& e = config_.encoder;
        for (std::size_t i = 0; i < e.widths.size(); ++i) {
            const int d = e.dilations[i];
            seq.add(nn::Conv2d<Real>({in, e.widths[i], e.kernel, e.kernel, 1, d * (e.kernel / 2), d}, rng, init_));
            seq.add(nn::ReLU<Real>());
            if (i < kPooledBlocks)
                seq.add(nn::MaxPool2d<Real>(nn::PoolSpec{3, 2, 1}));
            in = e.widths[i];
        }
    }

    template <typename Rng>
    void build_head(nn::Sequential<Real>& seq, int in, int out_channels, bool zero_output, Rng& rng)
    {
        const auto& h = config_.head;
        const int pk = h.projection_kernel;
        for (int w : h.projection) {
            seq.add(nn::Conv2d<Real>({in, w, pk, pk, 1, pk / 2, 1}, rng, init_));
            seq.add(nn::ReLU<Real>());
            in = w;
        }
        const int k = h.deconv_kernel;
        for (int w : h.deconv_widths) {
            seq.add(nn::TransposedConv2d<Real>({in, w, k, k, 2, (k - 2) / 2}, rng, init_));
            seq.add(nn::ReLU<Real>());
            in = w;
        }
        if (zero_output)
            seq.add(nn::Conv2d<Real>(nn::ConvSpec{in, out_channels, 1, 1, 1, 0, 1}));
        else
            seq.add(nn::Conv2d<Real>({in, out_channels, 1, 1, 1, 0, 1}, rng, init_));
        seq.add(nn::CenterCrop<Real>(config_.input_h, config_.input_w));
    }

    PipelineConfig config_;
    nn::Init init_ = nn::Init::ReluUniform;
    nn::Sequential<Real> encoder_;
    nn::Sequential<Real> head_;
    nn::Sequential<Real> classifier_;
    nn::Shape4 features_shape_{};
};

/// Per-pixel argmax over the two logit channels of sample `n`; ties -> background.
template <typename Real>
BinaryMask argmax_mask(const nn::Tensor4<Real>& logits, int n = 0)
{
    if (logits.c() != 2)
        fail(ErrorKind::ShapeMismatch, "argmax_mask: expected 2 channels");
    BinaryMask mask(logits.h(), logits.w(), 0);
    for (int y = 0; y < logits.h(); ++y)
        for (int x = 0; x < logits.w(); ++x)
            mask(y, x) = logits.at(n, 1, y, x) > logits.at(n, 0, y, x) ? 1 : 0;
    return mask;
}

template <typename Real>
Grid<float> channel_to_grid(const nn::Tensor4<Real>& t, int n = 0, int c = 0)
{
    Grid<float> g(t.h(), t.w());
    for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x)
            g(y, x) = static_cast<float>(t.at(n, c, y, x));
    return g;
}

template <typename Real = float>
nn::Tensor4<Real> grid_to_tensor(const Grid<float>& g)
{
    nn::Tensor4<Real> t(1, 1, g.height(), g.width());
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x)
            t.at(0, 0, y, x) = static_cast<Real>(g(y, x));
    return t;
}

/// Final segmentation: the classifier's argmax.
template <typename Real>
BinaryMask segment(Pipeline<Real>& pipeline, const Image& image)
{
    return argmax_mask(pipeline.forward(pseudo_color<Real>(image)).logits);
}

struct DmapPrediction {
    Grid<float> raw;
    Grid<float> clamped; ///< raw clamped to [0, 1]
};

template <typename Real>
DmapPrediction predict_dmap(Pipeline<Real>& pipeline, const Image& image)
{
    DmapPrediction p;
    p.raw = channel_to_grid(pipeline.forward(pseudo_color<Real>(image)).dmap);
    p.clamped = p.raw;
    for (auto& v : p.clamped.values())
        v = std::clamp(v, 0.0f, 1.0f);
    return p;
}

// --- configuration text -------------------------------------------------

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where)
{
    if (!j.is_object())
        fail(ErrorKind::InvalidParams, where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known)
            ok = ok || it.key() == k;
        if (!ok)
            fail(ErrorKind::InvalidParams, where + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& where)
{
    if (!j.contains(key))
        return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidParams, where + "." + key + ": " + e.what());
    }
}

} // namespace detail

inline nlohmann::ordered_json to_json(const PipelineConfig& c)
{
    nlohmann::ordered_json j;
    j["input_h"] = c.input_h;
    j["input_w"] = c.input_w;
    j["encoder"] = {{"widths", c.encoder.widths}, {"dilations", c.encoder.dilations}, {"kernel", c.encoder.kernel}};
    j["head"] = {{"projection", c.head.projection},
                 {"projection_kernel", c.head.projection_kernel},
                 {"deconv_widths", c.head.deconv_widths},
                 {"deconv_kernel", c.head.deconv_kernel},
                 {"zero_output", c.head.zero_output}};
    j["classifier"] = {{"widths", c.classifier.widths},
                       {"kernel", c.classifier.kernel},
                       {"mirrored", c.classifier.mirrored}};
    j["crop"] = c.crop;
    j["init"] = c.init;
    return j;
}

inline PipelineConfig pipeline_from_json(const nlohmann::json& j, const std::string& where = "pipeline")
{
    using detail::read_key;
    detail::reject_unknown(j, {"input_h", "input_w", "encoder", "head", "classifier", "crop", "init"}, where);
    PipelineConfig c;
    read_key(j, "input_h", c.input_h, where);
    read_key(j, "input_w", c.input_w, where);
    read_key(j, "crop", c.crop, where);
    read_key(j, "init", c.init, where);
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        detail::reject_unknown(e, {"widths", "dilations", "kernel"}, where + ".encoder");
        read_key(e, "widths", c.encoder.widths, where + ".encoder");
        read_key(e, "dilations", c.encoder.dilations, where + ".encoder");
        read_key(e, "kernel", c.encoder.kernel, where + ".encoder");
    }
    if (j.contains("head")) {
        const auto& h = j.at("head");
        detail::reject_unknown(h, {"projection", "projection_kernel", "deconv_widths", "deconv_kernel", "zero_output"},
                               where + ".head");
        read_key(h, "projection", c.head.projection, where + ".head");
        read_key(h, "projection_kernel", c.head.projection_kernel, where + ".head");
        read_key(h, "deconv_widths", c.head.deconv_widths, where + ".head");
        read_key(h, "deconv_kernel", c.head.deconv_kernel, where + ".head");
        read_key(h, "zero_output", c.head.zero_output, where + ".head");
    }
    if (j.contains("classifier")) {
        const auto& k = j.at("classifier");
        detail::reject_unknown(k, {"widths", "kernel", "mirrored"}, where + ".classifier");
        read_key(k, "widths", c.classifier.widths, where + ".classifier");
        read_key(k, "kernel", c.classifier.kernel, where + ".classifier");
        read_key(k, "mirrored", c.classifier.mirrored, where + ".classifier");
    }
    validate(c);
    return c;
}

/// Full-size shape configuration: 321 x 321 input, 1024-channel
/// features at 41 x 41. Channel widths before the last block are kept small.
inline PipelineConfig reference_config()
{
    PipelineConfig c;
    c.input_h = 321;
    c.input_w = 321;
    c.encoder.widths = {8, 16, 32, 32, 1024};
    c.encoder.dilations = {1, 1, 1, 2, 4};
    c.head.projection = {32};
    c.head.projection_kernel = 1;
    c.head.deconv_widths = {16, 8, 8};
    return c;
}

} // namespace bdrseg
