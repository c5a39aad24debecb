#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "../error.hpp"

namespace bdrseg::nn {

struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t count() const noexcept
    {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
               static_cast<std::size_t>(w);
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }

    friend bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s)
{
    return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

/// N x C x H x W row-major array with an optional same-shape gradient buffer.
///
/// `Real` selects the arithmetic of the whole engine: `float` for training,
/// `double` for finite-difference gradient checking.
template <typename Real = float>
class Tensor4 {
public:
    using value_type = Real;

    Tensor4() = default;
    explicit Tensor4(Shape4 shape, Real fill = Real(0)) : shape_(shape)
    {
        if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
            fail(ErrorKind::ShapeMismatch, "negative tensor extent " + to_string(shape));
        data_.assign(shape.count(), fill);
    }
    Tensor4(int n, int c, int h, int w, Real fill = Real(0)) : Tensor4(Shape4{n, c, h, w}, fill) {}

    const Shape4& shape() const noexcept { return shape_; }
    int n() const noexcept { return shape_.n; }
    int c() const noexcept { return shape_.c; }
    int h() const noexcept { return shape_.h; }
    int w() const noexcept { return shape_.w; }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<Real> data() noexcept { return data_; }
    std::span<const Real> data() const noexcept { return data_; }

    bool has_grad() const noexcept { return !grad_.empty() || data_.empty(); }
    /// Allocates a zeroed gradient buffer if there is none yet.
    std::span<Real> grad()
    {
        if (grad_.size() != data_.size())
            grad_.assign(data_.size(), Real(0));
        return grad_;
    }
    std::span<const Real> grad() const noexcept { return grad_; }
    void zero_grad() { std::fill(grad_.begin(), grad_.end(), Real(0)); }
    void drop_grad() noexcept { grad_.clear(); grad_.shrink_to_fit(); }

    Real& at(int n, int c, int y, int x) noexcept { return data_[offset(n, c, y, x)]; }
    Real at(int n, int c, int y, int x) const noexcept { return data_[offset(n, c, y, x)]; }

    std::size_t offset(int n, int c, int y, int x) const noexcept
    {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    /// View of sample `i` (all channels) as a contiguous span.
    std::span<Real> sample(int i) noexcept
    {
        const std::size_t len = static_cast<std::size_t>(shape_.c) * shape_.plane();
        return std::span<Real>(data_).subspan(static_cast<std::size_t>(i) * len, len);
    }
    std::span<const Real> sample(int i) const noexcept
    {
        const std::size_t len = static_cast<std::size_t>(shape_.c) * shape_.plane();
        return std::span<const Real>(data_).subspan(static_cast<std::size_t>(i) * len, len);
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const noexcept
    {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); }) &&
               std::all_of(grad_.begin(), grad_.end(), [](Real v) { return std::isfinite(v); });
    }

    /// Element-type conversion; the gradient buffer is not copied.
    template <typename Other>
    Tensor4<Other> cast() const
    {
        Tensor4<Other> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data().begin(), [](Real v) { return static_cast<Other>(v); });
        return out;
    }

private:
    Shape4 shape_{};
    std::vector<Real> data_;
    std::vector<Real> grad_;
};

template <typename Real>
void require_shape(const Tensor4<Real>& t, const Shape4& expected, const char* context)
{
    if (t.shape() != expected)
        fail(ErrorKind::ShapeMismatch,
             std::string(context) + ": got " + to_string(t.shape()) + ", expected " + to_string(expected));
}

template <typename Real, typename Rng>
void fill_uniform(Tensor4<Real>& t, Real lo, Real hi, Rng& rng)
{
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.data())
        v = static_cast<Real>(dist(rng));
}

template <typename Real>
double dot(const Tensor4<Real>& a, const Tensor4<Real>& b)
{
    require_shape(b, a.shape(), "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        s += static_cast<double>(a.data()[i]) * static_cast<double>(b.data()[i]);
    return s;
}

} // namespace bdrseg::nn
