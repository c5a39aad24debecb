#pragma once

#include <span>
#include <vector>

#include "tensor.hpp"

namespace bdrseg::nn {

/// SGD with classical momentum:
///   v <- momentum * v - lr * grad;  param <- param + v;  grad <- 0.
/// Velocity buffers are keyed by parameter position, so the same parameter
/// list (same order) must be passed on every step.
template <typename Real>
class Sgd {
public:
    Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    void step(std::span<Tensor4<Real>* const> params)
    {
        for (const auto* p : params)
            if (p->size() != 0 && p->grad().size() != p->size())
                fail(ErrorKind::MissingGradient, "sgd_step: parameter of shape " + to_string(p->shape()) +
                                                     " has no gradient buffer");
        if (velocity_.size() != params.size()) {
            velocity_.clear();
            for (const auto* p : params)
                velocity_.emplace_back(p->size(), Real(0));
        }
        const Real lr = static_cast<Real>(lr_);
        const Real mu = static_cast<Real>(momentum_);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& v = velocity_[k];
            auto data = params[k]->data();
            auto grad = params[k]->grad();
            for (std::size_t i = 0; i < data.size(); ++i) {
                v[i] = mu * v[i] - lr * grad[i];
                data[i] += v[i];
                grad[i] = Real(0);
            }
        }
    }

    double learning_rate() const noexcept { return lr_; }
    double momentum() const noexcept { return momentum_; }
    void set_learning_rate(double lr) noexcept { lr_ = lr; }

private:
    double lr_;
    double momentum_;
    std::vector<std::vector<Real>> velocity_;
};

/// One-shot helper with fresh (zero) velocity.
template <typename Real>
void sgd_step(std::span<Tensor4<Real>* const> params, double lr, double momentum)
{
    Sgd<Real>(lr, momentum).step(params);
}

} // namespace bdrseg::nn
