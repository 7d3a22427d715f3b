#pragma once

#include <cmath>
#include <vector>

#include "biospix/tensor.hpp"

namespace biospix {

// Adam with bias correction. The learning rate is passed per step so a
// schedule can drive it; the epsilon sits outside the square root.
template <typename S>
class Adam {
public:
    explicit Adam(std::vector<Tensor<S>> params, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
        : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (params_.empty()) throw ParamError("adam: no parameters");
        if (!(beta1_ >= S(0) && beta1_ < S(1)) || !(beta2_ >= S(0) && beta2_ < S(1)))
            throw ParamError("adam: betas must lie in [0, 1)");
        if (!(eps_ > S(0))) throw ParamError("adam: eps must be positive");
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const auto& p : params_) {
            m_.push_back(ArrayX<S>::Zero(p.size()));
            v_.push_back(ArrayX<S>::Zero(p.size()));
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    void step(S lr) {
        ++t_;
        const S bc1 = S(1) - S(std::pow(static_cast<double>(beta1_), static_cast<double>(t_)));
        const S bc2 = S(1) - S(std::pow(static_cast<double>(beta2_), static_cast<double>(t_)));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            p.ensure_grad();
            const ArrayX<S>& g = p.grad();
            m_[i] = beta1_ * m_[i] + (S(1) - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (S(1) - beta2_) * g * g;
            p.array() -= lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + eps_);
        }
    }

    std::int64_t steps_taken() const { return t_; }
    const std::vector<Tensor<S>>& params() const { return params_; }

private:
    std::vector<Tensor<S>> params_;
    std::vector<ArrayX<S>> m_, v_;
    S beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

}  // namespace biospix
