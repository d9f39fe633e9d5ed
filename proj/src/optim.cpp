#include "crnl/optim.hpp"

#include <cmath>

namespace crnl {

static std::vector<real>* grad_of(const Param& p) {
    auto* impl = p.tensor.impl().get();
    if (!impl || impl->grad.size() != impl->data.size()) return nullptr;
    return &impl->grad;
}

void NesterovSgd::step(const ParamList& params, real lr) {
    if (velocity_.empty()) {
        velocity_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            velocity_[i].assign(params[i].tensor.numel(), real(0));
    }
    if (velocity_.size() != params.size())
        throw ContractError("nesterov: parameter list changed size under the optimizer");
    for (size_t i = 0; i < params.size(); ++i) {
        auto* g = grad_of(params[i]);
        if (!g) continue;
        auto& p = const_cast<Tensor&>(params[i].tensor).vec();
        auto& v = velocity_[i];
        for (size_t j = 0; j < p.size(); ++j) {
            real gj = (*g)[j] + wd_ * p[j];
            v[j] = momentum_ * v[j] + gj;
            p[j] -= lr * (gj + momentum_ * v[j]);
        }
    }
}

void Adam::step(const ParamList& params, real lr) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        vmax_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].tensor.numel(), real(0));
            v_[i].assign(params[i].tensor.numel(), real(0));
            vmax_[i].assign(params[i].tensor.numel(), real(0));
        }
    }
    if (m_.size() != params.size())
        throw ContractError("adam: parameter list changed size under the optimizer");
    ++t_;
    real bc1 = real(1) - std::pow(beta1_, static_cast<real>(t_));
    real bc2 = real(1) - std::pow(beta2_, static_cast<real>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        auto* g = grad_of(params[i]);
        if (!g) continue;
        auto& p = const_cast<Tensor&>(params[i].tensor).vec();
        for (size_t j = 0; j < p.size(); ++j) {
            real gj = (*g)[j] + wd_ * p[j];
            m_[i][j] = beta1_ * m_[i][j] + (real(1) - beta1_) * gj;
            v_[i][j] = beta2_ * v_[i][j] + (real(1) - beta2_) * gj * gj;
            real second = v_[i][j];
            if (amsgrad_) {
                vmax_[i][j] = std::max(vmax_[i][j], v_[i][j]);
                second = vmax_[i][j];
            }
            real denom = std::sqrt(second / bc2) + eps_;
            p[j] -= lr * (m_[i][j] / bc1) / denom;
        }
    }
}

real lr_schedule(int epoch, real init_lr, real decay_factor, int decay_every) {
    if (decay_every <= 0 || decay_factor <= 0)
        throw ConfigError("lr_schedule: decay factor and interval must be positive");
    return init_lr / std::pow(decay_factor, static_cast<real>(epoch / decay_every));
}

real global_grad_norm(const ParamList& params) {
    real sq = 0;
    for (const auto& p : params) {
        auto* g = grad_of(p);
        if (!g) continue;
        for (real v : *g) sq += v * v;
    }
    return std::sqrt(sq);
}

void clip_grad_norm(const ParamList& params, real max_norm) {
    real norm = global_grad_norm(params);
    if (norm <= max_norm || norm == 0) return;
    real s = max_norm / norm;
    for (const auto& p : params) {
        auto* g = grad_of(p);
        if (!g) continue;
        for (real& v : *g) v *= s;
    }
}

void zero_grads(const ParamList& params) {
    for (const auto& p : params) const_cast<Tensor&>(p.tensor).zero_grad();
}

}  // namespace crnl
