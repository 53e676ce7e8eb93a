#include <cmath>

#include "angiosynth/optim.hpp"

namespace angio {

void adam_step(std::span<float> param, std::span<const float> grad, AdamState& state) {
    if (param.size() != grad.size())
        throw DimensionError("adam_step: parameter and gradient sizes differ");
    if (state.m.empty()) state.m.assign(param.size(), 0.0f);
    if (state.v.empty()) state.v.assign(param.size(), 0.0f);
    if (state.m.size() != param.size() || state.v.size() != param.size())
        throw DimensionError("adam_step: moment buffers do not match the parameter shape");

    const AdamParams& hp = state.hyper;
    state.t += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(hp.beta1), static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(static_cast<double>(hp.beta2), static_cast<double>(state.t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const float g = grad[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0f - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0f - hp.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        param[i] -= static_cast<float>(hp.lr * mhat / (std::sqrt(vhat) + hp.eps));
    }
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, AdamParams hyper)
    : params_(std::move(params)) {
    states_.resize(params_.size());
    for (std::size_t i = 0; i < states_.size(); ++i) {
        states_[i].hyper = hyper;
        states_[i].m.assign(static_cast<std::size_t>(params_[i].numel()), 0.0f);
        states_[i].v.assign(static_cast<std::size_t>(params_[i].numel()), 0.0f);
    }
}

void AdamOptimizer::step() {
    static const std::vector<float> kEmpty;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (p.has_grad()) {
            adam_step(p.values(), p.grad_view(), states_[i]);
        } else {
            std::vector<float> zeros(static_cast<std::size_t>(p.numel()), 0.0f);
            adam_step(p.values(), zeros, states_[i]);
        }
    }
}

void AdamOptimizer::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

} // namespace angio
