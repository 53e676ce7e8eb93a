#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "angiosynth/tensor.hpp"

namespace angio {

struct AdamParams {
    float lr = 0.0002f;
    float beta1 = 0.5f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    std::vector<float> m;
    std::vector<float> v;
    std::int64_t t = 0;
    AdamParams hyper;
};

// One bias-corrected update. `state` buffers are sized on first use.
void adam_step(std::span<float> param, std::span<const float> grad, AdamState& state);

// Adam over a fixed parameter list. Parameters with no populated gradient
// buffer are stepped with a zero gradient so moment decay stays in sync.
class AdamOptimizer {
public:
    AdamOptimizer() = default;
    AdamOptimizer(std::vector<Tensor> params, AdamParams hyper);

    void step();
    void zero_grad();

    std::size_t size() const { return params_.size(); }
    const std::vector<Tensor>& params() const { return params_; }
    std::vector<AdamState>& states() { return states_; }
    const std::vector<AdamState>& states() const { return states_; }

private:
    std::vector<Tensor> params_;
    std::vector<AdamState> states_;
};

} // namespace angio
