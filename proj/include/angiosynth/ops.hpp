#pragma once

#include <span>
#include <vector>

#include "angiosynth/tensor.hpp"

namespace angio {

// Per-layer running statistics consumed by batch_norm. `update` is cleared
// while the owning network is frozen so that a frozen net mutates no state.
struct BatchNormState {
    Tensor running_mean; // [C]
    Tensor running_var;  // [C]
    float momentum = 0.1f;
    float eps = 1e-5f;
    bool update = true;
};

// --- convolution family -----------------------------------------------------
// input [N,Cin,H,W], weight [Cout,Cin,k,k], optional bias [Cout]
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = Tensor(),
              int stride = 1, int dilation = 1, int padding = 0);

// weight [Cin,1,k,k]: one spatial filter per channel, implicit padding 0
Tensor depthwise_conv2d(const Tensor& input, const Tensor& weight, int stride = 1, int dilation = 1);

// depthwise_weight [Cin,1,k,k], pointwise_weight [Cout,Cin,1,1]; implicit padding 0
Tensor separable_conv2d(const Tensor& input, const Tensor& depthwise_weight,
                        const Tensor& pointwise_weight, int stride = 1, int dilation = 1);

// weight [Cin,Cout,k,k]; padding/output-padding are derived so the spatial
// size is multiplied exactly by `stride` (throws if no such configuration).
Tensor transposed_conv2d(const Tensor& input, const Tensor& weight, int stride);

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training);

Tensor leaky_relu(const Tensor& input, float slope);
Tensor relu(const Tensor& input);
Tensor tanh(const Tensor& input);

Tensor reflection_pad(const Tensor& input, int pad);
Tensor average_pool(const Tensor& input, int k);

// Separable Lanczos-3 resampling. Data-path only: rejects differentiable
// inputs while a tape is active.
Tensor lanczos_resize(const Tensor& image, double factor);

// --- elementwise / reductions ----------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scalar(const Tensor& a, float s);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum_all(const Tensor& a);  // -> scalar
Tensor mean_all(const Tensor& a); // -> scalar

Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor repeat_channels(const Tensor& input, int times);
Tensor global_avg_pool(const Tensor& input); // [N,C,H,W] -> [N,C]

} // namespace angio
