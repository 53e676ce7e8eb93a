#include <cmath>
#include <cstdint>

#include "angiosynth/ops.hpp"

namespace angio {
namespace {

using i64 = std::int64_t;

void require_nchw(const Tensor& t, const char* op) {
    if (!t.defined() || t.ndim() != 4) throw DimensionError(std::string(op) + " expects a 4-D tensor");
}

} // namespace

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training) {
    require_nchw(input, "batch_norm");
    const i64 N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (gamma.numel() != C || beta.numel() != C)
        throw DimensionError("batch_norm gamma/beta must have one entry per channel");
    if (state.running_mean.numel() != C || state.running_var.numel() != C)
        throw DimensionError("batch_norm running stats must have one entry per channel");
    const i64 plane = H * W;
    const i64 m = N * plane;
    if (training && m < 2) throw ArgumentError("batch_norm needs at least 2 samples per channel in train mode");

    std::vector<float> mean(static_cast<std::size_t>(C));
    std::vector<float> invstd(static_cast<std::size_t>(C));
    const float* x = input.data();

    if (training) {
        for (i64 c = 0; c < C; ++c) {
            double s = 0.0, s2 = 0.0;
            for (i64 n = 0; n < N; ++n) {
                const float* row = x + (n * C + c) * plane;
                for (i64 i = 0; i < plane; ++i) {
                    s += row[i];
                    s2 += static_cast<double>(row[i]) * row[i];
                }
            }
            const double mu = s / static_cast<double>(m);
            double var = s2 / static_cast<double>(m) - mu * mu;
            if (var < 0.0) var = 0.0;
            mean[static_cast<std::size_t>(c)] = static_cast<float>(mu);
            invstd[static_cast<std::size_t>(c)] = static_cast<float>(1.0 / std::sqrt(var + state.eps));
            if (state.update) {
                const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
                auto rm = state.running_mean.values();
                auto rv = state.running_var.values();
                rm[static_cast<std::size_t>(c)] =
                    (1.0f - state.momentum) * rm[static_cast<std::size_t>(c)] + state.momentum * static_cast<float>(mu);
                rv[static_cast<std::size_t>(c)] =
                    (1.0f - state.momentum) * rv[static_cast<std::size_t>(c)] + state.momentum * static_cast<float>(unbiased);
            }
        }
    } else {
        auto rm = state.running_mean.values();
        auto rv = state.running_var.values();
        for (i64 c = 0; c < C; ++c) {
            mean[static_cast<std::size_t>(c)] = rm[static_cast<std::size_t>(c)];
            invstd[static_cast<std::size_t>(c)] =
                static_cast<float>(1.0 / std::sqrt(static_cast<double>(rv[static_cast<std::size_t>(c)]) + state.eps));
        }
    }

    Tensor out = Tensor::zeros(input.shape());
    float* y = out.data();
    const float* g = gamma.data();
    const float* b = beta.data();
    for (i64 n = 0; n < N; ++n)
        for (i64 c = 0; c < C; ++c) {
            const float* xr = x + (n * C + c) * plane;
            float* yr = y + (n * C + c) * plane;
            const float mu = mean[static_cast<std::size_t>(c)];
            const float is = invstd[static_cast<std::size_t>(c)];
            const float gc = g[c], bc = b[c];
            for (i64 i = 0; i < plane; ++i) yr[i] = (xr[i] - mu) * is * gc + bc;
        }

    Tape* tape = active_tape();
    if (tape && (input.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        out.set_requires_grad(true);
        auto xi = input.impl(), gi = gamma.impl(), bi = beta.impl(), yi = out.impl();
        tape->record([xi, gi, bi, yi, mean, invstd, N, C, plane, training] {
            if (yi->grad.empty()) return;
            const float* gy = yi->grad.data();
            const float* xv = xi->values.data();
            const float* gv = gi->values.data();
            const i64 m = N * plane;
            for (i64 c = 0; c < C; ++c) {
                const float mu = mean[static_cast<std::size_t>(c)];
                const float is = invstd[static_cast<std::size_t>(c)];
                // per-channel sums of gy and gy*xhat
                double s1 = 0.0, s2 = 0.0;
                for (i64 n = 0; n < N; ++n) {
                    const float* gr = gy + (n * C + c) * plane;
                    const float* xr = xv + (n * C + c) * plane;
                    for (i64 i = 0; i < plane; ++i) {
                        s1 += gr[i];
                        s2 += static_cast<double>(gr[i]) * ((xr[i] - mu) * is);
                    }
                }
                if (gi->requires_grad) detail::ensure_grad(*gi)[static_cast<std::size_t>(c)] += static_cast<float>(s2);
                if (bi->requires_grad) detail::ensure_grad(*bi)[static_cast<std::size_t>(c)] += static_cast<float>(s1);
                if (xi->requires_grad) {
                    auto gx = detail::ensure_grad(*xi);
                    const float gc = gv[c];
                    if (training) {
                        const float mean_g = static_cast<float>(s1 / static_cast<double>(m));
                        const float mean_gx = static_cast<float>(s2 / static_cast<double>(m));
                        for (i64 n = 0; n < N; ++n) {
                            const float* gr = gy + (n * C + c) * plane;
                            const float* xr = xv + (n * C + c) * plane;
                            float* dst = gx.data() + (n * C + c) * plane;
                            for (i64 i = 0; i < plane; ++i) {
                                const float xhat = (xr[i] - mu) * is;
                                dst[i] += gc * is * (gr[i] - mean_g - xhat * mean_gx);
                            }
                        }
                    } else {
                        for (i64 n = 0; n < N; ++n) {
                            const float* gr = gy + (n * C + c) * plane;
                            float* dst = gx.data() + (n * C + c) * plane;
                            for (i64 i = 0; i < plane; ++i) dst[i] += gc * is * gr[i];
                        }
                    }
                }
            }
        });
    }
    check_finite(out, "batch_norm");
    return out;
}

Tensor leaky_relu(const Tensor& input, float slope) {
    Tensor out = Tensor::zeros(input.shape());
    const float* x = input.data();
    float* y = out.data();
    const i64 n = input.numel();
    for (i64 i = 0; i < n; ++i) y[i] = x[i] >= 0.0f ? x[i] : slope * x[i];

    Tape* tape = active_tape();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl(), yi = out.impl();
        tape->record([xi, yi, slope] {
            if (yi->grad.empty() || !xi->requires_grad) return;
            auto gx = detail::ensure_grad(*xi);
            const float* gy = yi->grad.data();
            const float* xv = xi->values.data();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += xv[i] >= 0.0f ? gy[i] : slope * gy[i];
        });
    }
    check_finite(out, "leaky_relu");
    return out;
}

Tensor relu(const Tensor& input) {
    Tensor out = Tensor::zeros(input.shape());
    const float* x = input.data();
    float* y = out.data();
    const i64 n = input.numel();
    for (i64 i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;

    Tape* tape = active_tape();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl(), yi = out.impl();
        tape->record([xi, yi] {
            if (yi->grad.empty() || !xi->requires_grad) return;
            auto gx = detail::ensure_grad(*xi);
            const float* gy = yi->grad.data();
            const float* xv = xi->values.data();
            for (std::size_t i = 0; i < gx.size(); ++i)
                if (xv[i] > 0.0f) gx[i] += gy[i];
        });
    }
    return out;
}

Tensor tanh(const Tensor& input) {
    Tensor out = Tensor::zeros(input.shape());
    const float* x = input.data();
    float* y = out.data();
    const i64 n = input.numel();
    for (i64 i = 0; i < n; ++i) y[i] = std::tanh(x[i]);

    Tape* tape = active_tape();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl(), yi = out.impl();
        tape->record([xi, yi] {
            if (yi->grad.empty() || !xi->requires_grad) return;
            auto gx = detail::ensure_grad(*xi);
            const float* gy = yi->grad.data();
            const float* yv = yi->values.data();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (1.0f - yv[i] * yv[i]) * gy[i];
        });
    }
    check_finite(out, "tanh");
    return out;
}

namespace {
// Mirror index without repeating the edge pixel; valid for pad <= n-1.
inline i64 reflect_index(i64 j, i64 n) {
    if (j < 0) return -j;
    if (j >= n) return 2 * n - 2 - j;
    return j;
}
} // namespace

Tensor reflection_pad(const Tensor& input, int pad) {
    require_nchw(input, "reflection_pad");
    if (pad < 0) throw ArgumentError("reflection_pad: pad must be non-negative");
    const i64 N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (pad >= H || pad >= W)
        throw ArgumentError("reflection_pad: pad " + std::to_string(pad) +
                            " must be smaller than the spatial size " + std::to_string(std::min(H, W)));
    const i64 Ho = H + 2 * pad, Wo = W + 2 * pad;
    Tensor out = Tensor::zeros({N, C, Ho, Wo});
    const float* x = input.data();
    float* y = out.data();
    for (i64 nc = 0; nc < N * C; ++nc) {
        const float* xp = x + nc * H * W;
        float* yp = y + nc * Ho * Wo;
        for (i64 oh = 0; oh < Ho; ++oh) {
            const i64 ih = reflect_index(oh - pad, H);
            for (i64 ow = 0; ow < Wo; ++ow) yp[oh * Wo + ow] = xp[ih * W + reflect_index(ow - pad, W)];
        }
    }

    Tape* tape = active_tape();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl(), yi = out.impl();
        tape->record([xi, yi, N, C, H, W, pad, Ho, Wo] {
            if (yi->grad.empty() || !xi->requires_grad) return;
            auto gx = detail::ensure_grad(*xi);
            const float* gy = yi->grad.data();
            for (i64 nc = 0; nc < N * C; ++nc) {
                float* xp = gx.data() + nc * H * W;
                const float* yp = gy + nc * Ho * Wo;
                for (i64 oh = 0; oh < Ho; ++oh) {
                    const i64 ih = reflect_index(oh - pad, H);
                    for (i64 ow = 0; ow < Wo; ++ow) xp[ih * W + reflect_index(ow - pad, W)] += yp[oh * Wo + ow];
                }
            }
        });
    }
    return out;
}

Tensor average_pool(const Tensor& input, int k) {
    require_nchw(input, "average_pool");
    if (k < 1) throw ArgumentError("average_pool: k must be positive");
    const i64 N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % k != 0 || W % k != 0)
        throw ArgumentError("average_pool: spatial size " + std::to_string(H) + "x" + std::to_string(W) +
                            " not divisible by k=" + std::to_string(k));
    const i64 Ho = H / k, Wo = W / k;
    Tensor out = Tensor::zeros({N, C, Ho, Wo});
    const float* x = input.data();
    float* y = out.data();
    const float inv = 1.0f / static_cast<float>(k * k);
    for (i64 nc = 0; nc < N * C; ++nc) {
        const float* xp = x + nc * H * W;
        float* yp = y + nc * Ho * Wo;
        for (i64 oh = 0; oh < Ho; ++oh)
            for (i64 ow = 0; ow < Wo; ++ow) {
                float acc = 0.0f;
                for (i64 dy = 0; dy < k; ++dy)
                    for (i64 dx = 0; dx < k; ++dx) acc += xp[(oh * k + dy) * W + ow * k + dx];
                yp[oh * Wo + ow] = acc * inv;
            }
    }

    Tape* tape = active_tape();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl(), yi = out.impl();
        tape->record([xi, yi, N, C, H, W, Ho, Wo, k, inv] {
            if (yi->grad.empty() || !xi->requires_grad) return;
            auto gx = detail::ensure_grad(*xi);
            const float* gy = yi->grad.data();
            for (i64 nc = 0; nc < N * C; ++nc) {
                float* xp = gx.data() + nc * H * W;
                const float* yp = gy + nc * Ho * Wo;
                for (i64 oh = 0; oh < Ho; ++oh)
                    for (i64 ow = 0; ow < Wo; ++ow) {
                        const float g = yp[oh * Wo + ow] * inv;
                        for (i64 dy = 0; dy < k; ++dy)
                            for (i64 dx = 0; dx < k; ++dx) xp[(oh * k + dy) * W + ow * k + dx] += g;
                    }
            }
        });
    }
    return out;
}

} // namespace angio
