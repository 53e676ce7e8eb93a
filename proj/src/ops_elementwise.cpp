#include <cmath>
#include <cstdint>

#include "angiosynth/ops.hpp"

namespace angio {
namespace {

using i64 = std::int64_t;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const float* av = a.data();
    const float* bv = b.data();
    float* y = out.data();
    for (i64 i = 0, n = a.numel(); i < n; ++i) y[i] = av[i] + bv[i];

    Tape* tape = active_tape();
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), yi = out.impl();
        tape->record([ai, bi, yi] {
            if (yi->grad.empty()) return;
            if (ai->requires_grad) detail::accumulate_grad(*ai, yi->grad);
            if (bi->requires_grad) detail::accumulate_grad(*bi, yi->grad);
        });
    }
    check_finite(out, "add");
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const float* av = a.data();
    const float* bv = b.data();
    float* y = out.data();
    for (i64 i = 0, n = a.numel(); i < n; ++i) y[i] = av[i] - bv[i];

    Tape* tape = active_tape();
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), yi = out.impl();
        tape->record([ai, bi, yi] {
            if (yi->grad.empty()) return;
            if (ai->requires_grad) detail::accumulate_grad(*ai, yi->grad);
            if (bi->requires_grad) {
                auto g = detail::ensure_grad(*bi);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= yi->grad[i];
            }
        });
    }
    check_finite(out, "sub");
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const float* av = a.data();
    const float* bv = b.data();
    float* y = out.data();
    for (i64 i = 0, n = a.numel(); i < n; ++i) y[i] = av[i] * bv[i];

    Tape* tape = active_tape();
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto ai = a.impl(), bi = b.impl(), yi = out.impl();
        tape->record([ai, bi, yi] {
            if (yi->grad.empty()) return;
            const float* gy = yi->grad.data();
            if (ai->requires_grad) {
                auto g = detail::ensure_grad(*ai);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * bi->values[i];
            }
            if (bi->requires_grad) {
                auto g = detail::ensure_grad(*bi);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * ai->values[i];
            }
        });
    }
    check_finite(out, "mul");
    return out;
}

Tensor scale(const Tensor& a, float s) {
    Tensor out = Tensor::zeros(a.shape());
    const float* av = a.data();
    float* y = out.data();
    for (i64 i = 0, n = a.numel(); i < n; ++i) y[i] = av[i] * s;

    Tape* tape = active_tape();
    if (tape && a.requires_grad()) {
        out.set_requires_grad(true);
        auto ai = a.impl(), yi = out.impl();
        tape->record([ai, yi, s] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            auto g = detail::ensure_grad(*ai);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * yi->grad[i];
        });
    }
    check_finite(out, "scale");
    return out;
}

Tensor add_scalar(const Tensor& a, float s) {
    Tensor out = Tensor::zeros(a.shape());
    const float* av = a.data();
    float* y = out.data();
    for (i64 i = 0, n = a.numel(); i < n; ++i) y[i] = av[i] + s;

    Tape* tape = active_tape();
    if (tape && a.requires_grad()) {
        out.set_requires_grad(true);
        auto ai = a.impl(), yi = out.impl();
        tape->record([ai, yi] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            detail::accumulate_grad(*ai, yi->grad);
        });
    }
    check_finite(out, "add_scalar");
    return out;
}

Tensor abs(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const float* av = a.data();
    float* y = out.data();
    for (i64 i = 0, n = a.numel(); i < n; ++i) y[i] = std::fabs(av[i]);

    Tape* tape = active_tape();
    if (tape && a.requires_grad()) {
        out.set_requires_grad(true);
        auto ai = a.impl(), yi = out.impl();
        tape->record([ai, yi] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            auto g = detail::ensure_grad(*ai);
            const float* gy = yi->grad.data();
            const float* xv = ai->values.data();
            // subgradient 0 at the kink
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += xv[i] > 0.0f ? gy[i] : (xv[i] < 0.0f ? -gy[i] : 0.0f);
        });
    }
    return out;
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.values()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));

    Tape* tape = active_tape();
    if (tape && a.requires_grad()) {
        out.set_requires_grad(true);
        auto ai = a.impl(), yi = out.impl();
        tape->record([ai, yi] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            const float g = yi->grad[0];
            auto gx = detail::ensure_grad(*ai);
            for (auto& v : gx) v += g;
        });
    }
    check_finite(out, "sum_all");
    return out;
}

Tensor mean_all(const Tensor& a) {
    const i64 n = a.numel();
    double acc = 0.0;
    for (float v : a.values()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));

    Tape* tape = active_tape();
    if (tape && a.requires_grad()) {
        out.set_requires_grad(true);
        auto ai = a.impl(), yi = out.impl();
        const float inv = 1.0f / static_cast<float>(n);
        tape->record([ai, yi, inv] {
            if (yi->grad.empty() || !ai->requires_grad) return;
            const float g = yi->grad[0] * inv;
            auto gx = detail::ensure_grad(*ai);
            for (auto& v : gx) v += g;
        });
    }
    check_finite(out, "mean_all");
    return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ArgumentError("concat_channels: empty input list");
    const i64 N = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
    i64 C = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p.ndim() != 4 || p.dim(0) != N || p.dim(2) != H || p.dim(3) != W)
            throw DimensionError("concat_channels: parts must share N,H,W");
        C += p.dim(1);
        any_grad = any_grad || p.requires_grad();
    }
    Tensor out = Tensor::zeros({N, C, H, W});
    float* y = out.data();
    const i64 plane = H * W;
    i64 c0 = 0;
    for (const auto& p : parts) {
        const i64 pc = p.dim(1);
        const float* x = p.data();
        for (i64 n = 0; n < N; ++n)
            std::copy(x + n * pc * plane, x + (n + 1) * pc * plane, y + (n * C + c0) * plane);
        c0 += pc;
    }

    Tape* tape = active_tape();
    if (tape && any_grad) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorImpl>> impls;
        impls.reserve(parts.size());
        for (const auto& p : parts) impls.push_back(p.impl());
        auto yi = out.impl();
        tape->record([impls, yi, N, C, plane] {
            if (yi->grad.empty()) return;
            const float* gy = yi->grad.data();
            i64 c0 = 0;
            for (const auto& pi : impls) {
                const i64 pc = pi->shape[1];
                if (pi->requires_grad) {
                    auto g = detail::ensure_grad(*pi);
                    for (i64 n = 0; n < N; ++n) {
                        const float* src = gy + (n * C + c0) * plane;
                        float* dst = g.data() + n * pc * plane;
                        for (i64 i = 0; i < pc * plane; ++i) dst[i] += src[i];
                    }
                }
                c0 += pc;
            }
        });
    }
    return out;
}

Tensor repeat_channels(const Tensor& input, int times) {
    if (times < 1) throw ArgumentError("repeat_channels: times must be positive");
    std::vector<Tensor> parts(static_cast<std::size_t>(times), input);
    return concat_channels(parts);
}

Tensor global_avg_pool(const Tensor& input) {
    if (input.ndim() != 4) throw DimensionError("global_avg_pool expects a 4-D tensor");
    const i64 N = input.dim(0), C = input.dim(1), plane = input.dim(2) * input.dim(3);
    Tensor out = Tensor::zeros({N, C});
    const float* x = input.data();
    float* y = out.data();
    for (i64 nc = 0; nc < N * C; ++nc) {
        double acc = 0.0;
        const float* xp = x + nc * plane;
        for (i64 i = 0; i < plane; ++i) acc += xp[i];
        y[nc] = static_cast<float>(acc / static_cast<double>(plane));
    }

    Tape* tape = active_tape();
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xi = input.impl(), yi = out.impl();
        const float inv = 1.0f / static_cast<float>(plane);
        tape->record([xi, yi, N, C, plane, inv] {
            if (yi->grad.empty() || !xi->requires_grad) return;
            auto gx = detail::ensure_grad(*xi);
            for (i64 nc = 0; nc < N * C; ++nc) {
                const float g = yi->grad[static_cast<std::size_t>(nc)] * inv;
                float* dst = gx.data() + nc * plane;
                for (i64 i = 0; i < plane; ++i) dst[i] += g;
            }
        });
    }
    return out;
}

} // namespace angio
