#include <cmath>
#include <cstdint>
#include <vector>

#include "angiosynth/ops.hpp"

namespace angio {
namespace {

using i64 = std::int64_t;

constexpr double kPi = 3.14159265358979323846;
constexpr double kLobes = 3.0; // Lanczos-3

double lanczos3(double t) {
    t = std::fabs(t);
    if (t < 1e-12) return 1.0;
    if (t >= kLobes) return 0.0;
    const double a = kPi * t;
    return kLobes * std::sin(a) * std::sin(a / kLobes) / (a * a);
}

struct TapRow {
    i64 start;
    std::vector<float> weights;
};

// Precomputed 1-D resampling taps, indices clamped to the edge, weights
// normalized so constants are preserved exactly.
std::vector<TapRow> build_taps(i64 n_in, i64 n_out) {
    const double scale = static_cast<double>(n_in) / static_cast<double>(n_out);
    const double filterscale = std::max(scale, 1.0);
    const double support = kLobes * filterscale;
    std::vector<TapRow> rows(static_cast<std::size_t>(n_out));
    for (i64 o = 0; o < n_out; ++o) {
        const double center = (static_cast<double>(o) + 0.5) * scale - 0.5;
        const i64 lo = static_cast<i64>(std::ceil(center - support));
        const i64 hi = static_cast<i64>(std::floor(center + support));
        std::vector<double> w(static_cast<std::size_t>(hi - lo + 1));
        double sum = 0.0;
        for (i64 j = lo; j <= hi; ++j) {
            const double v = lanczos3((static_cast<double>(j) - center) / filterscale);
            w[static_cast<std::size_t>(j - lo)] = v;
            sum += v;
        }
        TapRow& row = rows[static_cast<std::size_t>(o)];
        row.start = lo;
        row.weights.resize(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) row.weights[i] = static_cast<float>(w[i] / sum);
    }
    return rows;
}

inline i64 clamp_index(i64 j, i64 n) { return j < 0 ? 0 : (j >= n ? n - 1 : j); }

} // namespace

Tensor lanczos_resize(const Tensor& image, double factor) {
    if (image.ndim() != 4) throw DimensionError("lanczos_resize expects a 4-D tensor");
    if (factor <= 0.0) throw ArgumentError("lanczos_resize: factor must be positive");
    if (active_tape() && image.requires_grad())
        throw ArgumentError("lanczos_resize is not differentiable; detach the input first");
    const i64 N = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
    const i64 Ho = std::llround(static_cast<double>(H) * factor);
    const i64 Wo = std::llround(static_cast<double>(W) * factor);
    if (Ho < 1 || Wo < 1) throw ArgumentError("lanczos_resize: output size would be smaller than 1");

    const auto col_taps = build_taps(W, Wo);
    const auto row_taps = build_taps(H, Ho);

    // horizontal pass, then vertical
    std::vector<float> mid(static_cast<std::size_t>(N * C * H * Wo));
    const float* x = image.data();
    for (i64 nc = 0; nc < N * C; ++nc) {
        const float* xp = x + nc * H * W;
        float* mp = mid.data() + nc * H * Wo;
        for (i64 r = 0; r < H; ++r) {
            const float* src = xp + r * W;
            float* dst = mp + r * Wo;
            for (i64 o = 0; o < Wo; ++o) {
                const TapRow& t = col_taps[static_cast<std::size_t>(o)];
                double acc = 0.0;
                for (std::size_t i = 0; i < t.weights.size(); ++i)
                    acc += static_cast<double>(t.weights[i]) * src[clamp_index(t.start + static_cast<i64>(i), W)];
                dst[o] = static_cast<float>(acc);
            }
        }
    }

    Tensor out = Tensor::zeros({N, C, Ho, Wo});
    float* y = out.data();
    for (i64 nc = 0; nc < N * C; ++nc) {
        const float* mp = mid.data() + nc * H * Wo;
        float* yp = y + nc * Ho * Wo;
        for (i64 o = 0; o < Ho; ++o) {
            const TapRow& t = row_taps[static_cast<std::size_t>(o)];
            float* dst = yp + o * Wo;
            for (i64 c = 0; c < Wo; ++c) {
                double acc = 0.0;
                for (std::size_t i = 0; i < t.weights.size(); ++i)
                    acc += static_cast<double>(t.weights[i]) * mp[clamp_index(t.start + static_cast<i64>(i), H) * Wo + c];
                dst[c] = static_cast<float>(acc);
            }
        }
    }
    check_finite(out, "lanczos_resize");
    return out;
}

} // namespace angio
