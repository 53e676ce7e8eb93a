#include <algorithm>
#include <cstdint>

#include "angiosynth/ops.hpp"

namespace angio {
namespace {

using i64 = std::int64_t;

inline i64 ceil_div(i64 a, i64 b) { // b > 0
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

// Valid output index range [lo, hi) such that o*stride + off lands in [0, n).
inline void valid_range(i64 n_out, i64 n_in, i64 stride, i64 off, i64& lo, i64& hi) {
    lo = std::max<i64>(0, ceil_div(-off, stride));
    hi = std::min<i64>(n_out, ceil_div(n_in - off, stride));
    if (hi < lo) hi = lo;
}

struct ConvDims {
    i64 n, ci, h, w;   // input
    i64 co, k;         // weight
    i64 stride, dil, pad;
    i64 ho, wo;        // output
};

// y[n,co,oh,ow] = bias[co] + sum_{ci,kh,kw} w[co,ci,kh,kw] * x[n,ci,oh*s+kh*d-p, ow*s+kw*d-p]
void conv_forward(const float* x, const float* w, const float* bias, float* y, const ConvDims& d) {
    const i64 y_plane = d.ho * d.wo;
    const i64 x_plane = d.h * d.w;
    for (i64 n = 0; n < d.n; ++n) {
        for (i64 co = 0; co < d.co; ++co) {
            float* yb = y + (n * d.co + co) * y_plane;
            const float b = bias ? bias[co] : 0.0f;
            std::fill(yb, yb + y_plane, b);
            for (i64 ci = 0; ci < d.ci; ++ci) {
                const float* xb = x + (n * d.ci + ci) * x_plane;
                const float* wb = w + (co * d.ci + ci) * d.k * d.k;
                for (i64 kh = 0; kh < d.k; ++kh) {
                    const i64 off_h = kh * d.dil - d.pad;
                    i64 oh_lo, oh_hi;
                    valid_range(d.ho, d.h, d.stride, off_h, oh_lo, oh_hi);
                    for (i64 kw = 0; kw < d.k; ++kw) {
                        const float wv = wb[kh * d.k + kw];
                        if (wv == 0.0f) continue;
                        const i64 off_w = kw * d.dil - d.pad;
                        i64 ow_lo, ow_hi;
                        valid_range(d.wo, d.w, d.stride, off_w, ow_lo, ow_hi);
                        for (i64 oh = oh_lo; oh < oh_hi; ++oh) {
                            const float* xr = xb + (oh * d.stride + off_h) * d.w + (ow_lo * d.stride + off_w);
                            float* yr = yb + oh * d.wo;
                            if (d.stride == 1) {
                                for (i64 ow = ow_lo; ow < ow_hi; ++ow) yr[ow] += wv * xr[ow - ow_lo];
                            } else {
                                for (i64 ow = ow_lo; ow < ow_hi; ++ow) yr[ow] += wv * xr[(ow - ow_lo) * d.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

// gx[n,ci,ih,iw] += sum_{co,kh,kw} w[co,ci,kh,kw] * gy[n,co,oh,ow], ih = oh*s+kh*d-p
void conv_grad_input(const float* gy, const float* w, float* gx, const ConvDims& d) {
    const i64 y_plane = d.ho * d.wo;
    const i64 x_plane = d.h * d.w;
    for (i64 n = 0; n < d.n; ++n) {
        for (i64 ci = 0; ci < d.ci; ++ci) {
            float* xb = gx + (n * d.ci + ci) * x_plane;
            for (i64 co = 0; co < d.co; ++co) {
                const float* yb = gy + (n * d.co + co) * y_plane;
                const float* wb = w + (co * d.ci + ci) * d.k * d.k;
                for (i64 kh = 0; kh < d.k; ++kh) {
                    const i64 off_h = kh * d.dil - d.pad;
                    i64 oh_lo, oh_hi;
                    valid_range(d.ho, d.h, d.stride, off_h, oh_lo, oh_hi);
                    for (i64 kw = 0; kw < d.k; ++kw) {
                        const float wv = wb[kh * d.k + kw];
                        if (wv == 0.0f) continue;
                        const i64 off_w = kw * d.dil - d.pad;
                        i64 ow_lo, ow_hi;
                        valid_range(d.wo, d.w, d.stride, off_w, ow_lo, ow_hi);
                        for (i64 oh = oh_lo; oh < oh_hi; ++oh) {
                            float* xr = xb + (oh * d.stride + off_h) * d.w + (ow_lo * d.stride + off_w);
                            const float* yr = yb + oh * d.wo;
                            if (d.stride == 1) {
                                for (i64 ow = ow_lo; ow < ow_hi; ++ow) xr[ow - ow_lo] += wv * yr[ow];
                            } else {
                                for (i64 ow = ow_lo; ow < ow_hi; ++ow) xr[(ow - ow_lo) * d.stride] += wv * yr[ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

// gw[co,ci,kh,kw] += sum_{n,oh,ow} gy[n,co,oh,ow] * x[n,ci,oh*s+kh*d-p, ow*s+kw*d-p]
void conv_grad_weight(const float* gy, const float* x, float* gw, const ConvDims& d) {
    const i64 y_plane = d.ho * d.wo;
    const i64 x_plane = d.h * d.w;
    for (i64 co = 0; co < d.co; ++co) {
        for (i64 ci = 0; ci < d.ci; ++ci) {
            float* wb = gw + (co * d.ci + ci) * d.k * d.k;
            for (i64 kh = 0; kh < d.k; ++kh) {
                const i64 off_h = kh * d.dil - d.pad;
                i64 oh_lo, oh_hi;
                valid_range(d.ho, d.h, d.stride, off_h, oh_lo, oh_hi);
                for (i64 kw = 0; kw < d.k; ++kw) {
                    const i64 off_w = kw * d.dil - d.pad;
                    i64 ow_lo, ow_hi;
                    valid_range(d.wo, d.w, d.stride, off_w, ow_lo, ow_hi);
                    double acc = 0.0;
                    for (i64 n = 0; n < d.n; ++n) {
                        const float* yb = gy + (n * d.co + co) * y_plane;
                        const float* xb = x + (n * d.ci + ci) * x_plane;
                        for (i64 oh = oh_lo; oh < oh_hi; ++oh) {
                            const float* yr = yb + oh * d.wo;
                            const float* xr = xb + (oh * d.stride + off_h) * d.w + (ow_lo * d.stride + off_w);
                            float part = 0.0f;
                            if (d.stride == 1) {
                                for (i64 ow = ow_lo; ow < ow_hi; ++ow) part += yr[ow] * xr[ow - ow_lo];
                            } else {
                                for (i64 ow = ow_lo; ow < ow_hi; ++ow) part += yr[ow] * xr[(ow - ow_lo) * d.stride];
                            }
                            acc += part;
                        }
                    }
                    wb[kh * d.k + kw] += static_cast<float>(acc);
                }
            }
        }
    }
}

// Depthwise variants: one k x k filter per channel, weight [C,1,k,k].
void dw_forward(const float* x, const float* w, float* y, const ConvDims& d) {
    const i64 y_plane = d.ho * d.wo;
    const i64 x_plane = d.h * d.w;
    for (i64 n = 0; n < d.n; ++n) {
        for (i64 c = 0; c < d.ci; ++c) {
            float* yb = y + (n * d.ci + c) * y_plane;
            std::fill(yb, yb + y_plane, 0.0f);
            const float* xb = x + (n * d.ci + c) * x_plane;
            const float* wb = w + c * d.k * d.k;
            for (i64 kh = 0; kh < d.k; ++kh) {
                const i64 off_h = kh * d.dil - d.pad;
                i64 oh_lo, oh_hi;
                valid_range(d.ho, d.h, d.stride, off_h, oh_lo, oh_hi);
                for (i64 kw = 0; kw < d.k; ++kw) {
                    const float wv = wb[kh * d.k + kw];
                    const i64 off_w = kw * d.dil - d.pad;
                    i64 ow_lo, ow_hi;
                    valid_range(d.wo, d.w, d.stride, off_w, ow_lo, ow_hi);
                    for (i64 oh = oh_lo; oh < oh_hi; ++oh) {
                        const float* xr = xb + (oh * d.stride + off_h) * d.w + (ow_lo * d.stride + off_w);
                        float* yr = yb + oh * d.wo;
                        if (d.stride == 1) {
                            for (i64 ow = ow_lo; ow < ow_hi; ++ow) yr[ow] += wv * xr[ow - ow_lo];
                        } else {
                            for (i64 ow = ow_lo; ow < ow_hi; ++ow) yr[ow] += wv * xr[(ow - ow_lo) * d.stride];
                        }
                    }
                }
            }
        }
    }
}

void dw_grad_input(const float* gy, const float* w, float* gx, const ConvDims& d) {
    const i64 y_plane = d.ho * d.wo;
    const i64 x_plane = d.h * d.w;
    for (i64 n = 0; n < d.n; ++n) {
        for (i64 c = 0; c < d.ci; ++c) {
            float* xb = gx + (n * d.ci + c) * x_plane;
            const float* yb = gy + (n * d.ci + c) * y_plane;
            const float* wb = w + c * d.k * d.k;
            for (i64 kh = 0; kh < d.k; ++kh) {
                const i64 off_h = kh * d.dil - d.pad;
                i64 oh_lo, oh_hi;
                valid_range(d.ho, d.h, d.stride, off_h, oh_lo, oh_hi);
                for (i64 kw = 0; kw < d.k; ++kw) {
                    const float wv = wb[kh * d.k + kw];
                    const i64 off_w = kw * d.dil - d.pad;
                    i64 ow_lo, ow_hi;
                    valid_range(d.wo, d.w, d.stride, off_w, ow_lo, ow_hi);
                    for (i64 oh = oh_lo; oh < oh_hi; ++oh) {
                        float* xr = xb + (oh * d.stride + off_h) * d.w + (ow_lo * d.stride + off_w);
                        const float* yr = yb + oh * d.wo;
                        for (i64 ow = ow_lo; ow < ow_hi; ++ow) xr[(ow - ow_lo) * d.stride] += wv * yr[ow];
                    }
                }
            }
        }
    }
}

void dw_grad_weight(const float* gy, const float* x, float* gw, const ConvDims& d) {
    const i64 y_plane = d.ho * d.wo;
    const i64 x_plane = d.h * d.w;
    for (i64 c = 0; c < d.ci; ++c) {
        float* wb = gw + c * d.k * d.k;
        for (i64 kh = 0; kh < d.k; ++kh) {
            const i64 off_h = kh * d.dil - d.pad;
            i64 oh_lo, oh_hi;
            valid_range(d.ho, d.h, d.stride, off_h, oh_lo, oh_hi);
            for (i64 kw = 0; kw < d.k; ++kw) {
                const i64 off_w = kw * d.dil - d.pad;
                i64 ow_lo, ow_hi;
                valid_range(d.wo, d.w, d.stride, off_w, ow_lo, ow_hi);
                double acc = 0.0;
                for (i64 n = 0; n < d.n; ++n) {
                    const float* yb = gy + (n * d.ci + c) * y_plane;
                    const float* xb = x + (n * d.ci + c) * x_plane;
                    for (i64 oh = oh_lo; oh < oh_hi; ++oh) {
                        const float* yr = yb + oh * d.wo;
                        const float* xr = xb + (oh * d.stride + off_h) * d.w + (ow_lo * d.stride + off_w);
                        float part = 0.0f;
                        for (i64 ow = ow_lo; ow < ow_hi; ++ow) part += yr[ow] * xr[(ow - ow_lo) * d.stride];
                        acc += part;
                    }
                }
                wb[kh * d.k + kw] += static_cast<float>(acc);
            }
        }
    }
}

i64 conv_out_size(i64 in, i64 k, i64 stride, i64 dil, i64 pad) {
    return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

void check_conv_args(int stride, int dilation, int padding) {
    if (stride < 1 || dilation < 1) throw ArgumentError("stride and dilation must be positive");
    if (padding < 0) throw ArgumentError("padding must be non-negative");
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int dilation, int padding) {
    check_conv_args(stride, dilation, padding);
    if (!input.defined() || input.ndim() != 4) throw DimensionError("conv2d input must be 4-D");
    if (!weight.defined() || weight.ndim() != 4 || weight.dim(2) != weight.dim(3))
        throw DimensionError("conv2d weight must be [Cout,Cin,k,k]");
    ConvDims d{};
    d.n = input.dim(0);
    d.ci = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.co = weight.dim(0);
    d.k = weight.dim(2);
    d.stride = stride;
    d.dil = dilation;
    d.pad = padding;
    if (weight.dim(1) != d.ci)
        throw DimensionError("conv2d channel mismatch: input has " + std::to_string(d.ci) +
                             ", weight expects " + std::to_string(weight.dim(1)));
    const i64 extent = (d.k - 1) * d.dil + 1;
    if (extent > d.h + 2 * d.pad || extent > d.w + 2 * d.pad)
        throw ArgumentError("conv2d kernel extent exceeds padded input size");
    if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != d.co))
        throw DimensionError("conv2d bias must be [Cout]");
    d.ho = conv_out_size(d.h, d.k, d.stride, d.dil, d.pad);
    d.wo = conv_out_size(d.w, d.k, d.stride, d.dil, d.pad);

    Tensor out = Tensor::zeros({d.n, d.co, d.ho, d.wo});
    conv_forward(input.data(), weight.data(), bias.defined() ? bias.data() : nullptr, out.data(), d);

    Tape* tape = active_tape();
    const bool rec = tape && (input.requires_grad() || weight.requires_grad() ||
                              (bias.defined() && bias.requires_grad()));
    if (rec) {
        out.set_requires_grad(true);
        auto xi = input.impl(), wi = weight.impl(), yi = out.impl();
        auto bi = bias.defined() ? bias.impl() : nullptr;
        tape->record([xi, wi, bi, yi, d] {
            if (yi->grad.empty()) return;
            const float* gy = yi->grad.data();
            if (xi->requires_grad)
                conv_grad_input(gy, wi->values.data(), detail::ensure_grad(*xi).data(), d);
            if (wi->requires_grad)
                conv_grad_weight(gy, xi->values.data(), detail::ensure_grad(*wi).data(), d);
            if (bi && bi->requires_grad) {
                auto gb = detail::ensure_grad(*bi);
                const i64 plane = d.ho * d.wo;
                for (i64 n = 0; n < d.n; ++n)
                    for (i64 co = 0; co < d.co; ++co) {
                        const float* yr = gy + (n * d.co + co) * plane;
                        double acc = 0.0;
                        for (i64 i = 0; i < plane; ++i) acc += yr[i];
                        gb[static_cast<std::size_t>(co)] += static_cast<float>(acc);
                    }
            }
        });
    }
    check_finite(out, "conv2d");
    return out;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& weight, int stride, int dilation) {
    check_conv_args(stride, dilation, 0);
    if (!input.defined() || input.ndim() != 4) throw DimensionError("depthwise_conv2d input must be 4-D");
    if (!weight.defined() || weight.ndim() != 4 || weight.dim(1) != 1 || weight.dim(2) != weight.dim(3))
        throw DimensionError("depthwise weight must be [Cin,1,k,k]");
    if (weight.dim(0) != input.dim(1))
        throw DimensionError("depthwise channel mismatch: input has " + std::to_string(input.dim(1)) +
                             " channels, weight has " + std::to_string(weight.dim(0)));
    ConvDims d{};
    d.n = input.dim(0);
    d.ci = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.co = d.ci;
    d.k = weight.dim(2);
    d.stride = stride;
    d.dil = dilation;
    d.pad = 0;
    const i64 extent = (d.k - 1) * d.dil + 1;
    if (extent > d.h || extent > d.w) throw ArgumentError("depthwise kernel extent exceeds input size");
    d.ho = conv_out_size(d.h, d.k, d.stride, d.dil, 0);
    d.wo = conv_out_size(d.w, d.k, d.stride, d.dil, 0);

    Tensor out = Tensor::zeros({d.n, d.ci, d.ho, d.wo});
    dw_forward(input.data(), weight.data(), out.data(), d);

    Tape* tape = active_tape();
    if (tape && (input.requires_grad() || weight.requires_grad())) {
        out.set_requires_grad(true);
        auto xi = input.impl(), wi = weight.impl(), yi = out.impl();
        tape->record([xi, wi, yi, d] {
            if (yi->grad.empty()) return;
            const float* gy = yi->grad.data();
            if (xi->requires_grad)
                dw_grad_input(gy, wi->values.data(), detail::ensure_grad(*xi).data(), d);
            if (wi->requires_grad)
                dw_grad_weight(gy, xi->values.data(), detail::ensure_grad(*wi).data(), d);
        });
    }
    check_finite(out, "depthwise_conv2d");
    return out;
}

Tensor separable_conv2d(const Tensor& input, const Tensor& depthwise_weight,
                        const Tensor& pointwise_weight, int stride, int dilation) {
    if (!pointwise_weight.defined() || pointwise_weight.ndim() != 4 ||
        pointwise_weight.dim(2) != 1 || pointwise_weight.dim(3) != 1)
        throw DimensionError("pointwise weight must be [Cout,Cin,1,1]");
    if (pointwise_weight.dim(1) != input.dim(1))
        throw DimensionError("pointwise channel mismatch: input has " + std::to_string(input.dim(1)) +
                             " channels, pointwise expects " + std::to_string(pointwise_weight.dim(1)));
    Tensor mid = depthwise_conv2d(input, depthwise_weight, stride, dilation);
    return conv2d(mid, pointwise_weight);
}

Tensor transposed_conv2d(const Tensor& input, const Tensor& weight, int stride) {
    if (stride < 1) throw ArgumentError("stride must be positive");
    if (!input.defined() || input.ndim() != 4) throw DimensionError("transposed_conv2d input must be 4-D");
    if (!weight.defined() || weight.ndim() != 4 || weight.dim(2) != weight.dim(3))
        throw DimensionError("transposed_conv2d weight must be [Cin,Cout,k,k]");
    if (weight.dim(0) != input.dim(1))
        throw DimensionError("transposed_conv2d channel mismatch: input has " +
                             std::to_string(input.dim(1)) + " channels, weight expects " +
                             std::to_string(weight.dim(0)));
    const i64 k = weight.dim(2);
    const i64 s = stride;
    // H' = (H-1)*s + k - 2p + op must equal s*H with 0 <= op < s.
    const i64 p = std::max<i64>(0, ceil_div(k - s, 2));
    const i64 op = s + 2 * p - k;
    if (op < 0 || op >= s)
        throw ArgumentError("transposed_conv2d: no padding makes k=" + std::to_string(k) +
                            ", stride=" + std::to_string(s) + " an exact x" + std::to_string(s) +
                            " upsampling");

    ConvDims d{}; // conv view: the transposed output plays the conv input
    d.n = input.dim(0);
    d.ci = weight.dim(1); // Cout of the transposed conv
    d.h = input.dim(2) * s;
    d.w = input.dim(3) * s;
    d.co = weight.dim(0); // Cin of the transposed conv
    d.k = k;
    d.stride = s;
    d.dil = 1;
    d.pad = p;
    d.ho = input.dim(2);
    d.wo = input.dim(3);

    Tensor out = Tensor::zeros({d.n, d.ci, d.h, d.w});
    conv_grad_input(input.data(), weight.data(), out.data(), d);

    Tape* tape = active_tape();
    if (tape && (input.requires_grad() || weight.requires_grad())) {
        out.set_requires_grad(true);
        auto xi = input.impl(), wi = weight.impl(), yi = out.impl();
        tape->record([xi, wi, yi, d] {
            if (yi->grad.empty()) return;
            const float* gz = yi->grad.data();
            if (xi->requires_grad) {
                // grad w.r.t. the transposed input is the forward conv of the
                // output gradient with the same weight
                auto gx = detail::ensure_grad(*xi);
                std::vector<float> tmp(gx.size(), 0.0f);
                conv_forward(gz, wi->values.data(), nullptr, tmp.data(), d);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
            }
            if (wi->requires_grad)
                conv_grad_weight(xi->values.data(), gz, detail::ensure_grad(*wi).data(), d);
        });
    }
    check_finite(out, "transposed_conv2d");
    return out;
}

} // namespace angio
