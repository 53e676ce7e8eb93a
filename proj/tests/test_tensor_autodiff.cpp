#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "angiosynth/ops.hpp"
#include "angiosynth/optim.hpp"
#include "angiosynth/tensor.hpp"

using namespace angio;

namespace {

// Independent triple-loop convolution oracle (no shared code with the library kernels).
std::vector<float> conv_oracle(const std::vector<float>& x, int N, int Ci, int H, int W,
                               const std::vector<float>& w, int Co, int k,
                               int s, int d, int p, int Ho, int Wo) {
    std::vector<float> y(static_cast<std::size_t>(N) * Co * Ho * Wo, 0.0f);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    double acc = 0.0;
                    for (int ci = 0; ci < Ci; ++ci)
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                const int ih = oh * s + kh * d - p;
                                const int iw = ow * s + kw * d - p;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += static_cast<double>(x[((n * Ci + ci) * H + ih) * W + iw]) *
                                       w[((co * Ci + ci) * k + kh) * k + kw];
                            }
                    y[((n * Co + co) * Ho + oh) * Wo + ow] = static_cast<float>(acc);
                }
    return y;
}

double dot(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    auto av = a.values();
    auto bv = b.values();
    REQUIRE(av.size() == bv.size());
    for (std::size_t i = 0; i < av.size(); ++i) acc += static_cast<double>(av[i]) * bv[i];
    return acc;
}

// Central finite differences on every element of each `wrt` tensor against
// the tape gradient of loss = <proj, forward()>.
void check_gradients_fd(const std::function<Tensor()>& forward, std::vector<Tensor> wrt,
                        double h = 1e-3, double rel_tol = 1e-2, double abs_floor = 1e-4) {
    Tensor probe = forward(); // no tape: shape probe
    Rng prng(777);
    Tensor proj = Tensor::randn(probe.shape(), prng);

    Tape tape;
    std::vector<std::vector<float>> analytic;
    {
        TapeScope scope(tape);
        for (auto& t : wrt) t.set_requires_grad(true);
        Tensor out = forward();
        Tensor loss = sum_all(mul(out, proj));
        backward(loss, tape);
        for (auto& t : wrt) {
            auto g = t.grad();
            analytic.emplace_back(g.begin(), g.end());
            t.zero_grad();
            t.set_requires_grad(false);
        }
    }

    auto loss_at = [&]() { return dot(forward(), proj); };
    for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
        auto vals = wrt[ti].values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const float keep = vals[i];
            vals[i] = keep + static_cast<float>(h);
            const double up = loss_at();
            vals[i] = keep - static_cast<float>(h);
            const double dn = loss_at();
            vals[i] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double ad = analytic[ti][i];
            if (std::fabs(ad) <= abs_floor && std::fabs(fd) <= abs_floor) continue;
            const double rel = std::fabs(fd - ad) / std::max(std::fabs(ad), std::fabs(fd));
            INFO("tensor ", ti, " element ", i, " fd=", fd, " ad=", ad);
            CHECK(rel < rel_tol);
        }
    }
}

} // namespace

TEST_CASE("conv2d: all-ones 4x4 with all-ones 3x3 kernel") {
    Tensor x = Tensor::full({1, 1, 4, 4}, 1.0f);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor y = conv2d(x, w);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    for (float v : y.values()) CHECK(v == doctest::Approx(9.0f));
}

TEST_CASE("conv2d: stride-2 dilation-2 matches the triple-loop oracle") {
    Rng rng(42);
    Tensor x = Tensor::randn({1, 1, 5, 5}, rng);
    Tensor w = Tensor::randn({1, 1, 3, 3}, rng);
    Tensor y = conv2d(x, w, Tensor(), 2, 2, 0);
    auto ref = conv_oracle({x.values().begin(), x.values().end()}, 1, 1, 5, 5,
                           {w.values().begin(), w.values().end()}, 1, 3, 2, 2, 0,
                           static_cast<int>(y.dim(2)), static_cast<int>(y.dim(3)));
    REQUIRE(static_cast<std::size_t>(y.numel()) == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i)
        CHECK(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("conv2d: multi-channel strided padded case matches the oracle") {
    Rng rng(7);
    Tensor x = Tensor::randn({2, 3, 6, 6}, rng);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
    Tensor b = Tensor::randn({4}, rng);
    Tensor y = conv2d(x, w, b, 2, 1, 1);
    auto ref = conv_oracle({x.values().begin(), x.values().end()}, 2, 3, 6, 6,
                           {w.values().begin(), w.values().end()}, 4, 3, 2, 1, 1,
                           static_cast<int>(y.dim(2)), static_cast<int>(y.dim(3)));
    for (int n = 0; n < 2; ++n)
        for (int co = 0; co < 4; ++co)
            for (std::size_t i = 0; i < static_cast<std::size_t>(y.dim(2) * y.dim(3)); ++i) {
                const std::size_t at = ((n * 4 + co) * y.dim(2) * y.dim(3)) + i;
                CHECK(y.values()[at] == doctest::Approx(ref[at] + b.values()[co]).epsilon(1e-5));
            }
}

TEST_CASE("conv2d: 1x1 identity kernel reproduces the input") {
    Rng rng(3);
    Tensor x = Tensor::randn({1, 1, 4, 4}, rng);
    Tensor w = Tensor::full({1, 1, 1, 1}, 1.0f);
    Tensor y = conv2d(x, w);
    for (std::size_t i = 0; i < static_cast<std::size_t>(x.numel()); ++i)
        CHECK(y.values()[i] == x.values()[i]);
}

TEST_CASE("conv2d: argument and dimension errors") {
    Tensor x = Tensor::full({1, 2, 4, 4}, 1.0f);
    Tensor w = Tensor::full({1, 3, 3, 3}, 1.0f); // channel mismatch
    CHECK_THROWS_AS(conv2d(x, w), DimensionError);
    Tensor w2 = Tensor::full({1, 2, 3, 3}, 1.0f);
    CHECK_THROWS_AS(conv2d(x, w2, Tensor(), 0, 1, 0), ArgumentError);
    CHECK_THROWS_AS(conv2d(x, w2, Tensor(), 1, 0, 0), ArgumentError);
    Tensor big = Tensor::full({1, 2, 9, 9}, 1.0f); // dilated extent beyond padded size
    CHECK_THROWS_AS(conv2d(big, w2, Tensor(), 1, 5, 0), ArgumentError);
}

TEST_CASE("separable_conv2d: degenerate single-channel case") {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor dw = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor pw = Tensor::full({1, 1, 1, 1}, 1.0f);
    Tensor y = separable_conv2d(x, dw, pw);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(9.0f));
}

TEST_CASE("separable_conv2d: matches composing per-channel conv2d with a 1x1 conv2d") {
    Rng rng(11);
    Tensor x = Tensor::randn({1, 2, 6, 6}, rng);
    Tensor dw = Tensor::randn({2, 1, 3, 3}, rng);
    Tensor pw = Tensor::randn({3, 2, 1, 1}, rng);
    Tensor got = separable_conv2d(x, dw, pw, 1, 1);

    // oracle route: slice channels, run them through the public conv2d, restack
    std::vector<Tensor> mids;
    for (int c = 0; c < 2; ++c) {
        std::vector<float> xc(36), wc(9);
        for (int i = 0; i < 36; ++i) xc[i] = x.values()[c * 36 + i];
        for (int i = 0; i < 9; ++i) wc[i] = dw.values()[c * 9 + i];
        mids.push_back(conv2d(Tensor::from({1, 1, 6, 6}, xc), Tensor::from({1, 1, 3, 3}, wc)));
    }
    Tensor mid = concat_channels(mids);
    Tensor want = conv2d(mid, pw);
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < static_cast<std::size_t>(got.numel()); ++i)
        CHECK(got.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-6));
}

TEST_CASE("separable_conv2d: zero pointwise annihilates any input") {
    Rng rng(5);
    Tensor x = Tensor::randn({1, 3, 5, 5}, rng);
    Tensor dw = Tensor::randn({3, 1, 3, 3}, rng);
    Tensor pw = Tensor::zeros({2, 3, 1, 1});
    Tensor y = separable_conv2d(x, dw, pw);
    for (float v : y.values()) CHECK(v == 0.0f);
}

TEST_CASE("transposed_conv2d: stride-2 doubles the spatial size") {
    Rng rng(2);
    Tensor x = Tensor::randn({1, 1, 2, 2}, rng);
    Tensor w = Tensor::randn({1, 1, 3, 3}, rng);
    Tensor y = transposed_conv2d(x, w, 2);
    CHECK(y.shape() == Shape{1, 1, 4, 4});
}

TEST_CASE("transposed_conv2d: adjoint of conv2d under the matching configuration") {
    for (int stride : {1, 2}) {
        Rng rng(100 + stride);
        Tensor a = Tensor::randn({1, 2, 8, 8}, rng);
        Tensor w = Tensor::randn({3, 2, 3, 3}, rng);
        Tensor ca = conv2d(a, w, Tensor(), stride, 1, 1);
        Tensor b = Tensor::randn(ca.shape(), rng);
        Tensor tb = transposed_conv2d(b, w, stride);
        REQUIRE(tb.shape() == a.shape());
        const double lhs = dot(ca, b);
        const double rhs = dot(a, tb);
        CHECK(std::fabs(lhs - rhs) < 1e-4 * std::max(1.0, std::fabs(lhs)));
    }
}

TEST_CASE("transposed_conv2d: impulse response stamps the kernel") {
    std::vector<float> xv(9, 0.0f);
    xv[4] = 1.0f; // center of a 3x3 input
    Tensor x = Tensor::from({1, 1, 3, 3}, xv);
    Rng rng(9);
    Tensor w = Tensor::randn({1, 1, 3, 3}, rng);
    Tensor y = transposed_conv2d(x, w, 1); // shape-preserving config
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(y.values()[i] == doctest::Approx(w.values()[i]));
}

TEST_CASE("transposed_conv2d: impossible exact-upsampling configuration is rejected") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 1.0f);
    Tensor w = Tensor::full({1, 1, 6, 6}, 1.0f); // op = s + 2p - k cannot land in [0, s)
    CHECK_THROWS_AS(transposed_conv2d(x, w, 2), ArgumentError);
}

namespace {
BatchNormState fresh_bn_state(int c) {
    BatchNormState s;
    s.running_mean = Tensor::zeros({c});
    s.running_var = Tensor::full({c}, 1.0f);
    return s;
}
} // namespace

TEST_CASE("batch_norm: constant input centers to zero (gamma=1, beta=0)") {
    BatchNormState st = fresh_bn_state(2);
    Tensor x = Tensor::full({2, 2, 3, 3}, 4.2f);
    Tensor y = batch_norm(x, Tensor::full({2}, 1.0f), Tensor::zeros({2}), st, true);
    for (float v : y.values()) CHECK(v == doctest::Approx(0.0f));
}

TEST_CASE("batch_norm: beta shifts a constant input") {
    BatchNormState st = fresh_bn_state(1);
    Tensor x = Tensor::full({1, 1, 4, 4}, -1.7f);
    Tensor y = batch_norm(x, Tensor::full({1}, 1.0f), Tensor::full({1}, 3.5f), st, true);
    for (float v : y.values()) CHECK(v == doctest::Approx(3.5f));
}

TEST_CASE("batch_norm: output moments match beta and gamma^2") {
    Rng rng(21);
    const int C = 3;
    BatchNormState st = fresh_bn_state(C);
    Tensor x = Tensor::randn({4, C, 8, 8}, rng, 2.0f, -1.0f);
    Tensor gamma = Tensor::from({C}, {0.5f, 1.0f, 2.0f});
    Tensor beta = Tensor::from({C}, {-1.0f, 0.0f, 0.7f});
    Tensor y = batch_norm(x, gamma, beta, st, true);
    const int plane = 64, N = 4;
    for (int c = 0; c < C; ++c) {
        double s = 0.0, s2 = 0.0;
        for (int n = 0; n < N; ++n)
            for (int i = 0; i < plane; ++i) {
                const double v = y.values()[(n * C + c) * plane + i];
                s += v;
                s2 += v * v;
            }
        const double m = N * plane;
        const double mean = s / m;
        const double var = s2 / m - mean * mean;
        CHECK(mean == doctest::Approx(beta.values()[c]).epsilon(1e-3));
        CHECK(var == doctest::Approx(gamma.values()[c] * gamma.values()[c]).epsilon(1e-3));
    }
}

TEST_CASE("batch_norm: zero-variance channel stays finite, eval uses running stats") {
    BatchNormState st = fresh_bn_state(1);
    Tensor x = Tensor::full({1, 1, 2, 2}, 5.0f);
    Tensor y = batch_norm(x, Tensor::full({1}, 1.0f), Tensor::zeros({1}), st, true);
    for (float v : y.values()) CHECK(std::isfinite(v));
    // running stats moved toward (5, 0): eval normalizes with them
    Tensor ye = batch_norm(x, Tensor::full({1}, 1.0f), Tensor::zeros({1}), st, false);
    const float rm = st.running_mean.values()[0];
    const float rv = st.running_var.values()[0];
    const float expect = (5.0f - rm) / std::sqrt(rv + st.eps);
    for (float v : ye.values()) CHECK(v == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("batch_norm: frozen state leaves running stats untouched") {
    BatchNormState st = fresh_bn_state(1);
    st.update = false;
    Rng rng(4);
    Tensor x = Tensor::randn({1, 1, 4, 4}, rng);
    batch_norm(x, Tensor::full({1}, 1.0f), Tensor::zeros({1}), st, true);
    CHECK(st.running_mean.values()[0] == 0.0f);
    CHECK(st.running_var.values()[0] == 1.0f);
}

TEST_CASE("leaky_relu: definition, degenerate slope, gradient") {
    Tensor x = Tensor::from({3}, {-1.0f, 0.0f, 2.0f});
    Tensor y = leaky_relu(x, 0.2f);
    CHECK(y.values()[0] == doctest::Approx(-0.2f));
    CHECK(y.values()[1] == 0.0f);
    CHECK(y.values()[2] == 2.0f);

    Tensor yi = leaky_relu(x, 1.0f);
    for (int i = 0; i < 3; ++i) CHECK(yi.values()[i] == x.values()[i]);

    // finite-difference gradient at x = -3 with h = 1e-3
    Tensor p = Tensor::from({1}, {-3.0f});
    check_gradients_fd([&] { return leaky_relu(p, 0.2f); }, {p});
}

TEST_CASE("reflection_pad: mirrors without repeating the edge") {
    // rows all equal to [1,2,3]; the padded middle row must read [2,1,2,3,2]
    Tensor x = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3});
    Tensor y = reflection_pad(x, 1);
    REQUIRE(y.shape() == Shape{1, 1, 5, 5});
    const float want[5] = {2, 1, 2, 3, 2};
    for (int c = 0; c < 5; ++c) CHECK(y.values()[2 * 5 + c] == want[c]);

    Tensor y0 = reflection_pad(x, 0);
    for (int i = 0; i < 9; ++i) CHECK(y0.values()[i] == x.values()[i]);

    CHECK_THROWS_AS(reflection_pad(x, 3), ArgumentError);
}

TEST_CASE("average_pool: arithmetic mean and errors") {
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(average_pool(x, 2).item() == doctest::Approx(2.5f));

    Tensor c = Tensor::full({1, 2, 4, 4}, 0.3f);
    Tensor yc = average_pool(c, 2);
    REQUIRE(yc.shape() == Shape{1, 2, 2, 2});
    for (float v : yc.values()) CHECK(v == doctest::Approx(0.3f));

    CHECK_THROWS_AS(average_pool(Tensor::full({1, 1, 5, 5}, 1.0f), 2), ArgumentError);
}

TEST_CASE("average_pool: random input matches the window-mean oracle") {
    Rng rng(33);
    Tensor x = Tensor::randn({1, 3, 8, 8}, rng);
    Tensor y = average_pool(x, 2);
    for (int c = 0; c < 3; ++c)
        for (int oh = 0; oh < 4; ++oh)
            for (int ow = 0; ow < 4; ++ow) {
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx)
                        acc += x.values()[(c * 8 + oh * 2 + dy) * 8 + ow * 2 + dx];
                CHECK(y.values()[(c * 4 + oh) * 4 + ow] == doctest::Approx(acc / 4.0).epsilon(1e-6));
            }
}

TEST_CASE("backward: sum gives ones, analytic quadratic gradient, accumulation") {
    Rng rng(1);
    Tensor x = Tensor::randn({2, 3}, rng);
    x.set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = sum_all(x);
        backward(loss, tape);
        for (float g : x.grad()) CHECK(g == 1.0f);
        // a second traversal accumulates
        backward(loss, tape);
        for (float g : x.grad()) CHECK(g == 2.0f);
    }

    Tensor p = Tensor::from({2}, {1.0f, -2.0f});
    p.set_requires_grad(true);
    Tape t2;
    {
        TapeScope scope(t2);
        Tensor loss = sum_all(square(p));
        backward(loss, t2);
        CHECK(p.grad()[0] == doctest::Approx(2.0f));
        CHECK(p.grad()[1] == doctest::Approx(-4.0f));
    }

    Tape t3;
    CHECK_THROWS_AS(backward(Tensor::full({3}, 1.0f), t3), ArgumentError);
}

TEST_CASE("backward: composite conv -> batch_norm -> leaky_relu -> mean matches finite differences") {
    Rng rng(55);
    Tensor x = Tensor::randn({2, 2, 4, 4}, rng);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng, 0.5f);
    Tensor b = Tensor::randn({3}, rng, 0.1f);
    Tensor gamma = Tensor::full({3}, 1.0f);
    Tensor beta = Tensor::zeros({3});
    BatchNormState st = fresh_bn_state(3);
    st.update = false; // keep the forward pure for repeated FD evaluation
    auto forward = [&] {
        Tensor h1 = conv2d(x, w, b, 1, 1, 1);
        Tensor h2 = batch_norm(h1, gamma, beta, st, true);
        Tensor h3 = leaky_relu(h2, 0.2f);
        return mean_all(h3);
    };
    check_gradients_fd(forward, {x, w, b, gamma, beta});
}

TEST_CASE("gradient suite: finite differences across every differentiable primitive") {
    Rng rng(99);
    Tensor x = Tensor::randn({1, 2, 4, 4}, rng);

    SUBCASE("conv2d strided dilated") {
        Tensor w = Tensor::randn({2, 2, 2, 2}, rng, 0.7f);
        check_gradients_fd([&] { return conv2d(x, w, Tensor(), 2, 1, 1); }, {x, w});
    }
    SUBCASE("depthwise + separable") {
        Tensor dw = Tensor::randn({2, 1, 3, 3}, rng, 0.7f);
        Tensor pw = Tensor::randn({3, 2, 1, 1}, rng, 0.7f);
        check_gradients_fd([&] { return separable_conv2d(x, dw, pw, 1, 1); }, {x, dw, pw});
    }
    SUBCASE("separable with dilation 2 via padded input") {
        Tensor xp = Tensor::randn({1, 2, 4, 4}, rng);
        Tensor dw = Tensor::randn({2, 1, 3, 3}, rng, 0.7f);
        Tensor pw = Tensor::randn({2, 2, 1, 1}, rng, 0.7f);
        check_gradients_fd([&] { return separable_conv2d(reflection_pad(xp, 2), dw, pw, 1, 2); },
                           {xp, dw, pw});
    }
    SUBCASE("transposed_conv2d stride 2") {
        Tensor w = Tensor::randn({2, 3, 3, 3}, rng, 0.7f);
        check_gradients_fd([&] { return transposed_conv2d(x, w, 2); }, {x, w});
    }
    SUBCASE("batch_norm train mode") {
        Tensor gamma = Tensor::from({2}, {1.2f, 0.8f});
        Tensor beta = Tensor::from({2}, {0.1f, -0.2f});
        BatchNormState st = fresh_bn_state(2);
        st.update = false;
        check_gradients_fd([&] { return batch_norm(x, gamma, beta, st, true); }, {x, gamma, beta});
    }
    SUBCASE("batch_norm eval mode") {
        Tensor gamma = Tensor::from({2}, {1.2f, 0.8f});
        Tensor beta = Tensor::from({2}, {0.1f, -0.2f});
        BatchNormState st = fresh_bn_state(2);
        st.running_mean = Tensor::from({2}, {0.3f, -0.4f});
        st.running_var = Tensor::from({2}, {1.5f, 0.6f});
        check_gradients_fd([&] { return batch_norm(x, gamma, beta, st, false); }, {x, gamma, beta});
    }
    SUBCASE("reflection_pad") {
        check_gradients_fd([&] { return reflection_pad(x, 2); }, {x});
    }
    SUBCASE("average_pool") {
        check_gradients_fd([&] { return average_pool(x, 2); }, {x});
    }
    SUBCASE("tanh and elementwise chain") {
        Tensor a = Tensor::randn({1, 2, 4, 4}, rng);
        check_gradients_fd([&] { return tanh(add(mul(x, a), scale(a, 0.3f))); }, {x, a});
    }
    SUBCASE("concat, repeat, global_avg_pool") {
        Tensor a = Tensor::randn({1, 1, 4, 4}, rng);
        check_gradients_fd([&] { return global_avg_pool(concat_channels({x, repeat_channels(a, 2)})); },
                           {x, a});
    }
}

TEST_CASE("adam_step: bias-corrected first step, zero-grad step, scalar recurrence") {
    // first step moves the parameter by ~alpha against the gradient sign
    AdamState st;
    st.hyper = AdamParams{};
    std::vector<float> p{1.0f};
    std::vector<float> g{0.37f};
    adam_step(std::span<float>(p), std::span<const float>(g), st);
    CHECK(st.t == 1);
    CHECK(p[0] == doctest::Approx(1.0f - st.hyper.lr).epsilon(1e-3));

    // zero gradient from a fresh state leaves the parameter unchanged, t still counts
    AdamState st0;
    std::vector<float> p0{0.5f};
    std::vector<float> g0{0.0f};
    adam_step(std::span<float>(p0), std::span<const float>(g0), st0);
    CHECK(p0[0] == 0.5f);
    CHECK(st0.t == 1);

    // 10 steps on f(p) = p^2/2 against a hand-rolled double recurrence
    AdamState st1;
    st1.hyper = AdamParams{};
    std::vector<float> pf{1.0f};
    double pr = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 10; ++t) {
        std::vector<float> grad{pf[0]};
        adam_step(std::span<float>(pf), std::span<const float>(grad), st1);
        const double gr = pr;
        m = 0.5 * m + 0.5 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        const double mhat = m / (1.0 - std::pow(0.5, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        pr -= 0.0002 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(pf[0] == doctest::Approx(pr).epsilon(1e-7));
    }

    std::vector<float> bad{1.0f, 2.0f};
    AdamState st2;
    CHECK_THROWS_AS(adam_step(std::span<float>(p), std::span<const float>(bad), st2), DimensionError);
}

TEST_CASE("determinism: identical seeds give bitwise-identical forwards") {
    auto run = [] {
        Rng rng(1234);
        Tensor x = Tensor::randn({1, 2, 8, 8}, rng);
        Tensor w = Tensor::randn({4, 2, 3, 3}, rng);
        Tensor y = conv2d(x, w, Tensor(), 2, 1, 1);
        return std::vector<float>(y.values().begin(), y.values().end());
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("no NaN/Inf escapes any op on finite inputs") {
    set_finite_checks(true);
    Rng rng(6);
    Tensor x = Tensor::randn({1, 2, 8, 8}, rng, 10.0f);
    Tensor w = Tensor::randn({2, 2, 3, 3}, rng, 10.0f);
    BatchNormState st = fresh_bn_state(2);
    Tensor y = conv2d(x, w, Tensor(), 1, 1, 1);
    y = batch_norm(y, Tensor::full({2}, 1.0f), Tensor::zeros({2}), st, true);
    y = tanh(leaky_relu(y, 0.2f));
    y = average_pool(reflection_pad(y, 1), 2);
    for (float v : y.values()) CHECK(std::isfinite(v));
}
