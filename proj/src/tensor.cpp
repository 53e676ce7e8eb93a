#include "angiosynth/tensor.hpp"

#include <cmath>
#include <sstream>

namespace angio {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d <= 0) throw ArgumentError("tensor shape must have positive dims, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor Tensor::zeros(Shape shape) {
    auto impl = std::make_shared<TensorImpl>();
    const auto n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->values.assign(static_cast<std::size_t>(n), 0.0f);
    return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, float value) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.impl()->values) v = value;
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
    const auto n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(values.size()))
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->values = std::move(values);
    return Tensor(std::move(impl));
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, float mean) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.impl()->values) v = static_cast<float>(rng.normal(mean, stddev));
    return t;
}

Tensor Tensor::scalar(float value) { return full({1}, value); }

std::span<float> Tensor::grad() { return detail::ensure_grad(*impl_); }

float Tensor::item() const {
    if (!impl_ || impl_->values.size() != 1)
        throw ArgumentError("item() requires a scalar tensor");
    return impl_->values[0];
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->values = impl_->values; // copy: detached views never alias grads or future in-place edits
    impl->requires_grad = false;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->values = impl_->values;
    return Tensor(std::move(impl));
}

namespace {
thread_local Tape* g_active_tape = nullptr;
#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif
} // namespace

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss, Tape& tape) {
    if (!loss.defined() || loss.numel() != 1)
        throw ArgumentError("backward requires a scalar loss tensor");
    detail::ensure_grad(*loss.impl())[0] += 1.0f;
    for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) (*it)();
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

void check_finite(const Tensor& t, const char* op_name) {
    if (!g_finite_checks) return;
    for (float v : t.values()) {
        if (!std::isfinite(v))
            throw InvariantError(std::string(op_name) + " produced a non-finite value");
    }
}

namespace detail {

std::span<float> ensure_grad(TensorImpl& impl) {
    if (impl.grad.empty()) impl.grad.assign(impl.values.size(), 0.0f);
    return impl.grad;
}

void accumulate_grad(TensorImpl& impl, std::span<const float> delta) {
    auto g = ensure_grad(impl);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

} // namespace detail

} // namespace angio
