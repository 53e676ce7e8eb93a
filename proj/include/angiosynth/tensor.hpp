#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "angiosynth/errors.hpp"
#include "angiosynth/rng.hpp"

namespace angio {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
    Shape shape;
    std::vector<float> values;
    std::vector<float> grad; // empty until a backward pass touches it
    bool requires_grad = false;
};

// Value-semantics handle onto a shared f32 buffer in NCHW row-major layout.
// Copies are shallow; ops return fresh tensors. Gradient buffers are lazily
// allocated and accumulate across backward calls until zero_grad().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, float value);
    static Tensor from(Shape shape, std::vector<float> values);
    static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f, float mean = 0.0f);
    static Tensor scalar(float value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t ndim() const { return static_cast<std::int64_t>(impl_->shape.size()); }
    std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->values.size()); }

    std::span<float> values() { return impl_->values; }
    std::span<const float> values() const { return impl_->values; }
    float* data() { return impl_->values.data(); }
    const float* data() const { return impl_->values.data(); }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool flag) {
        impl_->requires_grad = flag;
        return *this;
    }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    // Allocates (zero-filled) on first access.
    std::span<float> grad();
    std::span<const float> grad_view() const { return impl_->grad; }
    void zero_grad() {
        if (impl_) impl_->grad.clear();
    }

    float item() const;

    // Shares the value buffer, drops the gradient linkage.
    Tensor detach() const;
    // Deep copy of values (no grad, no requires_grad).
    Tensor clone() const;

    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Nodes are appended in execution order, which is a
// topological order by construction; backward() replays them once, in reverse.
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    friend void backward(const Tensor& loss, Tape& tape);

private:
    std::vector<std::function<void()>> nodes_;
};

// Installs `tape` as the recording target for ops on this thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

Tape* active_tape();

// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse, accumulating
// into the grad buffer of every requires_grad tensor reachable from `loss`.
void backward(const Tensor& loss, Tape& tape);

// Debug-mode NaN/Inf screening, applied after every op when enabled.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();
void check_finite(const Tensor& t, const char* op_name);

namespace detail {
std::span<float> ensure_grad(TensorImpl& impl);
void accumulate_grad(TensorImpl& impl, std::span<const float> delta);
} // namespace detail

} // namespace angio
