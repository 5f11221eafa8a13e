#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mobilex/errors.hpp"

namespace mobilex {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // empty until first accessed
};

// Dense row-major tensor with value semantics over shared storage. Copies
// alias the same buffer; ops always allocate fresh outputs.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values);
    static Tensor scalar(T value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    T item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool value);

    // Gradient buffer, zero-allocated on first access.
    std::span<T> grad();
    bool has_grad() const { return defined() && !impl_->grad.empty(); }
    void zero_grad();

    Tensor clone() const;  // deep copy of data only (leaf, no grad)

    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

// Reverse-mode tape. Ops append nodes in execution order; backward() replays
// them strictly in reverse. One tape is active per thread at a time.
template <typename T>
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::shared_ptr<TensorImpl<T>> output, std::function<void()> backward_fn);
    std::size_t size() const { return nodes_.size(); }
    void clear();

    // Scalar root only. Non-leaf grads are recomputed from scratch; leaf grads
    // accumulate additively across calls.
    void backward(const Tensor<T>& root);

private:
    struct Node {
        std::shared_ptr<TensorImpl<T>> output;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
    Tape* previous_ = nullptr;
};

// Suspends tape recording for its lifetime (inference / constant transforms).
template <typename T>
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
bool grad_recording();

// Convenience: backward through the currently active tape.
template <typename T>
void backward(const Tensor<T>& root);

// --- Elementwise ops (equal shapes; no broadcasting beyond tensor-scalar) ---
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
// Sum over all elements to a scalar; accumulates in double.
template <typename T> Tensor<T> sum(const Tensor<T>& a);

void check_same_shape(const Shape& a, const Shape& b, const char* op);

// Debug-build guard: throws NumericError on NaN/Inf. No-op in release.
template <typename T>
void debug_check_finite(const Tensor<T>& t, const char* op);

}  // namespace mobilex
