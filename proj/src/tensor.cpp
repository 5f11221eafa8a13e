#include "mobilex/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mobilex {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void check_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) +
                         " vs " + shape_str(b));
    }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
    }
    impl_ = std::make_shared<TensorImpl<T>>();
    impl_->data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
    for (int d : shape) {
        if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
    }
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("tensor: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
    }
    impl_ = std::make_shared<TensorImpl<T>>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
    return Tensor(Shape{1}, std::vector<T>{value});
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    }
    return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
    impl_->requires_grad = value;
    return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    Tensor out;
    out.impl_ = std::make_shared<TensorImpl<T>>();
    out.impl_->shape = impl_->shape;
    out.impl_->data = impl_->data;
    return out;
}

// --- tape -------------------------------------------------------------------

namespace {
template <typename T>
Tape<T>*& active_tape_slot() {
    thread_local Tape<T>* slot = nullptr;
    return slot;
}

template <typename T>
int& no_grad_depth() {
    thread_local int depth = 0;
    return depth;
}
}  // namespace

template <typename T>
Tape<T>::Tape() {
    previous_ = active_tape_slot<T>();
    active_tape_slot<T>() = this;
}

template <typename T>
Tape<T>::~Tape() {
    active_tape_slot<T>() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
    return no_grad_depth<T>() > 0 ? nullptr : active_tape_slot<T>();
}

template <typename T>
void Tape<T>::record(std::shared_ptr<TensorImpl<T>> output, std::function<void()> backward_fn) {
    nodes_.push_back(Node{std::move(output), std::move(backward_fn)});
}

template <typename T>
void Tape<T>::clear() {
    nodes_.clear();
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& root) {
    if (root.numel() != 1) {
        throw ShapeError("backward: root has shape " + shape_str(root.shape()) +
                         ", expected a scalar");
    }
    // Node outputs are intermediates: reset them so repeated backward calls
    // accumulate only into leaves.
    for (auto& node : nodes_) {
        std::fill(node.output->grad.begin(), node.output->grad.end(), T(0));
    }
    auto root_impl = root.impl();
    if (root_impl->grad.empty()) root_impl->grad.assign(root_impl->data.size(), T(0));
    root_impl->grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->output->grad.empty()) continue;  // never reached from root
        it->backward_fn();
    }
    // The root itself may be a leaf with no recorded node; either way its grad
    // now holds d(root)/d(root) summed over calls.
}

template <typename T>
NoGradGuard<T>::NoGradGuard() {
    ++no_grad_depth<T>();
}

template <typename T>
NoGradGuard<T>::~NoGradGuard() {
    --no_grad_depth<T>();
}

template <typename T>
bool grad_recording() {
    return Tape<T>::active() != nullptr;
}

template <typename T>
void backward(const Tensor<T>& root) {
    Tape<T>* tape = Tape<T>::active();
    if (!tape) throw ConfigError("backward: no active tape on this thread");
    tape->backward(root);
}

// --- op helpers -------------------------------------------------------------

namespace {

template <typename T>
std::span<T> ensure_grad(const std::shared_ptr<TensorImpl<T>>& impl) {
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), T(0));
    return impl->grad;
}

template <typename T, typename... Inputs>
bool wants_grad(const Inputs&... inputs) {
    if (!Tape<T>::active()) return false;
    return (inputs.requires_grad() || ...);
}

template <typename T>
void record_node(Tensor<T>& out, std::function<void()> fn) {
    out.set_requires_grad(true);
    Tape<T>::active()->record(out.impl(), std::move(fn));
}

}  // namespace

template <typename T>
void debug_check_finite(const Tensor<T>& t, const char* op) {
#ifndef NDEBUG
    for (T v : t.data()) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value in output");
        }
    }
#else
    (void)t;
    (void)op;
#endif
}

// --- elementwise ops --------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "add");
    Tensor<T> out(a.shape());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) od[i] = ad[i] + bd[i];
    debug_check_finite(out, "add");
    if (wants_grad<T>(a, b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record_node(out, [ai, bi, oi] {
            auto og = oi->grad;
            auto ag = ensure_grad(ai), bg = ensure_grad(bi);
            for (std::size_t i = 0; i < og.size(); ++i) {
                ag[i] += og[i];
                bg[i] += og[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "sub");
    Tensor<T> out(a.shape());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) od[i] = ad[i] - bd[i];
    debug_check_finite(out, "sub");
    if (wants_grad<T>(a, b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record_node(out, [ai, bi, oi] {
            auto og = oi->grad;
            auto ag = ensure_grad(ai), bg = ensure_grad(bi);
            for (std::size_t i = 0; i < og.size(); ++i) {
                ag[i] += og[i];
                bg[i] -= og[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a.shape(), b.shape(), "mul");
    Tensor<T> out(a.shape());
    auto ad = a.data(), bd = b.data();
    auto od = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) od[i] = ad[i] * bd[i];
    debug_check_finite(out, "mul");
    if (wants_grad<T>(a, b)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record_node(out, [ai, bi, oi] {
            auto og = oi->grad;
            auto ag = ensure_grad(ai), bg = ensure_grad(bi);
            for (std::size_t i = 0; i < og.size(); ++i) {
                ag[i] += og[i] * bi->data[i];
                bg[i] += og[i] * ai->data[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    auto ad = a.data();
    auto od = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) od[i] = ad[i] + s;
    debug_check_finite(out, "add_scalar");
    if (wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        record_node(out, [ai, oi] {
            auto og = oi->grad;
            auto ag = ensure_grad(ai);
            for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    Tensor<T> out(a.shape());
    auto ad = a.data();
    auto od = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) od[i] = ad[i] * s;
    debug_check_finite(out, "mul_scalar");
    if (wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        record_node(out, [ai, oi, s] {
            auto og = oi->grad;
            auto ag = ensure_grad(ai);
            for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i] * s;
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    Tensor<T> out(a.shape());
    auto ad = a.data();
    auto od = out.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) od[i] = ad[i] > T(0) ? ad[i] : T(0);
    debug_check_finite(out, "relu");
    if (wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        record_node(out, [ai, oi] {
            auto og = oi->grad;
            auto ag = ensure_grad(ai);
            for (std::size_t i = 0; i < og.size(); ++i) {
                if (ai->data[i] > T(0)) ag[i] += og[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    double acc = 0.0;
    for (T v : a.data()) acc += static_cast<double>(v);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    debug_check_finite(out, "sum");
    if (wants_grad<T>(a)) {
        auto ai = a.impl(), oi = out.impl();
        record_node(out, [ai, oi] {
            T g = oi->grad[0];
            auto ag = ensure_grad(ai);
            for (std::size_t i = 0; i < ag.size(); ++i) ag[i] += g;
        });
    }
    return out;
}

// --- explicit instantiation -------------------------------------------------

#define MOBILEX_INSTANTIATE_TENSOR(T)                                   \
    template class Tensor<T>;                                           \
    template class Tape<T>;                                             \
    template class NoGradGuard<T>;                                      \
    template bool grad_recording<T>();                                  \
    template void backward<T>(const Tensor<T>&);                        \
    template void debug_check_finite<T>(const Tensor<T>&, const char*); \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);              \
    template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);              \
    template Tensor<T> relu<T>(const Tensor<T>&);                       \
    template Tensor<T> sum<T>(const Tensor<T>&);

MOBILEX_INSTANTIATE_TENSOR(float)
MOBILEX_INSTANTIATE_TENSOR(double)

}  // namespace mobilex
