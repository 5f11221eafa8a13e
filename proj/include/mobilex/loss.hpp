#pragma once

#include "mobilex/tensor.hpp"

namespace mobilex {

enum class LossKind { l1, l2, berhu, hybrid };

struct LossConfig {
    LossKind kind = LossKind::hybrid;
    double berhu_fraction = 0.2;  // threshold c = fraction * max|d - d*| per batch

    void validate() const;
};

LossKind loss_kind_from_string(const std::string& name);
std::string to_string(LossKind kind);

// All losses reduce over pixels where mask > 0.5 and are differentiable w.r.t.
// the prediction d only; dstar and mask are constants. Every loss throws
// DataError when no pixel is valid.

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask);

template <typename T>
Tensor<T> l2_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask);

// Reverse Huber: |e| below the batch threshold c, (e^2 + c^2) / 2c above,
// c = berhu_fraction * max valid |e|. No gradient flows through c. c == 0
// degenerates to plain L1.
template <typename T>
Tensor<T> berhu_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask,
                     double berhu_fraction = 0.2);

// Mean |forward x-difference| + mean |forward y-difference| of the residual
// d - dstar. A difference participates only when both of its pixels are valid.
// The last two dims are spatial; leading dims are batched planes.
template <typename T>
Tensor<T> grad_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask);

// l1_loss + grad_loss, unweighted.
template <typename T>
Tensor<T> hybrid_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask);

template <typename T>
Tensor<T> compute_loss(const LossConfig& cfg, const Tensor<T>& d, const Tensor<T>& dstar,
                       const Tensor<T>& mask);

}  // namespace mobilex
