#pragma once

#include "mobilex/tensor.hpp"

namespace mobilex {

// Kernel/stride/dilation/grouping descriptor for 2-D convolution.
// Square kernels only; depthwise means groups == in_channels.
struct ConvSpec {
    int in_channels = 1;
    int out_channels = 1;
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
    int padding = 0;
    bool depthwise = false;

    void validate() const;
    int effective_kernel() const { return dilation * (kernel - 1) + 1; }
    int out_size(int in) const;
};

enum class Mode { train, eval };

template <typename T>
struct BatchNormState {
    Tensor<T> gamma;         // learnable scale, init 1
    Tensor<T> beta;          // learnable shift, init 0
    Tensor<T> running_mean;  // eval-mode statistics
    Tensor<T> running_var;
    T momentum = T(0.1);
    T epsilon = T(1e-5);

    static BatchNormState make(int channels);
};

// Cross-correlation (no kernel flip) with zero padding.
// input [B,Cin,H,W], weights [Cout, Cin/groups, Dk, Dk]; no bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec);

// Depthwise stage followed by the 1x1 pointwise stage; raw convs, no BN/ReLU.
// dw_weights [M,1,Dk,Dk], pw_weights [N,M,1,1].
template <typename T>
Tensor<T> depthwise_separable(const Tensor<T>& input, const Tensor<T>& dw_weights,
                              const Tensor<T>& pw_weights, const ConvSpec& spec);

// Train mode normalizes with batch statistics and updates the running stats;
// eval mode is a per-channel affine map from the running stats.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state, Mode mode);

// Bilinear interpolation with half-pixel centers (align_corners = false).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, int out_h, int out_w);

}  // namespace mobilex
