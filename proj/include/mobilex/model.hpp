#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mobilex/layers.hpp"
#include "mobilex/tensor.hpp"

namespace mobilex {

enum class Variant { small, base, large };

Variant variant_from_string(const std::string& name);
std::string to_string(Variant v);

struct ArchitectureConfig {
    Variant variant = Variant::base;
    std::vector<int> bridge_dilations{1, 2, 3};
    // Uniform channel scale; 1.0 reproduces the published widths. Scaled
    // channels are rounded and floored at 1.
    double width_mult = 1.0;

    void validate() const;
};

struct CostRow {
    std::string name;
    std::int64_t parameters = 0;
    std::int64_t macs = 0;
};

struct CostReport {
    std::int64_t parameters = 0;  // conv weights + BN affine pairs
    std::int64_t macs = 0;        // one MAC = one multiply + one add
    std::vector<CostRow> rows;
};

// Exact MAC counts of the two factorizations at one spatial site grid, for
// ratio checks in rational arithmetic.
std::int64_t separable_macs(int kernel, int in_ch, int out_ch, std::int64_t sites);
std::int64_t regular_macs(int kernel, int in_ch, int out_ch, std::int64_t sites);

template <typename T>
using NamedTensor = std::pair<std::string, Tensor<T>>;

// Two stacked encoder-decoder subnetworks with dilated-conv bridges, additive
// skip connections and a single-channel depth head. Output spatial size
// equals input spatial size.
template <typename T>
class MobileXNet {
public:
    explicit MobileXNet(const ArchitectureConfig& cfg);

    Tensor<T> forward(const Tensor<T>& input, Mode mode);

    // Learnable tensors (conv weights, BN gamma/beta), in layer order.
    std::vector<NamedTensor<T>> parameters() const;
    // Parameters plus BN running statistics; the checkpointed state.
    std::vector<NamedTensor<T>> state() const;
    // Subset of state() belonging to the first subnetwork's encoder.
    std::vector<NamedTensor<T>> backbone_state() const;

    // Gaussian init with std sqrt(2 / fan_in); BN gamma=1, beta=0.
    // Deterministic for a fixed seed.
    void init_weights(std::uint64_t seed);

    CostReport cost(int input_h, int input_w) const;

    const ArchitectureConfig& config() const { return cfg_; }
    // Spatial reduction of the deepest feature map (16 or 32).
    int max_downsample() const;
    // Spatial size of the first subnetwork's bottleneck for a given input.
    std::pair<int, int> bottleneck_size(int input_h, int input_w) const;

private:
    struct ConvBN {
        Tensor<T> weight;
        ConvSpec spec;
        BatchNormState<T> bn;
        bool has_bn = true;
        bool relu = true;
        std::string name;
    };
    struct SepBlock {
        ConvBN dw;  // depthwise conv + BN + ReLU
        ConvBN pw;  // pointwise conv + BN + ReLU
    };
    struct UpBlock {
        ConvBN conv;                    // 3x3 halving conv before the bilinear x2
        int skip = -1;                  // index into the feature ledger, -1 = none
        std::optional<ConvBN> project;  // 1x1 channel adapter on the skip path
    };
    // Build-time ledger entry for skip matching; index doubles as runtime slot.
    struct Feature {
        int level;     // 0 = full resolution, k = 1/2^k
        int channels;
    };

    ConvBN make_conv(std::string name, int in_ch, int out_ch, int kernel, int stride, int dilation,
                     bool depthwise, bool relu);
    int record_feature(int level, int channels);
    void attach_skip(UpBlock& block, int level, int channels);
    Tensor<T> run_conv_bn(ConvBN& layer, const Tensor<T>& x, Mode mode);
    Tensor<T> run_up_block(UpBlock& block, const Tensor<T>& x, int out_h, int out_w,
                           const std::vector<Tensor<T>>& slots, Mode mode);

    template <typename Fn>
    void visit(Fn&& fn);  // enumerates every ConvBN in forward order

    ArchitectureConfig cfg_;
    ConvBN input_conv_;                 // encoder1 stem
    std::vector<SepBlock> encoder1_;
    std::vector<int> encoder1_strides_;
    std::vector<int> encoder1_slots_;   // ledger index per encoder1 block output
    std::vector<ConvBN> bridge1_;
    std::vector<UpBlock> decoder1_;
    std::vector<std::vector<ConvBN>> encoder2_;  // blocks of 1-2 convs
    std::vector<int> encoder2_slots_;
    int f2_slot_ = -1;
    std::vector<ConvBN> bridge2_;
    std::vector<UpBlock> decoder2_;
    ConvBN head_;
    std::vector<Feature> ledger_;
    int stem_slot_ = -1;
};

// Replaces the first subnetwork's encoder weights from a named-tensor map;
// every other layer is untouched. Missing name or shape mismatch is fatal.
template <typename T>
void load_pretrained_backbone(MobileXNet<T>& model,
                              const std::vector<NamedTensor<T>>& tensors);

}  // namespace mobilex
