#include "mobilex/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace mobilex {

Variant variant_from_string(const std::string& name) {
    if (name == "small") return Variant::small;
    if (name == "base") return Variant::base;
    if (name == "large") return Variant::large;
    throw ConfigError("architecture: unknown variant '" + name + "'");
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::small: return "small";
        case Variant::base: return "base";
        case Variant::large: return "large";
    }
    return "?";
}

void ArchitectureConfig::validate() const {
    if (bridge_dilations.empty()) {
        throw ConfigError("architecture: bridge_dilations must not be empty");
    }
    for (int r : bridge_dilations) {
        if (r < 1) throw ConfigError("architecture: dilation rate " + std::to_string(r) + " < 1");
    }
    if (!(width_mult > 0.0)) {
        throw ConfigError("architecture: width_mult must be positive");
    }
}

std::int64_t separable_macs(int kernel, int in_ch, int out_ch, std::int64_t sites) {
    return (static_cast<std::int64_t>(kernel) * kernel * in_ch +
            static_cast<std::int64_t>(in_ch) * out_ch) * sites;
}

std::int64_t regular_macs(int kernel, int in_ch, int out_ch, std::int64_t sites) {
    return static_cast<std::int64_t>(kernel) * kernel * in_ch * out_ch * sites;
}

namespace {

struct SepPlan {
    int out_ch;
    int stride;
};

struct Conv2Plan {
    int in_ch, out_ch, stride;
};

struct VariantPlan {
    int stem_out;
    std::vector<SepPlan> encoder1;
    int decoder1_blocks;
    std::vector<std::vector<Conv2Plan>> encoder2;
};

// Channel plans. The first subnetwork's encoder follows the MobileNet v1
// stage table (truncated per variant); the second subnetwork uses regular
// double-conv blocks with the block-level downsampling placed early.
VariantPlan plan_for(Variant v) {
    switch (v) {
        case Variant::base:
            return {32,
                    {{64, 1}, {128, 2}, {128, 1}, {256, 2}, {256, 1}, {512, 2}, {512, 1}, {512, 1}},
                    2,
                    {{{128, 128, 1}, {128, 256, 2}},
                     {{256, 256, 1}, {256, 512, 2}},
                     {{512, 512, 1}, {512, 512, 1}}}};
        case Variant::small:
            return {32,
                    {{64, 1}, {128, 2}, {128, 1}, {256, 2}, {256, 1}},
                    1,
                    {{{128, 128, 1}, {128, 256, 2}},
                     {{256, 256, 1}, {256, 256, 2}},
                     {{256, 256, 1}}}};
        case Variant::large:
            return {32,
                    {{64, 1}, {128, 2}, {128, 1}, {256, 2}, {256, 1}, {512, 2}, {512, 1}, {512, 1},
                     {512, 1}, {512, 1}, {512, 1}, {1024, 2}, {1024, 1}},
                    3,
                    {{{128, 128, 1}, {128, 256, 2}},
                     {{256, 256, 1}, {256, 512, 2}},
                     {{512, 1024, 1}, {1024, 1024, 1}}}};
    }
    throw ConfigError("architecture: invalid variant");
}

int ceil_half(int n) { return (n + 1) / 2; }

}  // namespace

template <typename T>
typename MobileXNet<T>::ConvBN MobileXNet<T>::make_conv(std::string name, int in_ch, int out_ch,
                                                        int kernel, int stride, int dilation,
                                                        bool depthwise, bool relu) {
    ConvBN layer;
    layer.name = std::move(name);
    layer.spec.in_channels = in_ch;
    layer.spec.out_channels = out_ch;
    layer.spec.kernel = kernel;
    layer.spec.stride = stride;
    layer.spec.dilation = dilation;
    layer.spec.padding = kernel == 1 ? 0 : dilation * (kernel - 1) / 2;  // "same" for odd kernels
    layer.spec.depthwise = depthwise;
    layer.spec.validate();
    layer.weight = Tensor<T>(Shape{out_ch, depthwise ? 1 : in_ch, kernel, kernel}, T(0), true);
    layer.bn = BatchNormState<T>::make(out_ch);
    layer.relu = relu;
    return layer;
}

template <typename T>
int MobileXNet<T>::record_feature(int level, int channels) {
    ledger_.push_back(Feature{level, channels});
    return static_cast<int>(ledger_.size()) - 1;
}

// Skip source = most recently recorded feature at the block's output scale,
// preferring an exact channel match; otherwise a 1x1 projection adapts it.
template <typename T>
void MobileXNet<T>::attach_skip(UpBlock& block, int level, int channels) {
    int fallback = -1;
    for (int i = static_cast<int>(ledger_.size()) - 1; i >= 0; --i) {
        if (ledger_[static_cast<std::size_t>(i)].level != level) continue;
        if (ledger_[static_cast<std::size_t>(i)].channels == channels) {
            block.skip = i;
            return;
        }
        if (fallback < 0) fallback = i;
    }
    if (fallback < 0) return;  // no feature at this scale, e.g. full resolution
    block.skip = fallback;
    ConvBN proj = make_conv(block.conv.name + ".project",
                            ledger_[static_cast<std::size_t>(fallback)].channels, channels, 1, 1, 1,
                            false, false);
    proj.has_bn = false;
    block.project = std::move(proj);
}

template <typename T>
MobileXNet<T>::MobileXNet(const ArchitectureConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const VariantPlan plan = plan_for(cfg_.variant);
    auto scaled = [&](int c) {
        return std::max(1, static_cast<int>(std::lround(c * cfg_.width_mult)));
    };

    int ch = scaled(plan.stem_out);
    int level = 1;
    input_conv_ = make_conv("encoder1.stem", 3, ch, 3, 2, 1, false, true);
    stem_slot_ = record_feature(level, ch);

    for (std::size_t i = 0; i < plan.encoder1.size(); ++i) {
        const int out_ch = scaled(plan.encoder1[i].out_ch);
        const int stride = plan.encoder1[i].stride;
        const std::string base = "encoder1.block" + std::to_string(i + 1);
        SepBlock block;
        block.dw = make_conv(base + ".dw", ch, ch, 3, stride, 1, true, true);
        block.pw = make_conv(base + ".pw", ch, out_ch, 1, 1, 1, false, true);
        encoder1_.push_back(std::move(block));
        encoder1_strides_.push_back(stride);
        if (stride == 2) ++level;
        ch = out_ch;
        encoder1_slots_.push_back(record_feature(level, ch));
    }

    for (std::size_t i = 0; i < cfg_.bridge_dilations.size(); ++i) {
        bridge1_.push_back(make_conv("bridge1.conv" + std::to_string(i + 1), ch, ch, 3, 1,
                                     cfg_.bridge_dilations[i], false, true));
    }

    for (int i = 0; i < plan.decoder1_blocks; ++i) {
        const int out_ch = std::max(1, ch / 2);
        UpBlock block;
        block.conv = make_conv("decoder1.up" + std::to_string(i + 1) + ".conv", ch, out_ch, 3, 1, 1,
                               false, true);
        --level;
        attach_skip(block, level, out_ch);
        decoder1_.push_back(std::move(block));
        ch = out_ch;
    }
    f2_slot_ = record_feature(level, ch);

    for (std::size_t i = 0; i < plan.encoder2.size(); ++i) {
        std::vector<ConvBN> block;
        for (std::size_t j = 0; j < plan.encoder2[i].size(); ++j) {
            const Conv2Plan& cp = plan.encoder2[i][j];
            block.push_back(make_conv("encoder2.block" + std::to_string(i + 1) + ".conv" +
                                          std::to_string(j + 1),
                                      scaled(cp.in_ch), scaled(cp.out_ch), 3, cp.stride, 1, false,
                                      true));
            if (cp.stride == 2) ++level;
            ch = scaled(cp.out_ch);
        }
        encoder2_.push_back(std::move(block));
        encoder2_slots_.push_back(record_feature(level, ch));
    }

    for (std::size_t i = 0; i < cfg_.bridge_dilations.size(); ++i) {
        bridge2_.push_back(make_conv("bridge2.conv" + std::to_string(i + 1), ch, ch, 3, 1,
                                     cfg_.bridge_dilations[i], false, true));
    }

    for (int i = 0; i < 4; ++i) {
        const int out_ch = std::max(1, ch / 2);
        UpBlock block;
        block.conv = make_conv("decoder2.up" + std::to_string(i + 1) + ".conv", ch, out_ch, 3, 1, 1,
                               false, true);
        --level;
        attach_skip(block, level, out_ch);
        decoder2_.push_back(std::move(block));
        ch = out_ch;
    }
    if (level != 0) throw ConfigError("architecture: decoder does not return to full resolution");

    head_ = make_conv("head", ch, 1, 3, 1, 1, false, false);
    head_.has_bn = false;

    init_weights(0);
}

template <typename T>
int MobileXNet<T>::max_downsample() const {
    return cfg_.variant == Variant::large ? 32 : 16;
}

template <typename T>
std::pair<int, int> MobileXNet<T>::bottleneck_size(int input_h, int input_w) const {
    int downs = 0;
    if (cfg_.variant == Variant::small) downs = 3;
    if (cfg_.variant == Variant::base) downs = 4;
    if (cfg_.variant == Variant::large) downs = 5;
    int h = input_h, w = input_w;
    for (int i = 0; i < downs; ++i) {
        h = ceil_half(h);
        w = ceil_half(w);
    }
    return {h, w};
}

template <typename T>
Tensor<T> MobileXNet<T>::run_conv_bn(ConvBN& layer, const Tensor<T>& x, Mode mode) {
    Tensor<T> y = conv2d(x, layer.weight, layer.spec);
    if (layer.has_bn) y = batchnorm(y, layer.bn, mode);
    if (layer.relu) y = relu(y);
    return y;
}

template <typename T>
Tensor<T> MobileXNet<T>::run_up_block(UpBlock& block, const Tensor<T>& x, int out_h, int out_w,
                                      const std::vector<Tensor<T>>& slots, Mode mode) {
    Tensor<T> y = run_conv_bn(block.conv, x, mode);
    y = upsample_bilinear(y, out_h, out_w);
    if (block.skip >= 0) {
        Tensor<T> skip = slots[static_cast<std::size_t>(block.skip)];
        if (block.project) skip = conv2d(skip, block.project->weight, block.project->spec);
        check_same_shape(y.shape(), skip.shape(), block.conv.name.c_str());
        y = add(y, skip);
    }
    return y;
}

template <typename T>
Tensor<T> MobileXNet<T>::forward(const Tensor<T>& input, Mode mode) {
    const Shape& is = input.shape();
    if (is.size() != 4 || is[1] != 3) {
        throw ShapeError("forward: expected [B,3,H,W] input, got " + shape_str(is));
    }
    const int levels = cfg_.variant == Variant::large ? 5 : 4;
    if (is[2] < (1 << levels) || is[3] < (1 << levels)) {
        throw ConfigError("forward: input " + std::to_string(is[2]) + "x" + std::to_string(is[3]) +
                          " smaller than the " + std::to_string(1 << levels) + "x downsampling");
    }
    // Size ladder; decoder stages upsample back onto it exactly.
    std::vector<std::pair<int, int>> sizes(static_cast<std::size_t>(levels) + 1);
    sizes[0] = {is[2], is[3]};
    for (int l = 1; l <= levels; ++l) {
        sizes[static_cast<std::size_t>(l)] = {ceil_half(sizes[static_cast<std::size_t>(l - 1)].first),
                                              ceil_half(sizes[static_cast<std::size_t>(l - 1)].second)};
    }

    std::vector<Tensor<T>> slots(ledger_.size());
    int level = 1;
    Tensor<T> x = run_conv_bn(input_conv_, input, mode);
    slots[static_cast<std::size_t>(stem_slot_)] = x;
    for (std::size_t i = 0; i < encoder1_.size(); ++i) {
        x = run_conv_bn(encoder1_[i].dw, x, mode);
        x = run_conv_bn(encoder1_[i].pw, x, mode);
        if (encoder1_strides_[i] == 2) ++level;
        slots[static_cast<std::size_t>(encoder1_slots_[i])] = x;
    }
    for (auto& layer : bridge1_) x = run_conv_bn(layer, x, mode);
    for (auto& block : decoder1_) {
        --level;
        const auto [h, w] = sizes[static_cast<std::size_t>(level)];
        x = run_up_block(block, x, h, w, slots, mode);
    }
    slots[static_cast<std::size_t>(f2_slot_)] = x;
    for (std::size_t i = 0; i < encoder2_.size(); ++i) {
        for (auto& layer : encoder2_[i]) {
            x = run_conv_bn(layer, x, mode);
            if (layer.spec.stride == 2) ++level;
        }
        slots[static_cast<std::size_t>(encoder2_slots_[i])] = x;
    }
    for (auto& layer : bridge2_) x = run_conv_bn(layer, x, mode);
    for (auto& block : decoder2_) {
        --level;
        const auto [h, w] = sizes[static_cast<std::size_t>(level)];
        x = run_up_block(block, x, h, w, slots, mode);
    }
    return run_conv_bn(head_, x, mode);
}

template <typename T>
template <typename Fn>
void MobileXNet<T>::visit(Fn&& fn) {
    fn(input_conv_);
    for (auto& block : encoder1_) {
        fn(block.dw);
        fn(block.pw);
    }
    for (auto& layer : bridge1_) fn(layer);
    for (auto& block : decoder1_) {
        fn(block.conv);
        if (block.project) fn(*block.project);
    }
    for (auto& block : encoder2_) {
        for (auto& layer : block) fn(layer);
    }
    for (auto& layer : bridge2_) fn(layer);
    for (auto& block : decoder2_) {
        fn(block.conv);
        if (block.project) fn(*block.project);
    }
    fn(head_);
}

template <typename T>
std::vector<NamedTensor<T>> MobileXNet<T>::parameters() const {
    std::vector<NamedTensor<T>> out;
    const_cast<MobileXNet<T>*>(this)->visit([&](ConvBN& layer) {
        out.emplace_back(layer.name + ".weight", layer.weight);
        if (layer.has_bn) {
            out.emplace_back(layer.name + ".bn.gamma", layer.bn.gamma);
            out.emplace_back(layer.name + ".bn.beta", layer.bn.beta);
        }
    });
    return out;
}

template <typename T>
std::vector<NamedTensor<T>> MobileXNet<T>::state() const {
    std::vector<NamedTensor<T>> out;
    const_cast<MobileXNet<T>*>(this)->visit([&](ConvBN& layer) {
        out.emplace_back(layer.name + ".weight", layer.weight);
        if (layer.has_bn) {
            out.emplace_back(layer.name + ".bn.gamma", layer.bn.gamma);
            out.emplace_back(layer.name + ".bn.beta", layer.bn.beta);
            out.emplace_back(layer.name + ".bn.running_mean", layer.bn.running_mean);
            out.emplace_back(layer.name + ".bn.running_var", layer.bn.running_var);
        }
    });
    return out;
}

template <typename T>
std::vector<NamedTensor<T>> MobileXNet<T>::backbone_state() const {
    std::vector<NamedTensor<T>> out;
    for (auto& entry : state()) {
        if (entry.first.rfind("encoder1.", 0) == 0) out.push_back(entry);
    }
    return out;
}

template <typename T>
void MobileXNet<T>::init_weights(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    visit([&](ConvBN& layer) {
        // fan_in = incoming nodes per output neuron (per-group channels x k^2)
        const Shape& ws = layer.weight.shape();
        const double fan_in = static_cast<double>(ws[1]) * ws[2] * ws[3];
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (T& v : layer.weight.data()) v = static_cast<T>(dist(rng));
        if (layer.has_bn) {
            std::fill(layer.bn.gamma.data().begin(), layer.bn.gamma.data().end(), T(1));
            std::fill(layer.bn.beta.data().begin(), layer.bn.beta.data().end(), T(0));
            std::fill(layer.bn.running_mean.data().begin(), layer.bn.running_mean.data().end(),
                      T(0));
            std::fill(layer.bn.running_var.data().begin(), layer.bn.running_var.data().end(), T(1));
        }
    });
}

template <typename T>
CostReport MobileXNet<T>::cost(int input_h, int input_w) const {
    CostReport report;
    const int levels = cfg_.variant == Variant::large ? 5 : 4;
    std::vector<std::pair<int, int>> sizes(static_cast<std::size_t>(levels) + 1);
    sizes[0] = {input_h, input_w};
    for (int l = 1; l <= levels; ++l) {
        sizes[static_cast<std::size_t>(l)] = {ceil_half(sizes[static_cast<std::size_t>(l - 1)].first),
                                              ceil_half(sizes[static_cast<std::size_t>(l - 1)].second)};
    }
    // Mirror of forward(): track the level each conv's output lives at.
    int level = 0;
    auto add_row = [&](const ConvBN& layer) {
        if (layer.spec.stride == 2) ++level;
        const Shape& ws = layer.weight.shape();
        CostRow row;
        row.name = layer.name;
        row.parameters = static_cast<std::int64_t>(ws[0]) * ws[1] * ws[2] * ws[3];
        if (layer.has_bn) row.parameters += 2 * ws[0];
        // Output size comes from the ladder, identical to forward().
        const auto [h, w] = sizes[static_cast<std::size_t>(level)];
        row.macs = static_cast<std::int64_t>(ws[0]) * ws[1] * ws[2] * ws[3] * h * w;
        report.rows.push_back(row);
    };
    auto up_level = [&] { --level; };

    add_row(input_conv_);
    for (const auto& block : encoder1_) {
        add_row(block.dw);
        add_row(block.pw);
    }
    for (const auto& layer : bridge1_) add_row(layer);
    for (const auto& block : decoder1_) {
        add_row(block.conv);  // conv runs before the upsample, at the deeper level
        up_level();
        if (block.project) {
            // projection runs at the skip's (= post-upsample) level
            add_row(*block.project);
        }
    }
    for (const auto& block : encoder2_) {
        for (const auto& layer : block) add_row(layer);
    }
    for (const auto& layer : bridge2_) add_row(layer);
    for (const auto& block : decoder2_) {
        add_row(block.conv);
        up_level();
        if (block.project) add_row(*block.project);
    }
    add_row(head_);

    for (const auto& row : report.rows) {
        report.parameters += row.parameters;
        report.macs += row.macs;
    }
    return report;
}

template <typename T>
void load_pretrained_backbone(MobileXNet<T>& model, const std::vector<NamedTensor<T>>& tensors) {
    std::map<std::string, Tensor<T>> by_name;
    for (const auto& [name, tensor] : tensors) by_name.emplace(name, tensor);
    for (auto& [name, dst] : model.backbone_state()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw ConfigError("load_pretrained_backbone: checkpoint is missing tensor '" + name +
                              "'");
        }
        const Tensor<T>& src = it->second;
        if (src.shape() != dst.shape()) {
            throw ShapeError("load_pretrained_backbone: tensor '" + name + "' has shape " +
                             shape_str(src.shape()) + ", model expects " + shape_str(dst.shape()));
        }
        std::copy(src.data().begin(), src.data().end(), dst.data().begin());
    }
}

template class MobileXNet<float>;
template class MobileXNet<double>;
template void load_pretrained_backbone<float>(MobileXNet<float>&,
                                              const std::vector<NamedTensor<float>>&);
template void load_pretrained_backbone<double>(MobileXNet<double>&,
                                               const std::vector<NamedTensor<double>>&);

}  // namespace mobilex
