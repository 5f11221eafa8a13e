#include "mobilex/layers.hpp"

#include <algorithm>
#include <cmath>

#include "mobilex/parallel.hpp"

namespace mobilex {

void ConvSpec::validate() const {
    if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1 ||
        dilation < 1 || padding < 0) {
        throw ConfigError("conv spec: non-positive field (in=" + std::to_string(in_channels) +
                          " out=" + std::to_string(out_channels) + " k=" + std::to_string(kernel) +
                          " s=" + std::to_string(stride) + " d=" + std::to_string(dilation) +
                          " p=" + std::to_string(padding) + ")");
    }
    if (depthwise && out_channels != in_channels) {
        throw ConfigError("conv spec: depthwise requires out_channels == in_channels, got " +
                          std::to_string(in_channels) + " -> " + std::to_string(out_channels));
    }
}

int ConvSpec::out_size(int in) const {
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

namespace {

struct ConvDims {
    int batch, cin, h, w, cout, oh, ow, groups, cin_g, cout_g;
};

template <typename T>
ConvDims check_conv(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec) {
    spec.validate();
    const Shape& is = input.shape();
    const Shape& ws = weights.shape();
    if (is.size() != 4) {
        throw ShapeError("conv2d: input must be [B,C,H,W], got " + shape_str(is));
    }
    if (ws.size() != 4) {
        throw ShapeError("conv2d: weights must be [N,C/g,Dk,Dk], got " + shape_str(ws));
    }
    ConvDims d;
    d.batch = is[0];
    d.cin = is[1];
    d.h = is[2];
    d.w = is[3];
    d.groups = spec.depthwise ? spec.in_channels : 1;
    d.cin_g = d.cin / d.groups;
    d.cout = spec.out_channels;
    d.cout_g = d.cout / d.groups;
    if (d.cin != spec.in_channels) {
        throw ShapeError("conv2d: input has " + std::to_string(d.cin) +
                         " channels, spec expects " + std::to_string(spec.in_channels));
    }
    if (ws[0] != d.cout || ws[1] != d.cin_g || ws[2] != spec.kernel || ws[3] != spec.kernel) {
        throw ShapeError("conv2d: weight shape " + shape_str(ws) + " inconsistent with spec [" +
                         std::to_string(d.cout) + "," + std::to_string(d.cin_g) + "," +
                         std::to_string(spec.kernel) + "," + std::to_string(spec.kernel) + "]");
    }
    if (spec.effective_kernel() > d.h + 2 * spec.padding ||
        spec.effective_kernel() > d.w + 2 * spec.padding) {
        throw ShapeError("conv2d: effective kernel " + std::to_string(spec.effective_kernel()) +
                         " exceeds padded input " + std::to_string(d.h + 2 * spec.padding) + "x" +
                         std::to_string(d.w + 2 * spec.padding));
    }
    d.oh = spec.out_size(d.h);
    d.ow = spec.out_size(d.w);
    return d;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const ConvSpec& spec) {
    const ConvDims d = check_conv(input, weights, spec);
    Tensor<T> out(Shape{d.batch, d.cout, d.oh, d.ow});
    const T* in = input.data().data();
    const T* w = weights.data().data();
    T* o = out.data().data();
    const int k = spec.kernel, st = spec.stride, dil = spec.dilation, pad = spec.padding;

    parallel_for(0, static_cast<std::int64_t>(d.batch) * d.cout * d.oh, [&](std::int64_t row) {
        const int oy = static_cast<int>(row % d.oh);
        const int oc = static_cast<int>((row / d.oh) % d.cout);
        const int b = static_cast<int>(row / (static_cast<std::int64_t>(d.oh) * d.cout));
        const int g = oc / d.cout_g;
        const T* wbase = w + static_cast<std::int64_t>(oc) * d.cin_g * k * k;
        for (int ox = 0; ox < d.ow; ++ox) {
            double acc = 0.0;
            for (int icr = 0; icr < d.cin_g; ++icr) {
                const int ic = g * d.cin_g + icr;
                const T* ibase = in + ((static_cast<std::int64_t>(b) * d.cin + ic) * d.h) * d.w;
                const T* wk = wbase + static_cast<std::int64_t>(icr) * k * k;
                for (int ky = 0; ky < k; ++ky) {
                    const int iy = oy * st - pad + ky * dil;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int ix = ox * st - pad + kx * dil;
                        if (ix < 0 || ix >= d.w) continue;
                        acc += static_cast<double>(wk[ky * k + kx]) *
                               static_cast<double>(ibase[iy * d.w + ix]);
                    }
                }
            }
            o[(((static_cast<std::int64_t>(b) * d.cout + oc) * d.oh + oy) * d.ow) + ox] =
                static_cast<T>(acc);
        }
    });
    debug_check_finite(out, "conv2d");

    if (Tape<T>::active() && (input.requires_grad() || weights.requires_grad())) {
        auto ii = input.impl();
        auto wi = weights.impl();
        auto oi = out.impl();
        const bool need_in = input.requires_grad();
        const bool need_w = weights.requires_grad();
        out.set_requires_grad(true);
        Tape<T>::active()->record(oi, [ii, wi, oi, d, spec, need_in, need_w] {
            const int k = spec.kernel, st = spec.stride, dil = spec.dilation, pad = spec.padding;
            const T* go = oi->grad.data();
            if (need_w) {
                if (wi->grad.empty()) wi->grad.assign(wi->data.size(), T(0));
                T* gw = wi->grad.data();
                const T* in = ii->data.data();
                parallel_for(0, static_cast<std::int64_t>(wi->data.size()), [&](std::int64_t wi_idx) {
                    const int kx = static_cast<int>(wi_idx % k);
                    const int ky = static_cast<int>((wi_idx / k) % k);
                    const int icr = static_cast<int>((wi_idx / (k * k)) % d.cin_g);
                    const int oc = static_cast<int>(wi_idx / (static_cast<std::int64_t>(k) * k * d.cin_g));
                    const int ic = (oc / d.cout_g) * d.cin_g + icr;
                    double acc = 0.0;
                    for (int b = 0; b < d.batch; ++b) {
                        const T* ibase = in + ((static_cast<std::int64_t>(b) * d.cin + ic) * d.h) * d.w;
                        const T* gbase =
                            go + ((static_cast<std::int64_t>(b) * d.cout + oc) * d.oh) * d.ow;
                        for (int oy = 0; oy < d.oh; ++oy) {
                            const int iy = oy * st - pad + ky * dil;
                            if (iy < 0 || iy >= d.h) continue;
                            for (int ox = 0; ox < d.ow; ++ox) {
                                const int ix = ox * st - pad + kx * dil;
                                if (ix < 0 || ix >= d.w) continue;
                                acc += static_cast<double>(gbase[oy * d.ow + ox]) *
                                       static_cast<double>(ibase[iy * d.w + ix]);
                            }
                        }
                    }
                    gw[wi_idx] += static_cast<T>(acc);
                });
            }
            if (need_in) {
                if (ii->grad.empty()) ii->grad.assign(ii->data.size(), T(0));
                T* gi = ii->grad.data();
                const T* w = wi->data.data();
                parallel_for(0, static_cast<std::int64_t>(d.batch) * d.cin * d.h,
                             [&](std::int64_t row) {
                    const int iy = static_cast<int>(row % d.h);
                    const int ic = static_cast<int>((row / d.h) % d.cin);
                    const int b = static_cast<int>(row / (static_cast<std::int64_t>(d.h) * d.cin));
                    const int g = ic / d.cin_g;
                    const int icr = ic % d.cin_g;
                    for (int ix = 0; ix < d.w; ++ix) {
                        double acc = 0.0;
                        for (int ocr = 0; ocr < d.cout_g; ++ocr) {
                            const int oc = g * d.cout_g + ocr;
                            const T* wk = w + ((static_cast<std::int64_t>(oc) * d.cin_g + icr)) * k * k;
                            const T* gbase =
                                go + ((static_cast<std::int64_t>(b) * d.cout + oc) * d.oh) * d.ow;
                            for (int ky = 0; ky < k; ++ky) {
                                const int ny = iy + pad - ky * dil;
                                if (ny < 0 || ny % st != 0) continue;
                                const int oy = ny / st;
                                if (oy >= d.oh) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int nx = ix + pad - kx * dil;
                                    if (nx < 0 || nx % st != 0) continue;
                                    const int ox = nx / st;
                                    if (ox >= d.ow) continue;
                                    acc += static_cast<double>(wk[ky * k + kx]) *
                                           static_cast<double>(gbase[oy * d.ow + ox]);
                                }
                            }
                        }
                        gi[((static_cast<std::int64_t>(b) * d.cin + ic) * d.h + iy) * d.w + ix] +=
                            static_cast<T>(acc);
                    }
                });
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> depthwise_separable(const Tensor<T>& input, const Tensor<T>& dw_weights,
                              const Tensor<T>& pw_weights, const ConvSpec& spec) {
    ConvSpec dw = spec;
    dw.out_channels = spec.in_channels;
    dw.depthwise = true;
    const Shape& ps = pw_weights.shape();
    if (ps.size() != 4 || ps[1] != spec.in_channels || ps[2] != 1 || ps[3] != 1) {
        throw ShapeError("depthwise_separable: pointwise weights " + shape_str(ps) +
                         " do not accept " + std::to_string(spec.in_channels) + " channels");
    }
    ConvSpec pw;
    pw.in_channels = spec.in_channels;
    pw.out_channels = ps[0];
    pw.kernel = 1;
    return conv2d(conv2d(input, dw_weights, dw), pw_weights, pw);
}

template <typename T>
BatchNormState<T> BatchNormState<T>::make(int channels) {
    BatchNormState<T> s;
    s.gamma = Tensor<T>(Shape{channels}, T(1), true);
    s.beta = Tensor<T>(Shape{channels}, T(0), true);
    s.running_mean = Tensor<T>(Shape{channels}, T(0));
    s.running_var = Tensor<T>(Shape{channels}, T(1));
    return s;
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state, Mode mode) {
    const Shape& is = input.shape();
    if (is.size() != 4) throw ShapeError("batchnorm: input must be [B,C,H,W], got " + shape_str(is));
    const int batch = is[0], ch = is[1], h = is[2], w = is[3];
    if (state.gamma.shape() != Shape{ch}) {
        throw ShapeError("batchnorm: " + std::to_string(ch) + " input channels vs state " +
                         shape_str(state.gamma.shape()));
    }
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t n = static_cast<std::int64_t>(batch) * plane;
    Tensor<T> out(is);
    const T* in = input.data().data();
    T* o = out.data().data();
    const T* gamma = state.gamma.data().data();
    const T* beta = state.beta.data().data();

    std::vector<T> mean(ch), invstd(ch);
    if (mode == Mode::train) {
        T* rm = state.running_mean.data().data();
        T* rv = state.running_var.data().data();
        for (int c = 0; c < ch; ++c) {
            double sum = 0.0;
            for (int b = 0; b < batch; ++b) {
                const T* p = in + (static_cast<std::int64_t>(b) * ch + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) sum += static_cast<double>(p[i]);
            }
            const double m = sum / static_cast<double>(n);
            double var = 0.0;
            for (int b = 0; b < batch; ++b) {
                const T* p = in + (static_cast<std::int64_t>(b) * ch + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double dv = static_cast<double>(p[i]) - m;
                    var += dv * dv;
                }
            }
            var /= static_cast<double>(n);
            mean[c] = static_cast<T>(m);
            invstd[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.epsilon)));
            const double unbiased = n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1) : var;
            rm[c] = static_cast<T>((1 - state.momentum) * rm[c] + state.momentum * static_cast<T>(m));
            rv[c] = static_cast<T>((1 - state.momentum) * rv[c] +
                                   state.momentum * static_cast<T>(unbiased));
        }
    } else {
        const T* rm = state.running_mean.data().data();
        const T* rv = state.running_var.data().data();
        for (int c = 0; c < ch; ++c) {
            mean[c] = rm[c];
            invstd[c] = static_cast<T>(
                1.0 / std::sqrt(static_cast<double>(rv[c]) + static_cast<double>(state.epsilon)));
        }
    }
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < ch; ++c) {
            const T* p = in + (static_cast<std::int64_t>(b) * ch + c) * plane;
            T* q = o + (static_cast<std::int64_t>(b) * ch + c) * plane;
            const T m = mean[c], is_ = invstd[c], g = gamma[c], bt = beta[c];
            for (std::int64_t i = 0; i < plane; ++i) q[i] = (p[i] - m) * is_ * g + bt;
        }
    }
    debug_check_finite(out, "batchnorm");

    if (Tape<T>::active() &&
        (input.requires_grad() || state.gamma.requires_grad() || state.beta.requires_grad())) {
        auto ii = input.impl();
        auto gi = state.gamma.impl();
        auto bi = state.beta.impl();
        auto oi = out.impl();
        const bool train = mode == Mode::train;
        out.set_requires_grad(true);
        Tape<T>::active()->record(oi, [ii, gi, bi, oi, mean, invstd, batch, ch, plane, n, train] {
            const T* go = oi->grad.data();
            const T* in = ii->data.data();
            if (gi->grad.empty()) gi->grad.assign(gi->data.size(), T(0));
            if (bi->grad.empty()) bi->grad.assign(bi->data.size(), T(0));
            const bool need_in = ii->requires_grad;
            if (need_in && ii->grad.empty()) ii->grad.assign(ii->data.size(), T(0));
            for (int c = 0; c < ch; ++c) {
                const T m = mean[c], is_ = invstd[c], g = gi->data[c];
                double sum_go = 0.0, sum_go_xhat = 0.0;
                for (int b = 0; b < batch; ++b) {
                    const T* p = in + (static_cast<std::int64_t>(b) * ch + c) * plane;
                    const T* q = go + (static_cast<std::int64_t>(b) * ch + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        const double xh = static_cast<double>((p[i] - m) * is_);
                        sum_go += static_cast<double>(q[i]);
                        sum_go_xhat += static_cast<double>(q[i]) * xh;
                    }
                }
                gi->grad[c] += static_cast<T>(sum_go_xhat);
                bi->grad[c] += static_cast<T>(sum_go);
                if (!need_in) continue;
                const double mean_go = sum_go / static_cast<double>(n);
                const double mean_go_xhat = sum_go_xhat / static_cast<double>(n);
                for (int b = 0; b < batch; ++b) {
                    const T* p = in + (static_cast<std::int64_t>(b) * ch + c) * plane;
                    const T* q = go + (static_cast<std::int64_t>(b) * ch + c) * plane;
                    T* gp = ii->grad.data() + (static_cast<std::int64_t>(b) * ch + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        const double xh = static_cast<double>((p[i] - m) * is_);
                        double dx;
                        if (train) {
                            dx = static_cast<double>(g) * static_cast<double>(is_) *
                                 (static_cast<double>(q[i]) - mean_go - xh * mean_go_xhat);
                        } else {
                            dx = static_cast<double>(g) * static_cast<double>(is_) *
                                 static_cast<double>(q[i]);
                        }
                        gp[i] += static_cast<T>(dx);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, int out_h, int out_w) {
    const Shape& is = input.shape();
    if (is.size() != 4) {
        throw ShapeError("upsample_bilinear: input must be [B,C,H,W], got " + shape_str(is));
    }
    if (out_h < 1 || out_w < 1) {
        throw ConfigError("upsample_bilinear: target size " + std::to_string(out_h) + "x" +
                          std::to_string(out_w) + " must be positive");
    }
    const int batch = is[0], ch = is[1], h = is[2], w = is[3];
    if (out_h < h || out_w < w) {
        throw ConfigError("upsample_bilinear: target " + std::to_string(out_h) + "x" +
                          std::to_string(out_w) + " smaller than input " + std::to_string(h) + "x" +
                          std::to_string(w));
    }

    // Half-pixel source coordinates, clamped; shared by forward and backward.
    struct Site {
        int lo, hi;
        T frac;
    };
    auto make_sites = [](int in_size, int out_size) {
        std::vector<Site> sites(static_cast<std::size_t>(out_size));
        const double scale = static_cast<double>(in_size) / out_size;
        for (int i = 0; i < out_size; ++i) {
            double src = (i + 0.5) * scale - 0.5;
            if (src < 0.0) src = 0.0;
            int lo = static_cast<int>(src);
            if (lo > in_size - 1) lo = in_size - 1;
            const int hi = std::min(lo + 1, in_size - 1);
            sites[static_cast<std::size_t>(i)] = {lo, hi, static_cast<T>(src - lo)};
        }
        return sites;
    };
    const auto ys = make_sites(h, out_h);
    const auto xs = make_sites(w, out_w);

    Tensor<T> out(Shape{batch, ch, out_h, out_w});
    const T* in = input.data().data();
    T* o = out.data().data();
    parallel_for(0, static_cast<std::int64_t>(batch) * ch, [&](std::int64_t bc) {
        const T* p = in + bc * h * w;
        T* q = o + bc * static_cast<std::int64_t>(out_h) * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
            const Site sy = ys[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < out_w; ++ox) {
                const Site sx = xs[static_cast<std::size_t>(ox)];
                const T tl = p[sy.lo * w + sx.lo], tr = p[sy.lo * w + sx.hi];
                const T bl = p[sy.hi * w + sx.lo], br = p[sy.hi * w + sx.hi];
                const T top = tl + (tr - tl) * sx.frac;
                const T bot = bl + (br - bl) * sx.frac;
                q[oy * out_w + ox] = top + (bot - top) * sy.frac;
            }
        }
    });
    debug_check_finite(out, "upsample_bilinear");

    if (Tape<T>::active() && input.requires_grad()) {
        auto ii = input.impl();
        auto oi = out.impl();
        out.set_requires_grad(true);
        Tape<T>::active()->record(oi, [ii, oi, ys, xs, batch, ch, h, w, out_h, out_w] {
            if (ii->grad.empty()) ii->grad.assign(ii->data.size(), T(0));
            const T* go = oi->grad.data();
            parallel_for(0, static_cast<std::int64_t>(batch) * ch, [&](std::int64_t bc) {
                T* gp = ii->grad.data() + bc * h * w;
                const T* gq = go + bc * static_cast<std::int64_t>(out_h) * out_w;
                for (int oy = 0; oy < out_h; ++oy) {
                    const Site sy = ys[static_cast<std::size_t>(oy)];
                    for (int ox = 0; ox < out_w; ++ox) {
                        const Site sx = xs[static_cast<std::size_t>(ox)];
                        const T g = gq[oy * out_w + ox];
                        const T wy1 = sy.frac, wy0 = T(1) - wy1;
                        const T wx1 = sx.frac, wx0 = T(1) - wx1;
                        gp[sy.lo * w + sx.lo] += g * wy0 * wx0;
                        gp[sy.lo * w + sx.hi] += g * wy0 * wx1;
                        gp[sy.hi * w + sx.lo] += g * wy1 * wx0;
                        gp[sy.hi * w + sx.hi] += g * wy1 * wx1;
                    }
                }
            });
        });
    }
    return out;
}

#define MOBILEX_INSTANTIATE_LAYERS(T)                                                  \
    template struct BatchNormState<T>;                                                 \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const ConvSpec&); \
    template Tensor<T> depthwise_separable<T>(const Tensor<T>&, const Tensor<T>&,      \
                                              const Tensor<T>&, const ConvSpec&);      \
    template Tensor<T> batchnorm<T>(const Tensor<T>&, BatchNormState<T>&, Mode);       \
    template Tensor<T> upsample_bilinear<T>(const Tensor<T>&, int, int);

MOBILEX_INSTANTIATE_LAYERS(float)
MOBILEX_INSTANTIATE_LAYERS(double)

}  // namespace mobilex
