#include "mobilex/loss.hpp"

#include <cmath>

namespace mobilex {

void LossConfig::validate() const {
    if (!(berhu_fraction > 0.0 && berhu_fraction <= 1.0)) {
        throw ConfigError("loss config: berhu_fraction " + std::to_string(berhu_fraction) +
                          " outside (0,1]");
    }
}

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "l1") return LossKind::l1;
    if (name == "l2") return LossKind::l2;
    if (name == "berhu") return LossKind::berhu;
    if (name == "hybrid") return LossKind::hybrid;
    throw ConfigError("loss config: unknown loss '" + name + "'");
}

std::string to_string(LossKind kind) {
    switch (kind) {
        case LossKind::l1: return "l1";
        case LossKind::l2: return "l2";
        case LossKind::berhu: return "berhu";
        case LossKind::hybrid: return "hybrid";
    }
    return "?";
}

namespace {

template <typename T>
void check_loss_inputs(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask,
                       const char* op) {
    check_same_shape(d.shape(), dstar.shape(), op);
    check_same_shape(d.shape(), mask.shape(), op);
}

template <typename T>
std::int64_t valid_count(const Tensor<T>& mask) {
    std::int64_t n = 0;
    for (T m : mask.data()) {
        if (m > T(0.5)) ++n;
    }
    return n;
}

template <typename T>
T sgn(T v) {
    return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// Shared scaffolding for the pointwise losses: forward value plus a per-pixel
// derivative w.r.t. the error e = d - dstar.
template <typename T, typename Fwd, typename Bwd>
Tensor<T> pointwise_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask,
                         const char* op, Fwd value, Bwd deriv) {
    check_loss_inputs(d, dstar, mask, op);
    const std::int64_t n = valid_count(mask);
    if (n == 0) throw DataError(std::string(op) + ": no valid pixels in mask");
    auto dd = d.data();
    auto td = dstar.data();
    auto md = mask.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < d.numel(); ++i) {
        if (md[i] > T(0.5)) acc += value(static_cast<double>(dd[i]) - static_cast<double>(td[i]));
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    debug_check_finite(out, op);
    if (Tape<T>::active() && d.requires_grad()) {
        auto di = d.impl();
        auto ti = dstar.impl();
        auto mi = mask.impl();
        auto oi = out.impl();
        out.set_requires_grad(true);
        Tape<T>::active()->record(oi, [di, ti, mi, oi, n, deriv] {
            const T g = oi->grad[0];
            if (di->grad.empty()) di->grad.assign(di->data.size(), T(0));
            const double scale = static_cast<double>(g) / static_cast<double>(n);
            for (std::size_t i = 0; i < di->data.size(); ++i) {
                if (mi->data[i] > T(0.5)) {
                    const double e =
                        static_cast<double>(di->data[i]) - static_cast<double>(ti->data[i]);
                    di->grad[i] += static_cast<T>(scale * deriv(e));
                }
            }
        });
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask) {
    return pointwise_loss(
        d, dstar, mask, "l1_loss", [](double e) { return std::abs(e); },
        [](double e) { return static_cast<double>(sgn(e)); });
}

template <typename T>
Tensor<T> l2_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask) {
    return pointwise_loss(
        d, dstar, mask, "l2_loss", [](double e) { return e * e; },
        [](double e) { return 2.0 * e; });
}

template <typename T>
Tensor<T> berhu_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask,
                     double berhu_fraction) {
    if (!(berhu_fraction > 0.0 && berhu_fraction <= 1.0)) {
        throw ConfigError("berhu_loss: fraction " + std::to_string(berhu_fraction) +
                          " outside (0,1]");
    }
    check_loss_inputs(d, dstar, mask, "berhu_loss");
    auto dd = d.data();
    auto td = dstar.data();
    auto md = mask.data();
    double max_abs = 0.0;
    for (std::int64_t i = 0; i < d.numel(); ++i) {
        if (md[i] > T(0.5)) {
            max_abs = std::max(max_abs,
                               std::abs(static_cast<double>(dd[i]) - static_cast<double>(td[i])));
        }
    }
    const double c = berhu_fraction * max_abs;  // constant in backward
    if (c == 0.0) return l1_loss(d, dstar, mask);
    return pointwise_loss(
        d, dstar, mask, "berhu_loss",
        [c](double e) {
            const double a = std::abs(e);
            return a <= c ? a : (e * e + c * c) / (2.0 * c);
        },
        [c](double e) { return std::abs(e) <= c ? static_cast<double>(sgn(e)) : e / c; });
}

namespace {

struct PlaneDims {
    std::int64_t planes;
    int h, w;
};

template <typename T>
PlaneDims plane_dims(const Tensor<T>& t) {
    const Shape& s = t.shape();
    if (s.size() < 2) {
        throw ShapeError("grad_loss: need spatial tensor, got " + shape_str(s));
    }
    PlaneDims d;
    d.h = s[s.size() - 2];
    d.w = s[s.size() - 1];
    d.planes = 1;
    for (std::size_t i = 0; i + 2 < s.size(); ++i) d.planes *= s[i];
    return d;
}

}  // namespace

template <typename T>
Tensor<T> grad_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask) {
    check_loss_inputs(d, dstar, mask, "grad_loss");
    const PlaneDims pd = plane_dims(d);
    auto dd = d.data();
    auto td = dstar.data();
    auto md = mask.data();
    double sum_x = 0.0, sum_y = 0.0;
    std::int64_t nx = 0, ny = 0;
    for (std::int64_t p = 0; p < pd.planes; ++p) {
        const std::int64_t base = p * pd.h * pd.w;
        for (int y = 0; y < pd.h; ++y) {
            for (int x = 0; x < pd.w; ++x) {
                const std::int64_t i = base + static_cast<std::int64_t>(y) * pd.w + x;
                if (md[i] <= T(0.5)) continue;
                if (x + 1 < pd.w && md[i + 1] > T(0.5)) {
                    const double e0 = static_cast<double>(dd[i]) - static_cast<double>(td[i]);
                    const double e1 =
                        static_cast<double>(dd[i + 1]) - static_cast<double>(td[i + 1]);
                    sum_x += std::abs(e1 - e0);
                    ++nx;
                }
                if (y + 1 < pd.h && md[i + pd.w] > T(0.5)) {
                    const double e0 = static_cast<double>(dd[i]) - static_cast<double>(td[i]);
                    const double e1 =
                        static_cast<double>(dd[i + pd.w]) - static_cast<double>(td[i + pd.w]);
                    sum_y += std::abs(e1 - e0);
                    ++ny;
                }
            }
        }
    }
    if (nx == 0 && ny == 0) throw DataError("grad_loss: no valid pixel pairs");
    const double total = (nx > 0 ? sum_x / static_cast<double>(nx) : 0.0) +
                         (ny > 0 ? sum_y / static_cast<double>(ny) : 0.0);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
    debug_check_finite(out, "grad_loss");
    if (Tape<T>::active() && d.requires_grad()) {
        auto di = d.impl();
        auto ti = dstar.impl();
        auto mi = mask.impl();
        auto oi = out.impl();
        out.set_requires_grad(true);
        Tape<T>::active()->record(oi, [di, ti, mi, oi, pd, nx, ny] {
            const double g = static_cast<double>(oi->grad[0]);
            if (di->grad.empty()) di->grad.assign(di->data.size(), T(0));
            const T* dd = di->data.data();
            const T* td = ti->data.data();
            const T* md = mi->data.data();
            for (std::int64_t p = 0; p < pd.planes; ++p) {
                const std::int64_t base = p * pd.h * pd.w;
                for (int y = 0; y < pd.h; ++y) {
                    for (int x = 0; x < pd.w; ++x) {
                        const std::int64_t i = base + static_cast<std::int64_t>(y) * pd.w + x;
                        if (md[i] <= T(0.5)) continue;
                        if (nx > 0 && x + 1 < pd.w && md[i + 1] > T(0.5)) {
                            const double diff =
                                (static_cast<double>(dd[i + 1]) - static_cast<double>(td[i + 1])) -
                                (static_cast<double>(dd[i]) - static_cast<double>(td[i]));
                            const double s = g * sgn(diff) / static_cast<double>(nx);
                            di->grad[i + 1] += static_cast<T>(s);
                            di->grad[i] -= static_cast<T>(s);
                        }
                        if (ny > 0 && y + 1 < pd.h && md[i + pd.w] > T(0.5)) {
                            const double diff =
                                (static_cast<double>(dd[i + pd.w]) -
                                 static_cast<double>(td[i + pd.w])) -
                                (static_cast<double>(dd[i]) - static_cast<double>(td[i]));
                            const double s = g * sgn(diff) / static_cast<double>(ny);
                            di->grad[i + pd.w] += static_cast<T>(s);
                            di->grad[i] -= static_cast<T>(s);
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> hybrid_loss(const Tensor<T>& d, const Tensor<T>& dstar, const Tensor<T>& mask) {
    return add(l1_loss(d, dstar, mask), grad_loss(d, dstar, mask));
}

template <typename T>
Tensor<T> compute_loss(const LossConfig& cfg, const Tensor<T>& d, const Tensor<T>& dstar,
                       const Tensor<T>& mask) {
    cfg.validate();
    switch (cfg.kind) {
        case LossKind::l1: return l1_loss(d, dstar, mask);
        case LossKind::l2: return l2_loss(d, dstar, mask);
        case LossKind::berhu: return berhu_loss(d, dstar, mask, cfg.berhu_fraction);
        case LossKind::hybrid: return hybrid_loss(d, dstar, mask);
    }
    throw ConfigError("compute_loss: invalid loss kind");
}

#define MOBILEX_INSTANTIATE_LOSS(T)                                                              \
    template Tensor<T> l1_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
    template Tensor<T> l2_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
    template Tensor<T> berhu_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                     double);                                                    \
    template Tensor<T> grad_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
    template Tensor<T> hybrid_loss<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
    template Tensor<T> compute_loss<T>(const LossConfig&, const Tensor<T>&, const Tensor<T>&,    \
                                       const Tensor<T>&);

MOBILEX_INSTANTIATE_LOSS(float)
MOBILEX_INSTANTIATE_LOSS(double)

}  // namespace mobilex
