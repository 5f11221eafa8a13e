#pragma once

// Independent reference implementations used as test oracles. Nothing here
// may call back into the library kernels it checks.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mobilex/tensor.hpp"

namespace oracle {

using mobilex::Shape;
using mobilex::Tensor;

inline std::vector<double> randu(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                 double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> out(n);
    for (double& v : out) v = dist(rng);
    return out;
}

template <typename T>
Tensor<T> rand_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                      bool requires_grad = false) {
    auto vals = randu(static_cast<std::size_t>(mobilex::shape_numel(shape)), rng, lo, hi);
    std::vector<T> cast(vals.begin(), vals.end());
    Tensor<T> t(std::move(shape), std::move(cast));
    t.set_requires_grad(requires_grad);
    return t;
}

// Central finite differences against the recorded backward pass. Checks up to
// max_per_tensor randomly chosen elements of each listed tensor (all when -1).
// Returns the max relative error, rel = |a - n| / max(|a|, |n|, 1e-3).
inline double gradcheck(const std::function<Tensor<double>()>& forward,
                        std::vector<Tensor<double>> params, double h = 1e-3,
                        int max_per_tensor = -1, std::uint64_t seed = 0) {
    std::vector<std::vector<double>> analytic;
    {
        for (auto& p : params) p.zero_grad();
        mobilex::Tape<double> tape;
        Tensor<double> loss = forward();
        tape.backward(loss);
        for (auto& p : params) {
            auto g = p.grad();
            analytic.emplace_back(g.begin(), g.end());
        }
    }
    std::mt19937_64 rng(seed);
    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto data = params[pi].data();
        std::vector<std::size_t> indices(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) indices[i] = i;
        if (max_per_tensor >= 0 && indices.size() > static_cast<std::size_t>(max_per_tensor)) {
            std::shuffle(indices.begin(), indices.end(), rng);
            indices.resize(static_cast<std::size_t>(max_per_tensor));
        }
        const double f0 = forward().item();
        for (std::size_t idx : indices) {
            const double a = analytic[pi][idx];
            auto rel = [&](double n) {
                return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
            };
            double err = 1e30;
            // Retry with smaller steps when the first stencil fails: deep
            // compositions can have violent curvature that h is too coarse
            // for, while an exact relu kink needs the one-sided slopes.
            for (double step : {h, h / 10, h / 100}) {
                const double saved = data[idx];
                data[idx] = saved + step;
                const double fp = forward().item();
                data[idx] = saved - step;
                const double fm = forward().item();
                data[idx] = saved;
                const double numeric = (fp - fm) / (2.0 * step);
                err = std::min(err, rel(numeric));
                // A piecewise-linear kink (e.g. relu at exactly 0) makes the
                // central difference average two unrelated slopes. When the
                // one-sided slopes visibly disagree, the analytic value is a
                // subgradient: accept it if it matches either side.
                const double left = (f0 - fm) / step, right = (fp - f0) / step;
                if (err > 1e-4 && std::abs(left - right) >
                                      1e-2 * std::max({std::abs(left), std::abs(right), 1e-6})) {
                    err = std::min({err, rel(left), rel(right)});
                }
                if (err < 1e-4) break;
            }
            max_rel = std::max(max_rel, err);
        }
    }
    return max_rel;
}

// Plain 6-loop dense 2-D cross-correlation (no groups), zero padding.
inline std::vector<double> naive_conv2d(const std::vector<double>& in, int batch, int cin, int h,
                                        int w, const std::vector<double>& weights, int cout,
                                        int kernel, int stride, int dilation, int padding) {
    const int oh = (h + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
    const int ow = (w + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(batch) * cout * oh * ow, 0.0);
    for (int b = 0; b < batch; ++b)
        for (int oc = 0; oc < cout; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int ic = 0; ic < cin; ++ic)
                        for (int ky = 0; ky < kernel; ++ky)
                            for (int kx = 0; kx < kernel; ++kx) {
                                const int iy = oy * stride - padding + ky * dilation;
                                const int ix = ox * stride - padding + kx * dilation;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += weights[((static_cast<std::size_t>(oc) * cin + ic) * kernel +
                                                ky) * kernel + kx] *
                                       in[((static_cast<std::size_t>(b) * cin + ic) * h + iy) * w +
                                          ix];
                            }
                    out[((static_cast<std::size_t>(b) * cout + oc) * oh + oy) * ow + ox] = acc;
                }
    return out;
}

// Inserts dilation-1 zeros between kernel taps; a dilated conv equals a dense
// conv with this inflated kernel.
inline std::vector<double> inflate_kernel(const std::vector<double>& weights, int cout, int cin,
                                          int kernel, int dilation) {
    const int ek = dilation * (kernel - 1) + 1;
    std::vector<double> out(static_cast<std::size_t>(cout) * cin * ek * ek, 0.0);
    for (int oc = 0; oc < cout; ++oc)
        for (int ic = 0; ic < cin; ++ic)
            for (int ky = 0; ky < kernel; ++ky)
                for (int kx = 0; kx < kernel; ++kx) {
                    out[((static_cast<std::size_t>(oc) * cin + ic) * ek + ky * dilation) * ek +
                        kx * dilation] =
                        weights[((static_cast<std::size_t>(oc) * cin + ic) * kernel + ky) * kernel +
                                kx];
                }
    return out;
}

// O(n^2) pairwise-domination Pareto front (indices of non-dominated points).
inline std::vector<std::size_t> brute_force_front(const std::vector<std::pair<double, double>>& pts) {
    std::vector<std::size_t> front;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < pts.size() && !dominated; ++j) {
            if (j == i) continue;
            const bool leq = pts[j].first <= pts[i].first && pts[j].second <= pts[i].second;
            const bool strict = pts[j].first < pts[i].first || pts[j].second < pts[i].second;
            if (leq && strict) dominated = true;
        }
        if (!dominated) front.push_back(i);
    }
    return front;
}

}  // namespace oracle
