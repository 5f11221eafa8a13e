#include "mobilex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mobilex/errors.hpp"

namespace mobilex {

std::string MetricsReport::csv_header() {
    return "label,rmse,rel,log10,delta1,delta2,delta3,pixels,cap_m";
}

std::string MetricsReport::csv_row(const std::string& label) const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << label << ',' << rmse << ',' << rel << ',' << log10 << ',' << delta1 << ','
       << delta2 << ',' << delta3 << ',' << pixels << ',';
    if (cap_m) {
        os << *cap_m;
    } else {
        os << "none";
    }
    return os.str();
}

void MetricsAccumulator::KahanSum::add(double v) {
    const double y = v - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
}

void MetricsAccumulator::KahanSum::merge(const KahanSum& o) {
    add(o.sum);
    add(-o.comp);
}

MetricsAccumulator::MetricsAccumulator(std::optional<double> cap_m, double min_depth_m,
                                       RelDenominator rel_den)
    : cap_m_(cap_m), min_depth_m_(min_depth_m), rel_den_(rel_den) {}

void MetricsAccumulator::accumulate_pixel(double d, double dstar) {
    if (dstar <= 0.0) return;
    if (cap_m_ && dstar > *cap_m_) return;
    d = std::max(d, min_depth_m_);
    if (cap_m_) d = std::min(d, *cap_m_);
    const double err = d - dstar;
    sum_sq_err_.add(err * err);
    const double den = rel_den_ == RelDenominator::ground_truth ? dstar : d;
    sum_rel_.add(std::abs(err) / den);
    sum_log10_.add(std::abs(std::log10(d) - std::log10(dstar)));
    const double ratio = std::max(d / dstar, dstar / d);
    if (ratio < 1.25) ++delta_counts_[0];
    if (ratio < 1.25 * 1.25) ++delta_counts_[1];
    if (ratio < 1.25 * 1.25 * 1.25) ++delta_counts_[2];
    ++count_;
}

void MetricsAccumulator::accumulate(std::span<const float> d, std::span<const float> dstar,
                                    std::span<const std::uint8_t> mask) {
    if (d.size() != dstar.size() || (!mask.empty() && mask.size() != d.size())) {
        throw DataError("metrics: prediction/groundtruth/mask sizes differ");
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        accumulate_pixel(d[i], dstar[i]);
    }
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
    sum_sq_err_.merge(other.sum_sq_err_);
    sum_rel_.merge(other.sum_rel_);
    sum_log10_.merge(other.sum_log10_);
    count_ += other.count_;
    for (int i = 0; i < 3; ++i) delta_counts_[i] += other.delta_counts_[i];
}

MetricsReport MetricsAccumulator::finalize() const {
    if (count_ == 0) throw DataError("metrics: no valid pixels accumulated");
    MetricsReport r;
    const double n = static_cast<double>(count_);
    r.rmse = std::sqrt(sum_sq_err_.sum / n);
    r.rel = sum_rel_.sum / n;
    r.log10 = sum_log10_.sum / n;
    r.delta1 = static_cast<double>(delta_counts_[0]) / n;
    r.delta2 = static_cast<double>(delta_counts_[1]) / n;
    r.delta3 = static_cast<double>(delta_counts_[2]) / n;
    r.pixels = count_;
    r.cap_m = cap_m_;
    return r;
}

}  // namespace mobilex
