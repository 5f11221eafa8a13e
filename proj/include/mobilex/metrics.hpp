#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace mobilex {

enum class RelDenominator { ground_truth, prediction };

struct MetricsReport {
    double rmse = 0.0;    // meters
    double rel = 0.0;
    double log10 = 0.0;
    double delta1 = 0.0;  // fractions in [0,1], monotone in the threshold
    double delta2 = 0.0;
    double delta3 = 0.0;
    std::int64_t pixels = 0;
    std::optional<double> cap_m;

    // One CSV row: label,rmse,rel,log10,delta1,delta2,delta3,pixels,cap_m
    std::string csv_row(const std::string& label) const;
    static std::string csv_header();
};

// Streaming accumulator over valid pixels. Pixels are skipped when the mask is
// unset, dstar <= 0, or dstar exceeds cap_m; predictions are clamped to
// [min_depth_m, cap_m] first. Merge is exact (integer counts, compensated
// float sums), so sharded accumulation equals a single pass.
class MetricsAccumulator {
public:
    MetricsAccumulator() = default;
    explicit MetricsAccumulator(std::optional<double> cap_m, double min_depth_m = 1e-3,
                                RelDenominator rel_den = RelDenominator::ground_truth);

    void accumulate(std::span<const float> d, std::span<const float> dstar,
                    std::span<const std::uint8_t> mask);
    void accumulate_pixel(double d, double dstar);
    void merge(const MetricsAccumulator& other);

    std::int64_t count() const { return count_; }
    // Throws DataError when no valid pixel was seen.
    MetricsReport finalize() const;

private:
    struct KahanSum {
        double sum = 0.0, comp = 0.0;
        void add(double v);
        void merge(const KahanSum& o);
    };
    KahanSum sum_sq_err_, sum_rel_, sum_log10_;
    std::int64_t count_ = 0;
    std::int64_t delta_counts_[3] = {0, 0, 0};
    std::optional<double> cap_m_;
    double min_depth_m_ = 1e-3;
    RelDenominator rel_den_ = RelDenominator::ground_truth;
};

}  // namespace mobilex
