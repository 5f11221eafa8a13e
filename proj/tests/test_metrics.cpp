#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "mobilex/errors.hpp"
#include "mobilex/metrics.hpp"
#include "oracles.hpp"

using namespace mobilex;

namespace {

struct Pair {
    std::vector<float> d, dstar;
    std::vector<std::uint8_t> mask;
};

Pair random_pair(std::mt19937_64& rng, std::size_t n) {
    Pair p;
    std::uniform_real_distribution<double> depth(0.1, 12.0);
    std::bernoulli_distribution keep(0.9);
    for (std::size_t i = 0; i < n; ++i) {
        p.d.push_back(static_cast<float>(depth(rng)));
        p.dstar.push_back(static_cast<float>(depth(rng)));
        p.mask.push_back(keep(rng) ? 1 : 0);
    }
    return p;
}

// Straight double loop over pixels; mirrors the documented skip/clamp rules.
MetricsReport oracle_metrics(const std::vector<Pair>& pairs, std::optional<double> cap,
                             double min_depth, RelDenominator rel_den) {
    double se = 0, rel = 0, lg = 0;
    std::int64_t n = 0, dc[3] = {0, 0, 0};
    for (const auto& p : pairs)
        for (std::size_t i = 0; i < p.d.size(); ++i) {
            if (!p.mask[i]) continue;
            double dstar = p.dstar[i];
            if (dstar <= 0 || (cap && dstar > *cap)) continue;
            double d = std::max(static_cast<double>(p.d[i]), min_depth);
            if (cap) d = std::min(d, *cap);
            const double e = d - dstar;
            se += e * e;
            rel += std::abs(e) / (rel_den == RelDenominator::ground_truth ? dstar : d);
            lg += std::abs(std::log10(d) - std::log10(dstar));
            const double ratio = std::max(d / dstar, dstar / d);
            for (int k = 0; k < 3; ++k)
                if (ratio < std::pow(1.25, k + 1)) ++dc[k];
            ++n;
        }
    MetricsReport r;
    r.rmse = std::sqrt(se / n);
    r.rel = rel / n;
    r.log10 = lg / n;
    r.delta1 = static_cast<double>(dc[0]) / n;
    r.delta2 = static_cast<double>(dc[1]) / n;
    r.delta3 = static_cast<double>(dc[2]) / n;
    r.pixels = n;
    return r;
}

void check_close(const MetricsReport& a, const MetricsReport& b, double tol = 1e-6) {
    CHECK(a.rmse == doctest::Approx(b.rmse).epsilon(tol));
    CHECK(a.rel == doctest::Approx(b.rel).epsilon(tol));
    CHECK(a.log10 == doctest::Approx(b.log10).epsilon(tol));
    CHECK(a.delta1 == doctest::Approx(b.delta1).epsilon(tol));
    CHECK(a.delta2 == doctest::Approx(b.delta2).epsilon(tol));
    CHECK(a.delta3 == doctest::Approx(b.delta3).epsilon(tol));
    CHECK(a.pixels == b.pixels);
}

}  // namespace

TEST_CASE("metrics match the double-loop oracle on random pairs") {
    std::mt19937_64 rng(211);
    for (int trial = 0; trial < 8; ++trial) {
        std::vector<Pair> pairs;
        for (int i = 0; i < 4; ++i) pairs.push_back(random_pair(rng, 64 * 64));
        for (auto rel_den : {RelDenominator::ground_truth, RelDenominator::prediction}) {
            MetricsAccumulator acc(10.0, 1e-3, rel_den);
            for (const auto& p : pairs) acc.accumulate(p.d, p.dstar, p.mask);
            check_close(acc.finalize(), oracle_metrics(pairs, 10.0, 1e-3, rel_den));
        }
    }
}

TEST_CASE("delta thresholds are monotone") {
    std::mt19937_64 rng(223);
    MetricsAccumulator acc(std::nullopt);
    auto p = random_pair(rng, 4096);
    acc.accumulate(p.d, p.dstar, p.mask);
    auto r = acc.finalize();
    CHECK(r.delta1 <= r.delta2);
    CHECK(r.delta2 <= r.delta3);
    CHECK(r.delta3 <= 1.0);
}

TEST_CASE("rel, log10 and deltas are scale invariant; rmse scales linearly") {
    std::mt19937_64 rng(227);
    auto p = random_pair(rng, 2048);
    const double s = 3.5;
    Pair scaled = p;
    for (auto& v : scaled.d) v = static_cast<float>(v * s);
    for (auto& v : scaled.dstar) v = static_cast<float>(v * s);
    MetricsAccumulator a(std::nullopt), b(std::nullopt);
    a.accumulate(p.d, p.dstar, p.mask);
    b.accumulate(scaled.d, scaled.dstar, scaled.mask);
    auto ra = a.finalize(), rb = b.finalize();
    CHECK(rb.rmse == doctest::Approx(ra.rmse * s).epsilon(1e-5));
    CHECK(rb.rel == doctest::Approx(ra.rel).epsilon(1e-5));
    CHECK(rb.log10 == doctest::Approx(ra.log10).epsilon(1e-4));
    CHECK(rb.delta1 == doctest::Approx(ra.delta1));
}

TEST_CASE("merged shards equal a single pass") {
    std::mt19937_64 rng(229);
    std::vector<Pair> pairs;
    for (int i = 0; i < 6; ++i) pairs.push_back(random_pair(rng, 512));
    MetricsAccumulator whole(8.0);
    for (const auto& p : pairs) whole.accumulate(p.d, p.dstar, p.mask);
    MetricsAccumulator merged(8.0);
    for (const auto& p : pairs) {
        MetricsAccumulator shard(8.0);
        shard.accumulate(p.d, p.dstar, p.mask);
        merged.merge(shard);
    }
    check_close(whole.finalize(), merged.finalize(), 1e-12);
}

TEST_CASE("invalid and capped pixels are skipped, predictions clamped") {
    MetricsAccumulator acc(5.0);
    std::vector<float> d{1.0f, 2.0f, 100.0f, 0.0f};
    std::vector<float> dstar{1.0f, 6.0f, 2.0f, -1.0f};  // 6 > cap, -1 invalid
    std::vector<std::uint8_t> mask{1, 1, 1, 1};
    acc.accumulate(d, dstar, mask);
    CHECK(acc.count() == 2);  // only pixels 0 and 2 survive
    auto r = acc.finalize();
    // Pixel 2's prediction clamps to the 5 m cap -> error 3.
    CHECK(r.rmse == doctest::Approx(std::sqrt((0.0 + 9.0) / 2.0)));

    MetricsAccumulator empty(5.0);
    CHECK_THROWS_AS((void)empty.finalize(), DataError);
}

TEST_CASE("csv row shape") {
    CHECK(MetricsReport::csv_header() ==
          "label,rmse,rel,log10,delta1,delta2,delta3,pixels,cap_m");
    MetricsReport r;
    r.pixels = 7;
    auto row = r.csv_row("val");
    CHECK(row.substr(0, 4) == "val,");
    CHECK(std::count(row.begin(), row.end(), ',') == 8);
}
