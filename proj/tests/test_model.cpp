#include <cmath>
#include <cstdlib>
#include <random>

#include "doctest.h"
#include "mobilex/model.hpp"
#include "mobilex/parallel.hpp"
#include "oracles.hpp"

using namespace mobilex;

namespace {

ArchitectureConfig cfg_for(Variant v, double width_mult = 1.0) {
    ArchitectureConfig cfg;
    cfg.variant = v;
    cfg.width_mult = width_mult;
    return cfg;
}

}  // namespace

TEST_CASE("variant names round-trip") {
    for (Variant v : {Variant::small, Variant::base, Variant::large})
        CHECK(variant_from_string(to_string(v)) == v);
    CHECK_THROWS_AS((void)variant_from_string("tiny"), ConfigError);
    ArchitectureConfig bad;
    bad.width_mult = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("published parameter budgets") {
    MobileXNet<float> base(cfg_for(Variant::base));
    MobileXNet<float> small(cfg_for(Variant::small));
    MobileXNet<float> large(cfg_for(Variant::large));
    const auto cb = base.cost(228, 304);
    const auto cs = small.cost(228, 304);
    const auto cl = large.cost(228, 304);

    CHECK(std::abs(cb.parameters - 24'950'000.0) / 24'950'000.0 < 0.03);
    CHECK(std::abs(cs.parameters - 6'510'000.0) / 6'510'000.0 < 0.05);
    CHECK(cs.parameters < cb.parameters);
    CHECK(cb.parameters < cl.parameters);
    CHECK(cs.macs < cb.macs);
    CHECK(cb.macs < cl.macs);
    // MAC budget at the published input size, within 3%.
    CHECK(std::abs(cb.macs - 9.78e9) / 9.78e9 < 0.03);

    // Row totals add up to the headline numbers.
    std::int64_t p = 0, m = 0;
    for (const auto& row : cb.rows) {
        p += row.parameters;
        m += row.macs;
    }
    CHECK(p == cb.parameters);
    CHECK(m == cb.macs);
}

TEST_CASE("parameter count matches the live tensors") {
    MobileXNet<float> net(cfg_for(Variant::small, 0.25));
    std::int64_t live = 0;
    for (const auto& [name, t] : net.parameters()) live += t.numel();
    CHECK(live == net.cost(64, 64).parameters);
    // state() adds two running-stat tensors per BN pair.
    CHECK(net.state().size() > net.parameters().size());
}

TEST_CASE("separable vs regular cost ratio is exact in integers") {
    // ratio = 1/N + 1/Dk^2 must hold exactly: sep * N * Dk^2 == reg * (Dk^2 + N).
    for (int n : {8, 64, 512}) {
        const std::int64_t sites = 57LL * 76, cin = 32, k = 3;
        const auto sep = separable_macs(k, cin, n, sites);
        const auto reg = regular_macs(k, cin, n, sites);
        CHECK(sep * n * k * k == reg * (k * k + n));
        CHECK(reg > sep);  // strictly cheaper
    }
    // Speedup strictly between 8x and 9x at N = 512.
    const auto sep = separable_macs(3, 32, 512, 1000);
    const auto reg = regular_macs(3, 32, 512, 1000);
    const double speedup = static_cast<double>(reg) / static_cast<double>(sep);
    CHECK(speedup > 8.0);
    CHECK(speedup < 9.0);
}

TEST_CASE("output resolution equals input resolution") {
    for (auto [h, w] : {std::pair{228, 304}, std::pair{160, 256}, std::pair{96, 96}}) {
        CAPTURE(h);
        MobileXNet<float> net(cfg_for(Variant::base, 0.125));
        std::mt19937_64 rng(5);
        auto input = oracle::rand_tensor<float>({1, 3, h, w}, rng, 0.0, 1.0);
        NoGradGuard<float> guard;
        auto out = net.forward(input, Mode::eval);
        CHECK(out.shape() == Shape{1, 1, h, w});
        const auto [bh, bw] = net.bottleneck_size(h, w);
        CHECK(bh == (h + 15) / 16);
        CHECK(bw == (w + 15) / 16);
    }
    MobileXNet<float> base(cfg_for(Variant::base));
    CHECK(base.max_downsample() == 16);
    MobileXNet<float> large(cfg_for(Variant::large));
    CHECK(large.max_downsample() == 32);
    MobileXNet<float> small(cfg_for(Variant::small));
    CHECK(small.max_downsample() == 16);
    // small's first bottleneck sits at 1/8 (three stride-2 stages)
    const auto [sh, sw] = small.bottleneck_size(160, 256);
    CHECK(sh == 20);
    CHECK(sw == 32);
}

TEST_CASE("init is deterministic and forward is thread-count independent") {
    MobileXNet<float> a(cfg_for(Variant::small, 0.25));
    MobileXNet<float> b(cfg_for(Variant::small, 0.25));
    a.init_weights(99);
    b.init_weights(99);
    auto pa = a.parameters(), pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        REQUIRE(pa[i].second.numel() == pb[i].second.numel());
        for (std::int64_t j = 0; j < pa[i].second.numel(); ++j)
            CHECK(pa[i].second.data()[j] == pb[i].second.data()[j]);
    }

    std::mt19937_64 rng(6);
    auto input = oracle::rand_tensor<float>({1, 3, 32, 32}, rng, 0.0, 1.0);
    NoGradGuard<float> guard;
    set_kernel_threads(1);
    auto serial = a.forward(input, Mode::eval);
    set_kernel_threads(4);
    auto threaded = a.forward(input, Mode::eval);
    set_kernel_threads(0);  // restore default
    for (std::int64_t i = 0; i < serial.numel(); ++i)
        CHECK(serial.data()[i] == threaded.data()[i]);  // bitwise
}

TEST_CASE("init std follows sqrt(2/fan_in)") {
    MobileXNet<double> net(cfg_for(Variant::base, 0.5));
    net.init_weights(3);
    for (const auto& [name, t] : net.parameters()) {
        if (t.shape().size() != 4) continue;
        if (t.numel() < 4000) continue;  // only statistically meaningful layers
        const auto& s = t.shape();
        const double fan_in = static_cast<double>(s[1]) * s[2] * s[3];
        double sq = 0.0;
        for (double v : t.data()) sq += v * v;
        const double std_hat = std::sqrt(sq / static_cast<double>(t.numel()));
        CHECK(std_hat == doctest::Approx(std::sqrt(2.0 / fan_in)).epsilon(0.1));
    }
}

TEST_CASE("micro model end-to-end gradcheck") {
    MobileXNet<double> net(cfg_for(Variant::base, 0.125));
    net.init_weights(1);
    std::mt19937_64 rng(8);
    auto input = oracle::rand_tensor<double>({1, 3, 16, 16}, rng, 0.0, 1.0);
    auto params = net.parameters();
    std::vector<Tensor<double>> leaves;
    for (auto& [name, t] : params) {
        t.set_requires_grad(true);
        leaves.push_back(t);
    }
    auto forward = [&]() {
        auto y = net.forward(input, Mode::eval);  // eval BN: running stats stay fixed
        return sum(mul(y, y));
    };
    CHECK(oracle::gradcheck(forward, leaves, 1e-3, 2) < 1e-4);
}

TEST_CASE("backbone loading replaces encoder weights and rejects bad input") {
    MobileXNet<float> donor(cfg_for(Variant::base, 0.25));
    donor.init_weights(11);
    MobileXNet<float> target(cfg_for(Variant::base, 0.25));
    target.init_weights(22);

    auto donor_backbone = donor.backbone_state();
    REQUIRE(!donor_backbone.empty());
    load_pretrained_backbone(target, donor_backbone);
    auto got = target.backbone_state();
    REQUIRE(got.size() == donor_backbone.size());
    for (std::size_t i = 0; i < got.size(); ++i)
        for (std::int64_t j = 0; j < got[i].second.numel(); ++j)
            CHECK(got[i].second.data()[j] == donor_backbone[i].second.data()[j]);

    auto missing = donor_backbone;
    missing.pop_back();
    CHECK_THROWS_AS(load_pretrained_backbone(target, missing), ConfigError);

    auto wrong = donor.backbone_state();
    wrong[0].second = Tensor<float>({1, 1, 1, 1}, 0.0f);
    CHECK_THROWS_AS(load_pretrained_backbone(target, wrong), ShapeError);
}

TEST_CASE("base variant needs no skip projections, cost rows say so") {
    MobileXNet<float> base(cfg_for(Variant::base));
    MobileXNet<float> small(cfg_for(Variant::small));
    auto count_proj = [](const CostReport& r) {
        int n = 0;
        for (const auto& row : r.rows)
            if (row.name.find("project") != std::string::npos) ++n;
        return n;
    };
    CHECK(count_proj(base.cost(228, 304)) == 0);
    CHECK(count_proj(small.cost(228, 304)) > 0);
}
