#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "mobilex/engine.hpp"

using namespace mobilex;
namespace fs = std::filesystem;

namespace {

ArchitectureConfig tiny_arch() {
    ArchitectureConfig arch;
    arch.variant = Variant::small;
    arch.width_mult = 0.125;
    return arch;
}

TrainConfig tiny_train(int epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 4;
    cfg.seed = 11;
    return cfg;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("learning-rate schedule") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg) == doctest::Approx(0.01));
    CHECK(lr_at(4, cfg) == doctest::Approx(0.01));
    CHECK(lr_at(5, cfg) == doctest::Approx(0.002));
    CHECK(lr_at(10, cfg) == doctest::Approx(0.0004));
    cfg.lr_decay_every_epochs = 40;
    CHECK(lr_at(39, cfg) == doctest::Approx(0.01));
    for (int e = 1; e < 50; ++e) CHECK(lr_at(e, cfg) <= lr_at(e - 1, cfg));

    TrainConfig bad;
    bad.lr0 = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.lr_decay_factor = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sgd step math") {
    std::vector<NamedTensor<float>> params{{"w", Tensor<float>({2}, {1.0f, 2.0f})}};
    params[0].second.set_requires_grad(true);
    auto g = params[0].second.grad();
    g[0] = 0.5f;
    g[1] = -1.0f;

    SGD opt;
    opt.step(params, 0.1, 0.0);  // vanilla: w -= lr * g
    CHECK(params[0].second.data()[0] == doctest::Approx(0.95));
    CHECK(params[0].second.data()[1] == doctest::Approx(2.1));

    // two momentum steps against the hand recursion v=mv+g, w-=lr*v
    Tensor<float> w({1}, {1.0f});
    w.set_requires_grad(true);
    std::vector<NamedTensor<float>> p2{{"w", w}};
    SGD opt2;
    w.grad()[0] = 0.5f;
    opt2.step(p2, 0.1, 0.9);  // v=0.5, w=1-0.05=0.95
    w.zero_grad();
    w.grad()[0] = 0.2f;
    opt2.step(p2, 0.1, 0.9);  // v=0.45+0.2=0.65, w=0.95-0.065=0.885
    CHECK(w.data()[0] == doctest::Approx(0.885));

    // lr = 0 leaves weights alone
    w.zero_grad();
    w.grad()[0] = 7.0f;
    opt2.step(p2, 0.0, 0.9);
    CHECK(w.data()[0] == doctest::Approx(0.885));

    std::vector<NamedTensor<float>> no_grad{{"w", Tensor<float>({1}, {1.0f})}};
    SGD opt3;
    CHECK_THROWS_AS(opt3.step(no_grad, 0.1, 0.9), ConfigError);
}

TEST_CASE("checkpoint round trip is bit-exact and idempotent") {
    const auto dir = fixtures::temp_dir("ckpt");
    MobileXNet<float> model(tiny_arch());
    model.init_weights(5);

    Checkpoint ckpt;
    ckpt.metadata = {{"arch", {{"variant", "small"}, {"width_mult", 0.125}}}, {"epoch", 3}};
    ckpt.tensors = model.state();
    const auto p1 = (fs::path(dir) / "a.ckpt").string();
    const auto p2 = (fs::path(dir) / "b.ckpt").string();
    save_checkpoint(p1, ckpt);
    Checkpoint back = load_checkpoint(p1);
    CHECK(back.metadata["epoch"] == 3);
    REQUIRE(back.tensors.size() == ckpt.tensors.size());
    for (std::size_t i = 0; i < back.tensors.size(); ++i) {
        CHECK(back.tensors[i].first == ckpt.tensors[i].first);
        REQUIRE(back.tensors[i].second.shape() == ckpt.tensors[i].second.shape());
        const auto a = back.tensors[i].second.data();
        const auto b = ckpt.tensors[i].second.data();
        CHECK(std::equal(a.begin(), a.end(), b.begin()));  // bitwise (floats copied raw)
    }
    save_checkpoint(p2, back);
    CHECK(slurp(p1) == slurp(p2));  // save -> load -> save byte-identical
}

TEST_CASE("checkpoint failure modes are distinct") {
    const auto dir = fixtures::temp_dir("ckpt_bad");
    MobileXNet<float> model(tiny_arch());
    Checkpoint ckpt;
    ckpt.tensors = model.state();
    const auto good = (fs::path(dir) / "good.ckpt").string();
    save_checkpoint(good, ckpt);

    // truncation
    auto bytes = slurp(good);
    bytes.resize(bytes.size() / 2);
    const auto trunc = (fs::path(dir) / "trunc.ckpt").string();
    std::ofstream(trunc, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    try {
        (void)load_checkpoint(trunc);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
    }

    // bad magic
    const auto magic = (fs::path(dir) / "magic.ckpt").string();
    std::ofstream(magic, std::ios::binary) << "NOPE this is not a checkpoint";
    try {
        (void)load_checkpoint(magic);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("magic") != std::string::npos);
    }

    // architecture mismatch names the offending tensor
    ArchitectureConfig wider = tiny_arch();
    wider.width_mult = 0.25;
    MobileXNet<float> bigger(wider);
    try {
        apply_checkpoint(bigger, ckpt);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("encoder1.") != std::string::npos);
    }

    ArchitectureConfig base_arch = tiny_arch();
    base_arch.variant = Variant::base;
    MobileXNet<float> base_model(base_arch);
    CHECK_THROWS_AS(apply_checkpoint(base_model, ckpt), ShapeError);
}

TEST_CASE("training is deterministic and resumable bit-exactly") {
    const auto data_dir = fixtures::temp_dir("train_data");
    const auto manifest_path = fixtures::make_dataset(data_dir, 8, 16, 16);
    const Manifest manifest = Manifest::parse(manifest_path);

    // run A: 3 epochs straight through
    MobileXNet<float> model_a(tiny_arch());
    model_a.init_weights(11);
    const auto dir_a = fixtures::temp_dir("train_a");
    const TrainResult a = train(model_a, manifest, tiny_train(3), dir_a);
    REQUIRE(a.rows.size() == 3 * 2);  // 8 samples / batch 4

    // run B: identical setup must reproduce the loss log bit-exactly
    MobileXNet<float> model_b(tiny_arch());
    model_b.init_weights(11);
    const auto dir_b = fixtures::temp_dir("train_b");
    const TrainResult b = train(model_b, manifest, tiny_train(3), dir_b);
    REQUIRE(b.rows.size() == a.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].loss == b.rows[i].loss);  // bitwise equality demanded
    }

    // run C: 2 epochs, then resume for the third
    MobileXNet<float> model_c(tiny_arch());
    model_c.init_weights(11);
    const auto dir_c = fixtures::temp_dir("train_c");
    const TrainResult c2 = train(model_c, manifest, tiny_train(2), dir_c);
    MobileXNet<float> model_d(tiny_arch());
    const auto dir_d = fixtures::temp_dir("train_d");
    const TrainResult c3 = train(model_d, manifest, tiny_train(3), dir_d, c2.last_checkpoint);
    REQUIRE(c3.rows.size() == 2);
    CHECK(c3.rows[0].epoch == 2);
    CHECK(c3.rows[0].loss == a.rows[4].loss);
    CHECK(c3.rows[1].loss == a.rows[5].loss);

    // resumed weights equal the straight-through weights bitwise
    const auto sa = model_a.state();
    const auto sd = model_d.state();
    REQUIRE(sa.size() == sd.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
        const auto x = sa[i].second.data();
        const auto y = sd[i].second.data();
        CHECK(std::equal(x.begin(), x.end(), y.begin()));
    }

    // loss at epoch 0 step 0 equals an independent forward with the same seed
    MobileXNet<float> probe(tiny_arch());
    probe.init_weights(11);
    DataLoader loader(manifest, 4, 11);
    loader.start_epoch(0);
    Batch batch;
    REQUIRE(loader.next(batch));
    Tensor<float> pred = probe.forward(batch.rgb, Mode::train);
    const float first_loss =
        compute_loss(LossConfig{}, pred, batch.depth, batch.mask).item();
    CHECK(static_cast<double>(first_loss) == a.rows[0].loss);
}

TEST_CASE("evaluate sweeps the manifest in eval mode") {
    const auto data_dir = fixtures::temp_dir("eval_data");
    const auto manifest_path = fixtures::make_dataset(data_dir, 3, 16, 16);
    const Manifest manifest = Manifest::parse(manifest_path);
    MobileXNet<float> model(tiny_arch());
    model.init_weights(2);
    const MetricsReport report = evaluate(model, manifest, 10.0);
    // 16x16 minus the 2x2 invalid corner, times 3 samples
    CHECK(report.pixels == 3 * (256 - 4));
    CHECK(std::isfinite(report.rmse));
    CHECK(report.delta3 <= 1.0);

    Manifest empty;
    CHECK_THROWS_AS((void)evaluate(model, empty, 10.0), DataError);
}
