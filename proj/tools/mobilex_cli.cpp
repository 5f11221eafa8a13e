// Command-line front end: train / eval / predict / inspect / bench / pareto.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "mobilex/engine.hpp"
#include "mobilex/pareto.hpp"
#include "mobilex/parallel.hpp"
#include "mobilex/png_io.hpp"

namespace {

using namespace mobilex;

// Line-oriented "key = value" config with '#' comments.
std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::map<std::string, std::string> out;
    std::string line;
    int line_no = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

double to_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double d = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad number '" + value + "'");
    }
}

int to_int(const std::string& key, const std::string& value) {
    const double d = to_double(key, value);
    if (d != std::floor(d)) throw ConfigError("config key '" + key + "': expected integer");
    return static_cast<int>(d);
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + value + "'");
}

struct RunConfig {
    ArchitectureConfig arch;
    TrainConfig train;
    RelDenominator rel_den = RelDenominator::ground_truth;
};

void apply_config(RunConfig& rc, const std::map<std::string, std::string>& kv) {
    AugmentConfig aug;  // staged; installed only when augment = true
    bool augment_on = rc.train.augment.has_value();
    if (rc.train.augment) aug = *rc.train.augment;
    for (const auto& [key, value] : kv) {
        if (key == "variant") rc.arch.variant = variant_from_string(value);
        else if (key == "width_mult") rc.arch.width_mult = to_double(key, value);
        else if (key == "lr0") rc.train.lr0 = to_double(key, value);
        else if (key == "lr_decay_factor") rc.train.lr_decay_factor = to_double(key, value);
        else if (key == "lr_decay_every_epochs") rc.train.lr_decay_every_epochs = to_int(key, value);
        else if (key == "epochs") rc.train.epochs = to_int(key, value);
        else if (key == "batch_size") rc.train.batch_size = to_int(key, value);
        else if (key == "momentum") rc.train.momentum = to_double(key, value);
        else if (key == "loss") rc.train.loss.kind = loss_kind_from_string(value);
        else if (key == "berhu_fraction") rc.train.loss.berhu_fraction = to_double(key, value);
        else if (key == "seed") rc.train.seed = static_cast<std::uint64_t>(to_double(key, value));
        else if (key == "augment") augment_on = to_bool(key, value);
        else if (key == "rotation_lo") aug.rotation_deg_lo = to_double(key, value);
        else if (key == "rotation_hi") aug.rotation_deg_hi = to_double(key, value);
        else if (key == "scale_lo") aug.scale_lo = to_double(key, value);
        else if (key == "scale_hi") aug.scale_hi = to_double(key, value);
        else if (key == "jitter_lo") aug.jitter_lo = to_double(key, value);
        else if (key == "jitter_hi") aug.jitter_hi = to_double(key, value);
        else if (key == "flip_prob") aug.flip_prob = to_double(key, value);
        else if (key == "rel_denominator") {
            if (value == "ground_truth") rc.rel_den = RelDenominator::ground_truth;
            else if (value == "prediction") rc.rel_den = RelDenominator::prediction;
            else throw ConfigError("rel_denominator must be ground_truth or prediction");
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    rc.train.augment = augment_on ? std::optional<AugmentConfig>(aug) : std::nullopt;
}

MobileXNet<float> model_from_checkpoint(const std::string& path, Checkpoint& out_ckpt) {
    out_ckpt = load_checkpoint(path);
    ArchitectureConfig arch;
    const auto& meta = out_ckpt.metadata;
    if (meta.contains("arch")) {
        arch.variant = variant_from_string(meta["arch"].value("variant", "base"));
        arch.width_mult = meta["arch"].value("width_mult", 1.0);
    }
    MobileXNet<float> model(arch);
    apply_checkpoint(model, out_ckpt);
    return model;
}

void print_cost_report(const CostReport& report, bool csv) {
    if (csv) {
        std::cout << "name,parameters,macs\n";
        for (const auto& row : report.rows) {
            std::cout << row.name << ',' << row.parameters << ',' << row.macs << '\n';
        }
        std::cout << "total," << report.parameters << ',' << report.macs << '\n';
        return;
    }
    std::size_t name_w = 5;
    for (const auto& row : report.rows) name_w = std::max(name_w, row.name.size());
    for (const auto& row : report.rows) {
        std::cout << row.name << std::string(name_w - row.name.size() + 2, ' ')
                  << row.parameters << " params  " << row.macs << " MACs\n";
    }
    std::cout << "total" << std::string(name_w - 3, ' ') << report.parameters << " params  "
              << report.macs << " MACs  (" << report.parameters / 1e6 << " M / "
              << report.macs / 1e9 << " G)\n";
}

int run(int argc, char** argv) {
    CLI::App app{"MobileXNet monocular depth estimation toolkit"};
    app.require_subcommand(1);

    std::string config_path, manifest_path, checkpoint_path, out_path, resume_path;
    std::string variant_name, rel_den_name, device_label, in_csv, svg_path;
    std::uint64_t seed = 0;
    double cap = 0.0, width_mult = 0.0;
    int epochs = 0, height = 228, width = 304, iters = 100, warmup = 10;

    auto* train_cmd = app.add_subcommand("train", "train a model");
    train_cmd->add_option("--config", config_path, "key = value config file");
    train_cmd->add_option("--manifest", manifest_path, "training manifest")->required();
    train_cmd->add_option("--out", out_path, "output directory")->required();
    train_cmd->add_option("--seed", seed, "RNG seed (overrides config)");
    train_cmd->add_option("--variant", variant_name, "small|base|large (overrides config)");
    train_cmd->add_option("--epochs", epochs, "epoch count (overrides config)");
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", checkpoint_path)->required();
    eval_cmd->add_option("--manifest", manifest_path)->required();
    eval_cmd->add_option("--cap", cap, "depth cap in meters (e.g. 80, 50, 70)");
    eval_cmd->add_option("--rel-den", rel_den_name, "ground_truth|prediction");

    auto* predict_cmd = app.add_subcommand("predict", "write 16-bit depth PNGs");
    predict_cmd->add_option("--checkpoint", checkpoint_path)->required();
    predict_cmd->add_option("--manifest", manifest_path)->required();
    predict_cmd->add_option("--out", out_path, "output directory")->required();

    auto* inspect_cmd = app.add_subcommand("inspect", "parameter / MAC report");
    inspect_cmd->add_option("--config", config_path);
    inspect_cmd->add_option("--variant", variant_name);
    inspect_cmd->add_option("--width-mult", width_mult);
    inspect_cmd->add_option("--height", height);
    inspect_cmd->add_option("--width", width);
    bool inspect_csv = false;
    inspect_cmd->add_flag("--csv", inspect_csv, "emit CSV instead of a table");

    auto* bench_cmd = app.add_subcommand("bench", "forward-pass latency");
    bench_cmd->add_option("--checkpoint", checkpoint_path);
    bench_cmd->add_option("--variant", variant_name);
    bench_cmd->add_option("--height", height);
    bench_cmd->add_option("--width", width);
    bench_cmd->add_option("--iters", iters);
    bench_cmd->add_option("--warmup", warmup);
    bench_cmd->add_option("--device", device_label, "device label for the report")->required();

    auto* pareto_cmd = app.add_subcommand("pareto", "Pareto front of label,error,time_ms CSV");
    pareto_cmd->add_option("--in", in_csv, "input CSV")->required();
    pareto_cmd->add_option("--out", out_path, "front CSV")->required();
    pareto_cmd->add_option("--svg", svg_path, "scatter plot output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (train_cmd->parsed()) {
        RunConfig rc;
        if (!config_path.empty()) apply_config(rc, parse_config_file(config_path));
        if (train_cmd->count("--seed")) rc.train.seed = seed;
        if (train_cmd->count("--variant")) rc.arch.variant = variant_from_string(variant_name);
        if (train_cmd->count("--epochs")) rc.train.epochs = epochs;
        rc.arch.validate();
        rc.train.validate();

        Manifest manifest = Manifest::parse(manifest_path);
        MobileXNet<float> model(rc.arch);
        model.init_weights(rc.train.seed);
        TrainResult result = train(model, manifest, rc.train, out_path, resume_path);
        std::cout << "trained " << rc.train.epochs << " epochs; last checkpoint "
                  << result.last_checkpoint << "\n";
        return 0;
    }

    if (eval_cmd->parsed()) {
        Checkpoint ckpt;
        MobileXNet<float> model = model_from_checkpoint(checkpoint_path, ckpt);
        RelDenominator rel_den = RelDenominator::ground_truth;
        if (rel_den_name == "prediction") rel_den = RelDenominator::prediction;
        else if (!rel_den_name.empty() && rel_den_name != "ground_truth") {
            throw ConfigError("--rel-den must be ground_truth or prediction");
        }
        Manifest manifest = Manifest::parse(manifest_path);
        std::optional<double> cap_m;
        if (eval_cmd->count("--cap")) cap_m = cap;
        MetricsReport report = evaluate(model, manifest, cap_m, rel_den);
        std::cout << MetricsReport::csv_header() << "\n"
                  << report.csv_row(std::filesystem::path(manifest_path).stem().string()) << "\n";
        return 0;
    }

    if (predict_cmd->parsed()) {
        Checkpoint ckpt;
        MobileXNet<float> model = model_from_checkpoint(checkpoint_path, ckpt);
        Manifest manifest = Manifest::parse(manifest_path);
        if (manifest.entries.empty()) throw DataError(manifest_path + ": empty manifest");
        std::filesystem::create_directories(out_path);
        NoGradGuard<float> guard;
        for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
            DepthSample s = load_sample(manifest.entries[i]);
            if (manifest.recipe != Recipe::none) {
                s = preprocess(s, manifest.recipe, manifest.crop_h, manifest.crop_w);
            }
            const std::size_t n = static_cast<std::size_t>(s.h) * s.w;
            Tensor<float> rgb({1, 3, s.h, s.w});
            for (std::size_t p = 0; p < n; ++p) {
                for (int c = 0; c < 3; ++c) {
                    rgb.data()[static_cast<std::size_t>(c) * n + p] =
                        static_cast<float>(s.rgb[p * 3 + c]) / 255.0f;
                }
            }
            Tensor<float> pred = model.forward(rgb, Mode::eval);
            ImageU16 png;
            png.h = s.h;
            png.w = s.w;
            png.pixels.resize(n);
            const double divisor = manifest.entries[i].depth_divisor;
            for (std::size_t p = 0; p < n; ++p) {
                const double raw = std::lround(static_cast<double>(pred.data()[p]) * divisor);
                png.pixels[p] = static_cast<std::uint16_t>(std::clamp(raw, 0.0, 65535.0));
            }
            std::ostringstream name;
            name << "pred_" << std::setw(4) << std::setfill('0') << i << ".png";
            write_gray16((std::filesystem::path(out_path) / name.str()).string(), png);
        }
        std::cout << "wrote " << manifest.entries.size() << " predictions to " << out_path << "\n";
        return 0;
    }

    if (inspect_cmd->parsed()) {
        RunConfig rc;
        if (!config_path.empty()) apply_config(rc, parse_config_file(config_path));
        if (inspect_cmd->count("--variant")) rc.arch.variant = variant_from_string(variant_name);
        if (inspect_cmd->count("--width-mult")) rc.arch.width_mult = width_mult;
        rc.arch.validate();
        MobileXNet<float> model(rc.arch);
        print_cost_report(model.cost(height, width), inspect_csv);
        return 0;
    }

    if (bench_cmd->parsed()) {
        if (iters < 1) throw ConfigError("--iters must be >= 1");
        MobileXNet<float>* model = nullptr;
        Checkpoint ckpt;
        std::optional<MobileXNet<float>> from_ckpt, from_variant;
        if (!checkpoint_path.empty()) {
            from_ckpt.emplace(model_from_checkpoint(checkpoint_path, ckpt));
            model = &*from_ckpt;
        } else {
            ArchitectureConfig arch;
            if (!variant_name.empty()) arch.variant = variant_from_string(variant_name);
            from_variant.emplace(arch);
            model = &*from_variant;
        }
        set_kernel_threads(1);  // single-thread inference for stable timing
        NoGradGuard<float> guard;
        Tensor<float> input({1, 3, height, width}, 0.5f);
        std::vector<double> ms;
        ms.reserve(static_cast<std::size_t>(iters));
        for (int i = 0; i < warmup + iters; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            Tensor<float> out = model->forward(input, Mode::eval);
            const auto t1 = std::chrono::steady_clock::now();
            if (i >= warmup) {
                ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
        }
        std::sort(ms.begin(), ms.end());
        double mean = 0.0;
        for (double v : ms) mean += v;
        mean /= static_cast<double>(ms.size());
        const double median = ms[ms.size() / 2];
        const double p95 = ms[std::min(ms.size() - 1, static_cast<std::size_t>(
                                                          std::ceil(ms.size() * 0.95)) - 1)];
        std::cout << "device,input,iters,mean_ms,median_ms,p95_ms\n"
                  << device_label << ',' << height << 'x' << width << ',' << iters << ','
                  << mean << ',' << median << ',' << p95 << "\n";
        return 0;
    }

    if (pareto_cmd->parsed()) {
        std::vector<ParetoPoint> points = read_pareto_csv(in_csv);
        ParetoResult result = pareto_front(points);
        write_pareto_csv(out_path, result.front);
        if (!svg_path.empty()) {
            std::ofstream svg(svg_path);
            if (!svg) throw DataError(svg_path + ": cannot open for writing");
            svg << render_pareto_svg(points, result.front);
        }
        std::cout << result.front.size() << " of " << points.size() << " points on the front\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const mobilex::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const mobilex::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const mobilex::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
}
