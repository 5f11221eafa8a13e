#include "mobilex/engine.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format requires a little-endian host");

namespace mobilex {

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) {
        throw ConfigError("lr_decay_factor must be in (0,1)");
    }
    if (lr_decay_every_epochs < 1) throw ConfigError("lr_decay_every_epochs must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
    loss.validate();
    if (augment) augment->validate();
}

double lr_at(int epoch, const TrainConfig& cfg) {
    return cfg.lr0 * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every_epochs);
}

void SGD::step(std::vector<NamedTensor<float>>& params, double lr, double momentum) {
    for (auto& [name, tensor] : params) {
        if (!tensor.has_grad()) {
            throw ConfigError("sgd: no gradient for learnable tensor '" + name + "'");
        }
        auto it = velocity_.find(name);
        if (it == velocity_.end()) {
            it = velocity_.emplace(name, Tensor<float>(tensor.shape())).first;
        }
        auto v = it->second.data();
        auto w = tensor.data();
        auto g = tensor.grad();
        for (std::int64_t i = 0; i < tensor.numel(); ++i) {
            v[i] = static_cast<float>(momentum * v[i] + g[i]);
            w[i] = static_cast<float>(w[i] - lr * v[i]);
            if (!std::isfinite(w[i])) {
                throw NumericError("sgd: non-finite weight in '" + name + "' after update");
            }
        }
    }
}

std::vector<NamedTensor<float>> SGD::state() const {
    std::vector<NamedTensor<float>> out;
    for (const auto& [name, tensor] : velocity_) {
        out.emplace_back("opt.velocity." + name, tensor);
    }
    return out;
}

void SGD::load_state(const std::vector<NamedTensor<float>>& tensors) {
    velocity_.clear();
    const std::string prefix = "opt.velocity.";
    for (const auto& [name, tensor] : tensors) {
        if (name.rfind(prefix, 0) == 0) velocity_.emplace(name.substr(prefix.size()), tensor);
    }
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw DataError(path + ": truncated checkpoint");
    return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path + ": cannot open for writing");
    out.write("MXNT", 4);
    write_pod(out, Checkpoint::kVersion);
    const std::string meta = ckpt.metadata.dump();
    write_pod(out, static_cast<std::uint64_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    write_pod(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Shape& shape = tensor.shape();
        write_pod(out, static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) write_pod(out, static_cast<std::int32_t>(d));
        const auto data = tensor.data();
        write_pod(out, static_cast<std::uint64_t>(data.size() * sizeof(float)));
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
    if (!out) throw DataError(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MXNT", 4) != 0) {
        throw DataError(path + ": bad magic, not a checkpoint");
    }
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != Checkpoint::kVersion) {
        throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    const auto meta_len = read_pod<std::uint64_t>(in, path);
    std::string meta(meta_len, '\0');
    in.read(meta.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw DataError(path + ": truncated checkpoint");
    try {
        ckpt.metadata = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception&) {
        throw DataError(path + ": corrupt checkpoint metadata");
    }
    const auto count = read_pod<std::uint32_t>(in, path);
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = read_pod<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!in) throw DataError(path + ": truncated checkpoint");
        const auto rank = read_pod<std::uint32_t>(in, path);
        if (rank > 8) throw DataError(path + ": corrupt tensor rank");
        Shape shape(rank);
        for (auto& d : shape) {
            d = read_pod<std::int32_t>(in, path);
            if (d < 1) throw DataError(path + ": corrupt tensor dimension");
        }
        const auto bytes = read_pod<std::uint64_t>(in, path);
        if (bytes != static_cast<std::uint64_t>(shape_numel(shape)) * sizeof(float)) {
            throw DataError(path + ": tensor payload size disagrees with dims");
        }
        Tensor<float> tensor(shape);
        in.read(reinterpret_cast<char*>(tensor.data().data()),
                static_cast<std::streamsize>(bytes));
        if (!in) throw DataError(path + ": truncated checkpoint");
        ckpt.tensors.emplace_back(std::move(name), std::move(tensor));
    }
    return ckpt;
}

void apply_checkpoint(MobileXNet<float>& model, const Checkpoint& ckpt) {
    std::map<std::string, const Tensor<float>*> table;
    for (const auto& [name, tensor] : ckpt.tensors) table[name] = &tensor;
    for (auto& [name, dst] : model.state()) {
        auto it = table.find(name);
        if (it == table.end()) {
            throw ShapeError("checkpoint is missing tensor '" + name + "'");
        }
        const Tensor<float>& src = *it->second;
        if (src.shape() != dst.shape()) {
            throw ShapeError("checkpoint tensor '" + name + "' has shape " +
                             shape_str(src.shape()) + ", model expects " +
                             shape_str(dst.shape()));
        }
        std::copy(src.data().begin(), src.data().end(), dst.data().begin());
    }
}

namespace {

Checkpoint snapshot(MobileXNet<float>& model, const SGD& opt, const TrainConfig& cfg, int epoch,
                    double epoch_loss) {
    Checkpoint ckpt;
    ckpt.metadata = {
        {"arch",
         {{"variant", to_string(model.config().variant)},
          {"width_mult", model.config().width_mult}}},
        {"normalization", "rgb/255"},
        {"epoch", epoch},
        {"epoch_mean_loss", epoch_loss},
        {"loss", to_string(cfg.loss.kind)},
        {"seed", cfg.seed},
    };
    ckpt.tensors = model.state();
    for (auto& nt : opt.state()) ckpt.tensors.push_back(std::move(nt));
    return ckpt;
}

}  // namespace

TrainResult train(MobileXNet<float>& model, const Manifest& manifest, const TrainConfig& cfg,
                  const std::string& out_dir, const std::string& resume_from) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    SGD opt;
    int start_epoch = 0;
    if (!resume_from.empty()) {
        Checkpoint ckpt = load_checkpoint(resume_from);
        apply_checkpoint(model, ckpt);
        opt.load_state(ckpt.tensors);
        start_epoch = ckpt.metadata.value("epoch", -1) + 1;
    }

    DataLoader loader(manifest, cfg.batch_size, cfg.seed, cfg.augment);
    auto params = model.parameters();
    for (auto& [name, t] : params) t.set_requires_grad(true);

    TrainResult result;
    result.last_checkpoint = (std::filesystem::path(out_dir) / "last.ckpt").string();
    result.best_checkpoint = (std::filesystem::path(out_dir) / "best.ckpt").string();
    result.epoch_mean_loss.assign(static_cast<std::size_t>(cfg.epochs),
                                  std::numeric_limits<double>::quiet_NaN());
    double best_loss = std::numeric_limits<double>::infinity();

    std::ofstream log((std::filesystem::path(out_dir) / "train_log.csv").string(),
                      resume_from.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw DataError(out_dir + ": cannot write train_log.csv");
    if (resume_from.empty()) log << "epoch,step,lr,loss\n";

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        loader.start_epoch(epoch);
        Batch batch;
        int step = 0;
        double loss_sum = 0.0;
        while (loader.next(batch)) {
            for (auto& [name, t] : params) t.zero_grad();
            double loss_value;
            {
                Tape<float> tape;
                Tensor<float> pred = model.forward(batch.rgb, Mode::train);
                Tensor<float> loss = compute_loss(cfg.loss, pred, batch.depth, batch.mask);
                loss_value = loss.item();
                if (!std::isfinite(loss_value)) {
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                       ", batch " + std::to_string(step));
                }
                tape.backward(loss);
            }
            opt.step(params, lr, cfg.momentum);

            result.rows.push_back({epoch, step, lr, loss_value});
            std::ostringstream row;
            row.precision(17);
            row << epoch << ',' << step << ',' << lr << ',' << loss_value << '\n';
            log << row.str();
            loss_sum += loss_value;
            ++step;
        }
        log.flush();
        const double epoch_loss = loss_sum / std::max(step, 1);
        result.epoch_mean_loss[static_cast<std::size_t>(epoch)] = epoch_loss;

        Checkpoint ckpt = snapshot(model, opt, cfg, epoch, epoch_loss);
        save_checkpoint(result.last_checkpoint, ckpt);
        if (epoch_loss < best_loss) {
            best_loss = epoch_loss;
            save_checkpoint(result.best_checkpoint, ckpt);
        }
    }
    return result;
}

MetricsReport evaluate(MobileXNet<float>& model, const Manifest& manifest,
                       std::optional<double> cap_m, RelDenominator rel_den) {
    if (manifest.entries.empty()) throw DataError("empty manifest");
    MetricsAccumulator acc(cap_m, 1e-3, rel_den);
    NoGradGuard<float> guard;
    for (const auto& entry : manifest.entries) {
        DepthSample s = load_sample(entry);
        if (manifest.recipe != Recipe::none) {
            s = preprocess(s, manifest.recipe, manifest.crop_h, manifest.crop_w);
        }
        const std::size_t n = static_cast<std::size_t>(s.h) * s.w;
        Tensor<float> rgb({1, 3, s.h, s.w});
        auto rd = rgb.data();
        for (std::size_t i = 0; i < n; ++i) {
            for (int c = 0; c < 3; ++c) {
                rd[static_cast<std::size_t>(c) * n + i] = static_cast<float>(s.rgb[i * 3 + c]) / 255.0f;
            }
        }
        Tensor<float> pred = model.forward(rgb, Mode::eval);
        acc.accumulate(pred.data(), s.depth_m, s.valid);
    }
    return acc.finalize();
}

}  // namespace mobilex
