#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mobilex/data.hpp"
#include "mobilex/loss.hpp"
#include "mobilex/metrics.hpp"
#include "mobilex/model.hpp"

#include "json.hpp"

namespace mobilex {

struct TrainConfig {
    double lr0 = 0.01;
    double lr_decay_factor = 0.2;
    int lr_decay_every_epochs = 5;
    int epochs = 20;
    int batch_size = 8;
    double momentum = 0.9;
    LossConfig loss;
    std::uint64_t seed = 0;
    std::optional<AugmentConfig> augment;  // nullopt = train on clean samples

    void validate() const;
};

// Step-decay schedule: lr0 * factor^(epoch / every).
double lr_at(int epoch, const TrainConfig& cfg);

// SGD with classical momentum: v <- m*v + g; w <- w - lr*v.
class SGD {
public:
    void step(std::vector<NamedTensor<float>>& params, double lr, double momentum);
    std::vector<NamedTensor<float>> state() const;  // velocity tensors, "opt.velocity." prefix
    void load_state(const std::vector<NamedTensor<float>>& tensors);

private:
    std::map<std::string, Tensor<float>> velocity_;
};

// Binary weight snapshot. Layout (all little-endian):
//   "MXNT" | u32 version | u64 metadata bytes | metadata JSON |
//   u32 tensor count | per tensor: u32 name len | name | u32 rank |
//   i32 dims... | u64 payload bytes | f32 data.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;
    nlohmann::json metadata;
    std::vector<NamedTensor<float>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies model-state tensors out of the checkpoint by name; missing tensors
// and shape mismatches are fatal and name the tensor.
void apply_checkpoint(MobileXNet<float>& model, const Checkpoint& ckpt);

struct TrainLogRow {
    int epoch = 0;
    int step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<TrainLogRow> rows;              // one per optimizer step
    std::vector<double> epoch_mean_loss;        // index = epoch
    std::string last_checkpoint;                // written every epoch
    std::string best_checkpoint;                // lowest epoch mean loss
};

// Full deterministic training run. out_dir receives train_log.csv plus
// last.ckpt / best.ckpt each epoch; resume_from continues after the epoch
// recorded in that checkpoint, bit-exactly matching an uninterrupted run.
TrainResult train(MobileXNet<float>& model, const Manifest& manifest, const TrainConfig& cfg,
                  const std::string& out_dir, const std::string& resume_from = "");

// Eval-mode sweep over the manifest in file order; no augmentation.
MetricsReport evaluate(MobileXNet<float>& model, const Manifest& manifest,
                       std::optional<double> cap_m,
                       RelDenominator rel_den = RelDenominator::ground_truth);

}  // namespace mobilex
