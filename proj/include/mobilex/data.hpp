#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mobilex/tensor.hpp"

namespace mobilex {

// One RGB image with its metric depth map and per-pixel validity.
struct DepthSample {
    int h = 0, w = 0;
    std::vector<std::uint8_t> rgb;   // h*w*3 interleaved
    std::vector<float> depth_m;      // h*w, meters
    std::vector<std::uint8_t> valid;  // h*w, 1 where depth is a measurement

    void check() const;  // invariants: sizes agree, valid => depth > 0
};

enum class Recipe { none, half_center_crop, bottom_crop, center_crop };

Recipe recipe_from_string(const std::string& name);
std::string to_string(Recipe recipe);

struct ManifestEntry {
    std::string rgb_path;
    std::string depth_path;
    double depth_divisor = 1.0;
};

// Line-oriented dataset index: optional "#recipe <name> <h> <w>" header, then
// "rgb<TAB>depth<TAB>divisor" rows. Relative paths resolve against the
// manifest's directory.
struct Manifest {
    Recipe recipe = Recipe::none;
    int crop_h = 0, crop_w = 0;
    std::vector<ManifestEntry> entries;

    static Manifest parse(const std::string& path);
};

DepthSample load_sample(const ManifestEntry& entry);

// Geometric protocol step applied identically to rgb, depth and validity.
// RGB resizes bilinearly; depth and validity use nearest neighbor.
DepthSample preprocess(const DepthSample& sample, Recipe recipe, int out_h, int out_w);

struct AugmentConfig {
    double rotation_deg_lo = -5.0, rotation_deg_hi = 5.0;
    double scale_lo = 1.0, scale_hi = 1.5;
    double jitter_lo = 0.6, jitter_hi = 1.4;
    double flip_prob = 0.5;

    void validate() const;
    bool is_identity() const;
};

// Rotate -> scale (depth divided by the factor) -> color jitter -> flip,
// fully determined by the seed.
DepthSample augment(const DepthSample& sample, const AugmentConfig& cfg, std::uint64_t seed);

struct Batch {
    Tensor<float> rgb;    // [B,3,H,W] in [0,1]
    Tensor<float> depth;  // [B,1,H,W] meters
    Tensor<float> mask;   // [B,1,H,W] 1 = valid
    std::vector<std::size_t> indices;  // manifest rows in batch order
};

// Deterministic epoch stream: a seeded permutation per epoch, per-sample
// augmentation streams derived from (seed, epoch, sample index) so ordering
// and prefetch depth cannot change the data.
class DataLoader {
public:
    DataLoader(Manifest manifest, int batch_size, std::uint64_t seed,
               std::optional<AugmentConfig> augment = std::nullopt);

    std::size_t size() const { return manifest_.entries.size(); }
    std::size_t batches_per_epoch() const;

    void start_epoch(int epoch);
    // Fills the next batch; false once the epoch is exhausted.
    bool next(Batch& out);

private:
    Manifest manifest_;
    int batch_size_;
    std::uint64_t seed_;
    std::optional<AugmentConfig> augment_;
    int epoch_ = 0;
    std::size_t cursor_ = 0;
    std::vector<std::size_t> order_;
};

}  // namespace mobilex
