#include "mobilex/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mobilex/png_io.hpp"

namespace mobilex {

namespace {

std::size_t plane(const DepthSample& s) {
    return static_cast<std::size_t>(s.h) * static_cast<std::size_t>(s.w);
}

DepthSample blank(int h, int w) {
    DepthSample out;
    out.h = h;
    out.w = w;
    out.rgb.assign(static_cast<std::size_t>(h) * w * 3, 0);
    out.depth_m.assign(static_cast<std::size_t>(h) * w, 0.0f);
    out.valid.assign(static_cast<std::size_t>(h) * w, 0);
    return out;
}

// Nearest source index under half-pixel-center resampling.
int nearest_src(int dst, double scale, int limit) {
    const int src = static_cast<int>(std::lround((dst + 0.5) * scale - 0.5));
    return std::clamp(src, 0, limit - 1);
}

DepthSample resize(const DepthSample& in, int out_h, int out_w) {
    if (out_h == in.h && out_w == in.w) return in;
    DepthSample out = blank(out_h, out_w);
    const double sy = static_cast<double>(in.h) / out_h;
    const double sx = static_cast<double>(in.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), in.h - 1);
        const int y1 = std::min(y0 + 1, in.h - 1);
        const double wy = fy - y0;
        const int ny = nearest_src(y, sy, in.h);
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            const int x0 = std::min(static_cast<int>(fx), in.w - 1);
            const int x1 = std::min(x0 + 1, in.w - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const auto at = [&](int yy, int xx) {
                    return static_cast<double>(
                        in.rgb[(static_cast<std::size_t>(yy) * in.w + xx) * 3 + c]);
                };
                const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                                 wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
                out.rgb[(static_cast<std::size_t>(y) * out_w + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
            const int nx = nearest_src(x, sx, in.w);
            const std::size_t si = static_cast<std::size_t>(ny) * in.w + nx;
            const std::size_t di = static_cast<std::size_t>(y) * out_w + x;
            out.depth_m[di] = in.depth_m[si];
            out.valid[di] = in.valid[si];
        }
    }
    return out;
}

DepthSample crop(const DepthSample& in, int top, int left, int out_h, int out_w,
                 const char* what) {
    if (top < 0 || left < 0 || top + out_h > in.h || left + out_w > in.w) {
        throw DataError(std::string(what) + ": crop " + std::to_string(out_h) + "x" +
                        std::to_string(out_w) + " does not fit " + std::to_string(in.h) + "x" +
                        std::to_string(in.w));
    }
    DepthSample out = blank(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const std::size_t si = static_cast<std::size_t>(y + top) * in.w + left;
        const std::size_t di = static_cast<std::size_t>(y) * out_w;
        std::copy_n(in.rgb.begin() + static_cast<std::ptrdiff_t>(si * 3),
                    static_cast<std::ptrdiff_t>(out_w) * 3,
                    out.rgb.begin() + static_cast<std::ptrdiff_t>(di * 3));
        std::copy_n(in.depth_m.begin() + static_cast<std::ptrdiff_t>(si), out_w,
                    out.depth_m.begin() + static_cast<std::ptrdiff_t>(di));
        std::copy_n(in.valid.begin() + static_cast<std::ptrdiff_t>(si), out_w,
                    out.valid.begin() + static_cast<std::ptrdiff_t>(di));
    }
    return out;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    // splitmix64 finalizer over the combined word
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

void DepthSample::check() const {
    const std::size_t n = plane(*this);
    if (rgb.size() != n * 3 || depth_m.size() != n || valid.size() != n) {
        throw DataError("sample field sizes disagree with " + std::to_string(h) + "x" +
                        std::to_string(w));
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (depth_m[i] < 0.0f || (valid[i] && depth_m[i] <= 0.0f)) {
            throw DataError("sample has a valid pixel with non-positive depth");
        }
    }
}

Recipe recipe_from_string(const std::string& name) {
    if (name == "none") return Recipe::none;
    if (name == "half_center_crop") return Recipe::half_center_crop;
    if (name == "bottom_crop") return Recipe::bottom_crop;
    if (name == "center_crop") return Recipe::center_crop;
    throw ConfigError("unknown recipe '" + name + "'");
}

std::string to_string(Recipe recipe) {
    switch (recipe) {
        case Recipe::none: return "none";
        case Recipe::half_center_crop: return "half_center_crop";
        case Recipe::bottom_crop: return "bottom_crop";
        case Recipe::center_crop: return "center_crop";
    }
    throw ConfigError("invalid recipe value");
}

Manifest Manifest::parse(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path + ": cannot open manifest");
    const auto dir = std::filesystem::path(path).parent_path();
    Manifest m;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream header(line.substr(1));
            std::string tag;
            header >> tag;
            if (tag == "recipe") {
                std::string name;
                if (!(header >> name >> m.crop_h >> m.crop_w)) {
                    throw DataError(path + ":" + std::to_string(line_no) +
                                    ": recipe header needs '#recipe <name> <h> <w>'");
                }
                m.recipe = recipe_from_string(name);
            }
            continue;
        }
        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) {
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": expected 'rgb<TAB>depth<TAB>divisor'");
        }
        ManifestEntry e;
        e.rgb_path = (dir / line.substr(0, tab1)).string();
        e.depth_path = (dir / line.substr(tab1 + 1, tab2 - tab1 - 1)).string();
        try {
            e.depth_divisor = std::stod(line.substr(tab2 + 1));
        } catch (const std::exception&) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad divisor");
        }
        if (!(e.depth_divisor > 0.0)) {
            throw DataError(path + ":" + std::to_string(line_no) + ": divisor must be > 0");
        }
        m.entries.push_back(std::move(e));
    }
    return m;
}

DepthSample load_sample(const ManifestEntry& entry) {
    const ImageU8 rgb = read_rgb8(entry.rgb_path);
    const ImageU16 depth = read_gray16(entry.depth_path);
    if (rgb.h != depth.h || rgb.w != depth.w) {
        throw DataError(entry.rgb_path + ": rgb " + std::to_string(rgb.h) + "x" +
                        std::to_string(rgb.w) + " vs depth " + std::to_string(depth.h) + "x" +
                        std::to_string(depth.w));
    }
    DepthSample out;
    out.h = rgb.h;
    out.w = rgb.w;
    out.rgb = rgb.pixels;
    out.depth_m.resize(depth.pixels.size());
    out.valid.resize(depth.pixels.size());
    for (std::size_t i = 0; i < depth.pixels.size(); ++i) {
        out.depth_m[i] = static_cast<float>(depth.pixels[i] / entry.depth_divisor);
        out.valid[i] = depth.pixels[i] > 0 ? 1 : 0;
    }
    return out;
}

DepthSample preprocess(const DepthSample& sample, Recipe recipe, int out_h, int out_w) {
    switch (recipe) {
        case Recipe::none:
            return sample;
        case Recipe::half_center_crop: {
            DepthSample half = resize(sample, sample.h / 2, sample.w / 2);
            return crop(half, (half.h - out_h) / 2, (half.w - out_w) / 2, out_h, out_w,
                        "half_center_crop");
        }
        case Recipe::bottom_crop:
            return crop(sample, sample.h - out_h, (sample.w - out_w) / 2, out_h, out_w,
                        "bottom_crop");
        case Recipe::center_crop:
            return crop(sample, (sample.h - out_h) / 2, (sample.w - out_w) / 2, out_h, out_w,
                        "center_crop");
    }
    throw ConfigError("invalid recipe value");
}

void AugmentConfig::validate() const {
    if (rotation_deg_lo > rotation_deg_hi || scale_lo > scale_hi || jitter_lo > jitter_hi) {
        throw ConfigError("augment: interval bounds out of order");
    }
    if (scale_lo < 1.0) throw ConfigError("augment: scale lower bound must be >= 1");
    if (jitter_lo < 0.0) throw ConfigError("augment: jitter must be non-negative");
    if (flip_prob < 0.0 || flip_prob > 1.0) throw ConfigError("augment: flip_prob outside [0,1]");
}

bool AugmentConfig::is_identity() const {
    return rotation_deg_lo == 0.0 && rotation_deg_hi == 0.0 && scale_lo == 1.0 &&
           scale_hi == 1.0 && jitter_lo == 1.0 && jitter_hi == 1.0 && flip_prob == 0.0;
}

namespace {

DepthSample rotate(const DepthSample& in, double theta_deg) {
    if (theta_deg == 0.0) return in;
    const double theta = theta_deg * std::acos(-1.0) / 180.0;
    const double c = std::cos(theta), s = std::sin(theta);
    const double cy = (in.h - 1) / 2.0, cx = (in.w - 1) / 2.0;
    DepthSample out = blank(in.h, in.w);
    for (int y = 0; y < in.h; ++y) {
        for (int x = 0; x < in.w; ++x) {
            // inverse mapping: rotate the destination back into the source
            const double dy = y - cy, dx = x - cx;
            const double sy = c * dy + s * dx + cy;
            const double sx = -s * dy + c * dx + cx;
            const std::size_t di = static_cast<std::size_t>(y) * in.w + x;
            if (sy < 0 || sy > in.h - 1 || sx < 0 || sx > in.w - 1) continue;  // stays invalid
            const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
            const int y1 = std::min(y0 + 1, in.h - 1), x1 = std::min(x0 + 1, in.w - 1);
            const double wy = sy - y0, wx = sx - x0;
            for (int ch = 0; ch < 3; ++ch) {
                const auto at = [&](int yy, int xx) {
                    return static_cast<double>(
                        in.rgb[(static_cast<std::size_t>(yy) * in.w + xx) * 3 + ch]);
                };
                const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                                 wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
                out.rgb[di * 3 + ch] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
            const int ny = static_cast<int>(std::lround(sy));
            const int nx = static_cast<int>(std::lround(sx));
            const std::size_t si = static_cast<std::size_t>(ny) * in.w + nx;
            out.depth_m[di] = in.depth_m[si];
            out.valid[di] = in.valid[si];
        }
    }
    return out;
}

DepthSample scale_augment(const DepthSample& in, double s) {
    if (s == 1.0) return in;
    const int h2 = static_cast<int>(std::lround(in.h * s));
    const int w2 = static_cast<int>(std::lround(in.w * s));
    DepthSample big = resize(in, h2, w2);
    DepthSample out = crop(big, (h2 - in.h) / 2, (w2 - in.w) / 2, in.h, in.w, "scale augment");
    const float inv = static_cast<float>(1.0 / s);
    for (float& d : out.depth_m) d *= inv;
    return out;
}

void jitter(DepthSample& s, double brightness, double contrast, double saturation) {
    if (brightness == 1.0 && contrast == 1.0 && saturation == 1.0) return;
    const std::size_t n = static_cast<std::size_t>(s.h) * s.w;
    // image-mean gray level is the contrast pivot
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean += 0.299 * s.rgb[i * 3] + 0.587 * s.rgb[i * 3 + 1] + 0.114 * s.rgb[i * 3 + 2];
    }
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double r = s.rgb[i * 3], g = s.rgb[i * 3 + 1], b = s.rgb[i * 3 + 2];
        r *= brightness;
        g *= brightness;
        b *= brightness;
        r = (r - mean) * contrast + mean;
        g = (g - mean) * contrast + mean;
        b = (b - mean) * contrast + mean;
        const double gray = 0.299 * r + 0.587 * g + 0.114 * b;
        r = gray + (r - gray) * saturation;
        g = gray + (g - gray) * saturation;
        b = gray + (b - gray) * saturation;
        s.rgb[i * 3] = static_cast<std::uint8_t>(std::clamp(std::lround(r), 0L, 255L));
        s.rgb[i * 3 + 1] = static_cast<std::uint8_t>(std::clamp(std::lround(g), 0L, 255L));
        s.rgb[i * 3 + 2] = static_cast<std::uint8_t>(std::clamp(std::lround(b), 0L, 255L));
    }
}

void flip_horizontal(DepthSample& s) {
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w / 2; ++x) {
            const std::size_t a = static_cast<std::size_t>(y) * s.w + x;
            const std::size_t b = static_cast<std::size_t>(y) * s.w + (s.w - 1 - x);
            for (int c = 0; c < 3; ++c) std::swap(s.rgb[a * 3 + c], s.rgb[b * 3 + c]);
            std::swap(s.depth_m[a], s.depth_m[b]);
            std::swap(s.valid[a], s.valid[b]);
        }
    }
}

}  // namespace

DepthSample augment(const DepthSample& sample, const AugmentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    // Draw every parameter unconditionally so the stream layout is stable.
    const double theta =
        std::uniform_real_distribution<double>(cfg.rotation_deg_lo, cfg.rotation_deg_hi)(rng);
    const double s = std::uniform_real_distribution<double>(cfg.scale_lo, cfg.scale_hi)(rng);
    std::uniform_real_distribution<double> jit(cfg.jitter_lo, cfg.jitter_hi);
    const double brightness = jit(rng), contrast = jit(rng), saturation = jit(rng);
    const bool flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.flip_prob;

    DepthSample out = rotate(sample, theta);
    out = scale_augment(out, s);
    jitter(out, brightness, contrast, saturation);
    if (flip) flip_horizontal(out);
    return out;
}

DataLoader::DataLoader(Manifest manifest, int batch_size, std::uint64_t seed,
                       std::optional<AugmentConfig> augment)
    : manifest_(std::move(manifest)),
      batch_size_(batch_size),
      seed_(seed),
      augment_(std::move(augment)) {
    if (manifest_.entries.empty()) throw DataError("empty manifest");
    if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
    if (augment_) augment_->validate();
    start_epoch(0);
}

std::size_t DataLoader::batches_per_epoch() const {
    return (manifest_.entries.size() + static_cast<std::size_t>(batch_size_) - 1) /
           static_cast<std::size_t>(batch_size_);
}

void DataLoader::start_epoch(int epoch) {
    epoch_ = epoch;
    cursor_ = 0;
    order_.resize(manifest_.entries.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(mix(seed_, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order_.begin(), order_.end(), rng);
}

bool DataLoader::next(Batch& out) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t count =
        std::min(static_cast<std::size_t>(batch_size_), order_.size() - cursor_);
    std::vector<DepthSample> samples;
    samples.reserve(count);
    out.indices.clear();
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t idx = order_[cursor_ + k];
        DepthSample s = load_sample(manifest_.entries[idx]);
        if (manifest_.recipe != Recipe::none) {
            s = preprocess(s, manifest_.recipe, manifest_.crop_h, manifest_.crop_w);
        }
        if (augment_) {
            s = mobilex::augment(
                s, *augment_,
                mix(mix(seed_, static_cast<std::uint64_t>(epoch_)), idx));
        }
        s.check();
        if (!samples.empty() && (s.h != samples[0].h || s.w != samples[0].w)) {
            throw DataError("batch mixes image sizes " + std::to_string(samples[0].h) + "x" +
                            std::to_string(samples[0].w) + " and " + std::to_string(s.h) + "x" +
                            std::to_string(s.w));
        }
        out.indices.push_back(idx);
        samples.push_back(std::move(s));
    }
    cursor_ += count;

    const int h = samples[0].h, w = samples[0].w;
    const int b = static_cast<int>(count);
    out.rgb = Tensor<float>({b, 3, h, w});
    out.depth = Tensor<float>({b, 1, h, w});
    out.mask = Tensor<float>({b, 1, h, w});
    auto rgb = out.rgb.data();
    auto depth = out.depth.data();
    auto mask = out.mask.data();
    const std::size_t pl = static_cast<std::size_t>(h) * w;
    for (int bi = 0; bi < b; ++bi) {
        const DepthSample& s = samples[static_cast<std::size_t>(bi)];
        for (std::size_t i = 0; i < pl; ++i) {
            for (int c = 0; c < 3; ++c) {
                rgb[(static_cast<std::size_t>(bi) * 3 + c) * pl + i] =
                    static_cast<float>(s.rgb[i * 3 + c]) / 255.0f;
            }
            depth[static_cast<std::size_t>(bi) * pl + i] = s.depth_m[i];
            mask[static_cast<std::size_t>(bi) * pl + i] = s.valid[i] ? 1.0f : 0.0f;
        }
    }
    return true;
}

}  // namespace mobilex
