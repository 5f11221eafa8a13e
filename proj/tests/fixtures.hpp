#pragma once

// Synthetic on-disk datasets for data/engine tests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mobilex/png_io.hpp"

namespace fixtures {

// Writes n RGB+depth16 pairs plus a manifest; colors and depths are a pure
// function of the sample index so content is reproducible. Depth raw value
// 0 marks the top-left 2x2 corner invalid in every sample.
inline std::string make_dataset(const std::string& dir, int n, int h, int w,
                                double divisor = 1000.0, bool with_recipe = false) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string manifest_path = (fs::path(dir) / "manifest.tsv").string();
    std::ofstream manifest(manifest_path);
    if (with_recipe) manifest << "#recipe center_crop " << h / 2 << " " << w / 2 << "\n";
    for (int i = 0; i < n; ++i) {
        mobilex::ImageU8 rgb;
        rgb.h = h;
        rgb.w = w;
        rgb.channels = 3;
        rgb.pixels.resize(static_cast<std::size_t>(h) * w * 3);
        mobilex::ImageU16 depth;
        depth.h = h;
        depth.w = w;
        depth.pixels.resize(static_cast<std::size_t>(h) * w);
        const double depth_m = 1.0 + i;  // constant plane per sample
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                rgb.pixels[p * 3 + 0] = static_cast<std::uint8_t>((40 * (i + 1)) % 256);
                rgb.pixels[p * 3 + 1] = static_cast<std::uint8_t>((90 + 25 * i) % 256);
                rgb.pixels[p * 3 + 2] = static_cast<std::uint8_t>((200 - 20 * i + x) % 256);
                depth.pixels[p] = (y < 2 && x < 2)
                                      ? 0
                                      : static_cast<std::uint16_t>(depth_m * divisor);
            }
        }
        const std::string rgb_name = "rgb_" + std::to_string(i) + ".png";
        const std::string depth_name = "depth_" + std::to_string(i) + ".png";
        mobilex::write_rgb8((fs::path(dir) / rgb_name).string(), rgb);
        mobilex::write_gray16((fs::path(dir) / depth_name).string(), depth);
        manifest << rgb_name << '\t' << depth_name << '\t' << divisor << "\n";
    }
    return manifest_path;
}

inline std::string temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "mobilex_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace fixtures
