#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mobilex {

struct ImageU8 {
    int h = 0, w = 0, channels = 0;
    std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

struct ImageU16 {
    int h = 0, w = 0;
    std::vector<std::uint16_t> pixels;  // single channel
};

// 8-bit PNG decoded to RGB (gray and palette images expanded, alpha dropped).
ImageU8 read_rgb8(const std::string& path);
void write_rgb8(const std::string& path, const ImageU8& image);

// 16-bit grayscale PNG; the depth-map container format.
ImageU16 read_gray16(const std::string& path);
void write_gray16(const std::string& path, const ImageU16& image);

}  // namespace mobilex
