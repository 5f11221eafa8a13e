#include "mobilex/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "mobilex/errors.hpp"

namespace mobilex {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::string& path, const char* what) {
    throw DataError(path + ": " + what);
}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

void open_reader(PngReader& r, std::FILE* f, const std::string& path) {
    png_byte header[8];
    if (std::fread(header, 1, 8, f) != 8 || png_sig_cmp(header, 0, 8) != 0) {
        fail(path, "not a PNG file");
    }
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!r.png) fail(path, "png reader allocation failed");
    r.info = png_create_info_struct(r.png);
    if (!r.info) fail(path, "png info allocation failed");
    if (setjmp(png_jmpbuf(r.png))) fail(path, "PNG decode error");
    png_init_io(r.png, f);
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);
}

}  // namespace

ImageU8 read_rgb8(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) fail(path, "cannot open");
    PngReader r;
    open_reader(r, f.get(), path);
    if (setjmp(png_jmpbuf(r.png))) fail(path, "PNG decode error");

    png_set_strip_16(r.png);
    png_set_strip_alpha(r.png);
    png_set_palette_to_rgb(r.png);
    png_set_expand_gray_1_2_4_to_8(r.png);
    png_set_gray_to_rgb(r.png);
    png_read_update_info(r.png, r.info);

    ImageU8 out;
    out.h = static_cast<int>(png_get_image_height(r.png, r.info));
    out.w = static_cast<int>(png_get_image_width(r.png, r.info));
    out.channels = 3;
    if (png_get_rowbytes(r.png, r.info) != static_cast<std::size_t>(out.w) * 3) {
        fail(path, "unexpected row size after RGB expansion");
    }
    out.pixels.resize(static_cast<std::size_t>(out.h) * out.w * 3);
    std::vector<png_bytep> rows(static_cast<std::size_t>(out.h));
    for (int y = 0; y < out.h; ++y) {
        rows[static_cast<std::size_t>(y)] =
            out.pixels.data() + static_cast<std::size_t>(y) * out.w * 3;
    }
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return out;
}

void write_rgb8(const std::string& path, const ImageU8& image) {
    if (image.h < 1 || image.w < 1 || image.channels != 3 ||
        image.pixels.size() != static_cast<std::size_t>(image.h) * image.w * 3) {
        throw ConfigError(path + ": inconsistent image dimensions for write");
    }
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) fail(path, "cannot open for writing");
    PngWriter w;
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!w.png) fail(path, "png writer allocation failed");
    w.info = png_create_info_struct(w.png);
    if (!w.info) fail(path, "png info allocation failed");
    if (setjmp(png_jmpbuf(w.png))) fail(path, "PNG encode error");

    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(image.w),
                 static_cast<png_uint_32>(image.h), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.h));
    for (int y = 0; y < image.h; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
            image.pixels.data() + static_cast<std::size_t>(y) * image.w * 3);
    }
    png_write_image(w.png, rows.data());
    png_write_end(w.png, nullptr);
}

ImageU16 read_gray16(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) fail(path, "cannot open");
    PngReader r;
    open_reader(r, f.get(), path);
    if (setjmp(png_jmpbuf(r.png))) fail(path, "PNG decode error");

    if (png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY ||
        png_get_bit_depth(r.png, r.info) != 16) {
        fail(path, "depth map must be 16-bit grayscale PNG");
    }
    png_set_swap(r.png);  // PNG stores 16-bit samples big-endian
    png_read_update_info(r.png, r.info);

    ImageU16 out;
    out.h = static_cast<int>(png_get_image_height(r.png, r.info));
    out.w = static_cast<int>(png_get_image_width(r.png, r.info));
    out.pixels.resize(static_cast<std::size_t>(out.h) * out.w);
    std::vector<png_bytep> rows(static_cast<std::size_t>(out.h));
    for (int y = 0; y < out.h; ++y) {
        rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(
            out.pixels.data() + static_cast<std::size_t>(y) * out.w);
    }
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return out;
}

void write_gray16(const std::string& path, const ImageU16& image) {
    if (image.h < 1 || image.w < 1 ||
        image.pixels.size() != static_cast<std::size_t>(image.h) * image.w) {
        throw ConfigError(path + ": inconsistent image dimensions for write");
    }
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) fail(path, "cannot open for writing");
    PngWriter w;
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!w.png) fail(path, "png writer allocation failed");
    w.info = png_create_info_struct(w.png);
    if (!w.info) fail(path, "png info allocation failed");
    if (setjmp(png_jmpbuf(w.png))) fail(path, "PNG encode error");

    png_init_io(w.png, f.get());
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(image.w),
                 static_cast<png_uint_32>(image.h), 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    png_set_swap(w.png);

    std::vector<png_bytep> rows(static_cast<std::size_t>(image.h));
    for (int y = 0; y < image.h; ++y) {
        rows[static_cast<std::size_t>(y)] = reinterpret_cast<png_bytep>(
            const_cast<std::uint16_t*>(image.pixels.data()) +
            static_cast<std::size_t>(y) * image.w);
    }
    png_write_image(w.png, rows.data());
    png_write_end(w.png, nullptr);
}

}  // namespace mobilex
