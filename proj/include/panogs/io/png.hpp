#pragma once

// PNG images via libpng. Reading yields RGB in [0, 1] from any 8- or 16-bit
// file (palette, grey and alpha are expanded or dropped); writing takes 1 or 3
// channels at 8 or 16 bits.

#include "panogs/core/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace panogs::io {

namespace detail {

using File = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

inline File open_file(const std::string& path, const char* mode) {
    File f(std::fopen(path.c_str(), mode), &std::fclose);
    if (!f) throw IoError("cannot open " + path);
    return f;
}

// Only trivially destructible locals live between setjmp and any longjmp.
inline bool png_read_all(png_structp png, png_infop info, std::FILE* f, std::vector<png_byte>& data,
                         std::vector<png_bytep>& rows, png_uint_32& w, png_uint_32& h, int& depth) {
    if (setjmp(png_jmpbuf(png))) return false;
    png_init_io(png, f);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    png_set_expand(png);
    png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    w = png_get_image_width(png, info);
    h = png_get_image_height(png, info);
    depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    if (png_get_channels(png, info) != 3 || (depth != 8 && depth != 16) || stride != w * 3 * (depth / 8)) return false;
    data.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = data.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return true;
}

inline bool png_write_all(png_structp png, png_infop info, std::FILE* f, std::vector<png_bytep>& rows, png_uint_32 w,
                          png_uint_32 h, int depth, int color) {
    if (setjmp(png_jmpbuf(png))) return false;
    png_init_io(png, f);
    png_set_IHDR(png, info, w, h, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    return true;
}

} // namespace detail

inline Image read_png(const std::string& path) {
    detail::File file = detail::open_file(path, "rb");
    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw IoError(path + ": not a PNG file");
    std::rewind(file.get());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng initialisation failed");
    }
    std::vector<png_byte> data;
    std::vector<png_bytep> rows;
    png_uint_32 w = 0, h = 0;
    int depth = 0;
    const bool ok = detail::png_read_all(png, info, file.get(), data, rows, w, h, depth);
    png_destroy_read_struct(&png, &info, nullptr);
    if (!ok) throw IoError(path + ": malformed or unsupported PNG");

    Image img(static_cast<int>(w), static_cast<int>(h), 3);
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
        const unsigned v = depth == 16 ? (data[2 * i] << 8) | data[2 * i + 1] : data[i];
        img.data()[i] = v / scale;
    }
    return img;
}

/// Values are clamped to [0, 1] and rounded to the nearest code.
inline void write_png(const std::string& path, const Image& img, int bit_depth = 8) {
    require(bit_depth == 8 || bit_depth == 16, "write_png: bit depth must be 8 or 16");
    require(img.channels() == 1 || img.channels() == 3, "write_png: image must have 1 or 3 channels");
    require(!img.empty(), "write_png: empty image");
    const double scale = bit_depth == 16 ? 65535.0 : 255.0;
    const std::size_t bytes = bit_depth / 8;
    std::vector<png_byte> data(img.size() * bytes);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const auto v = static_cast<unsigned>(std::lround(std::clamp(img.data()[i], 0.0, 1.0) * scale));
        if (bytes == 2) {
            data[2 * i] = static_cast<png_byte>(v >> 8);
            data[2 * i + 1] = static_cast<png_byte>(v & 0xff);
        } else {
            data[i] = static_cast<png_byte>(v);
        }
    }
    const std::size_t stride = static_cast<std::size_t>(img.width()) * img.channels() * bytes;
    std::vector<png_bytep> rows(img.height());
    for (int y = 0; y < img.height(); ++y) rows[y] = data.data() + y * stride;

    detail::File file = detail::open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng initialisation failed");
    }
    const bool ok = detail::png_write_all(png, info, file.get(), rows, img.width(), img.height(), bit_depth,
                                          img.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY);
    png_destroy_write_struct(&png, &info);
    if (!ok || std::fflush(file.get()) != 0) throw IoError("write failed: " + path);
}

} // namespace panogs::io
