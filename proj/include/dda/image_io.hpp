#pragma once

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dda/tensor.hpp"

namespace dda {

/// [-1,1] <-> 8-bit affine mapping used for all PNG traffic.
inline uint8_t unit_to_u8(double v) {
    double s = (v + 1.0) * 0.5 * 255.0;
    s = std::clamp(s, 0.0, 255.0);
    return static_cast<uint8_t>(std::lround(s));
}

inline double u8_to_unit(uint8_t b) { return b / 255.0 * 2.0 - 1.0; }

template <typename T>
std::vector<uint8_t> to_bytes(const Tensor3<T>& img) {
    if (img.c != 1 && img.c != 3) throw std::invalid_argument("to_bytes: channels must be 1 or 3");
    std::vector<uint8_t> out(static_cast<size_t>(img.h) * img.w * img.c);
    size_t k = 0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ci = 0; ci < img.c; ++ci) out[k++] = unit_to_u8(static_cast<double>(img(ci, y, x)));
    return out;
}

template <typename T>
void write_png(const std::string& path, const Tensor3<T>& img) {
    std::vector<uint8_t> bytes = to_bytes(img);

    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("write_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("write_png: libpng failure for " + path);
    }
    png_init_io(png, fp);
    png_set_compression_level(png, 6);
    int color = (img.c == 1) ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, img.w, img.h, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    // No ancillary chunks (time stamps etc.): identical pixels => identical bytes.
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.h);
    for (int y = 0; y < img.h; ++y) rows[y] = bytes.data() + static_cast<size_t>(y) * img.w * img.c;
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

template <typename T>
Tensor3<T> read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("read_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("read_png: libpng failure for " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("read_png: unsupported channel count in " + path);
    }

    std::vector<uint8_t> bytes(static_cast<size_t>(h) * w * channels);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = bytes.data() + static_cast<size_t>(y) * w * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    Tensor3<T> img(channels, static_cast<int>(h), static_cast<int>(w));
    size_t k = 0;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ci = 0; ci < channels; ++ci) img(ci, y, x) = static_cast<T>(u8_to_unit(bytes[k++]));
    return img;
}

}  // namespace dda
