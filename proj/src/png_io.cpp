// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace nucleo {

namespace {

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png(const std::string& path, int64_t h, int64_t w, int color_type, int bit_depth,
               const std::vector<png_bytep>& rows) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw std::runtime_error("png: cannot open for write: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: write error: " + path);
    }
    png_init_io(png, fp.get());
    // Fixed encoder settings keep outputs byte-stable across runs.
    png_set_compression_level(png, 6);
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), bit_depth,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) png_set_swap(png);  // host little-endian -> network order
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_rgb8(const std::string& path, int64_t h, int64_t w, const std::vector<uint8_t>& rgb) {
    if (static_cast<int64_t>(rgb.size()) != h * w * 3)
        throw std::invalid_argument("write_png_rgb8: size mismatch");
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int64_t r = 0; r < h; ++r)
        rows[static_cast<size_t>(r)] = const_cast<png_bytep>(rgb.data() + r * w * 3);
    write_png(path, h, w, PNG_COLOR_TYPE_RGB, 8, rows);
}

void write_png_gray8(const std::string& path, int64_t h, int64_t w, const std::vector<uint8_t>& g) {
    if (static_cast<int64_t>(g.size()) != h * w)
        throw std::invalid_argument("write_png_gray8: size mismatch");
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int64_t r = 0; r < h; ++r)
        rows[static_cast<size_t>(r)] = const_cast<png_bytep>(g.data() + r * w);
    write_png(path, h, w, PNG_COLOR_TYPE_GRAY, 8, rows);
}

void write_png_gray16(const std::string& path, int64_t h, int64_t w, const std::vector<uint16_t>& g) {
    if (static_cast<int64_t>(g.size()) != h * w)
        throw std::invalid_argument("write_png_gray16: size mismatch");
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int64_t r = 0; r < h; ++r)
        rows[static_cast<size_t>(r)] =
            const_cast<png_bytep>(reinterpret_cast<const png_byte*>(g.data() + r * w));
    write_png(path, h, w, PNG_COLOR_TYPE_GRAY, 16, rows);
}

PngImage read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw std::runtime_error("png: cannot open for read: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: allocation failure");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: read error: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    PngImage img;
    img.w = png_get_image_width(png, info);
    img.h = png_get_image_height(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    int color = png_get_color_type(png, info);

    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && img.bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (img.bit_depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
    color = png_get_color_type(png, info);
    img.bit_depth = png_get_bit_depth(png, info);
    img.channels = (color == PNG_COLOR_TYPE_GRAY) ? 1 : 3;
    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("png: unsupported color type in " + path);
    }

    size_t npx = static_cast<size_t>(img.h * img.w * img.channels);
    img.px.resize(npx);
    std::vector<uint8_t> raw;
    std::vector<png_bytep> rows(static_cast<size_t>(img.h));
    size_t row_bytes = static_cast<size_t>(img.w) * static_cast<size_t>(img.channels) *
                       (img.bit_depth == 16 ? 2 : 1);
    raw.resize(row_bytes * static_cast<size_t>(img.h));
    for (int64_t r = 0; r < img.h; ++r)
        rows[static_cast<size_t>(r)] = raw.data() + static_cast<size_t>(r) * row_bytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (img.bit_depth == 16) {
        const uint16_t* p = reinterpret_cast<const uint16_t*>(raw.data());
        for (size_t i = 0; i < npx; ++i) img.px[i] = p[i];
    } else {
        for (size_t i = 0; i < npx; ++i) img.px[i] = raw[i];
    }
    return img;
}

}  // namespace nucleo
