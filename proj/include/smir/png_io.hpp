#pragma once

#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "smir/image.hpp"

namespace smir {

namespace detail {

struct PngReader {
    FILE* file = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    explicit PngReader(const std::string& path) {
        file = std::fopen(path.c_str(), "rb");
        if (!file) {
            throw std::runtime_error("png: cannot open " + path);
        }
        png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            cleanup();
            throw std::runtime_error("png: allocation failure reading " + path);
        }
    }
    ~PngReader() { cleanup(); }
    void cleanup() {
        if (png) {
            png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
            png = nullptr;
            info = nullptr;
        }
        if (file) {
            std::fclose(file);
            file = nullptr;
        }
    }
};

struct PngWriter {
    FILE* file = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    explicit PngWriter(const std::string& path) {
        file = std::fopen(path.c_str(), "wb");
        if (!file) {
            throw std::runtime_error("png: cannot open for writing " + path);
        }
        png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
        info = png ? png_create_info_struct(png) : nullptr;
        if (!png || !info) {
            cleanup();
            throw std::runtime_error("png: allocation failure writing " + path);
        }
    }
    ~PngWriter() { cleanup(); }
    void cleanup() {
        if (png) {
            png_destroy_write_struct(&png, info ? &info : nullptr);
            png = nullptr;
            info = nullptr;
        }
        if (file) {
            std::fclose(file);
            file = nullptr;
        }
    }
};

}  // namespace detail

// Decodes any common PNG into 3-channel RGB in [0,1]; 255 maps to exactly 1.
inline Image read_image_png(const std::string& path) {
    detail::PngReader r(path);
    if (setjmp(png_jmpbuf(r.png))) {
        throw std::runtime_error("png: failed to decode " + path);
    }
    png_init_io(r.png, r.file);
    png_read_info(r.png, r.info);

    png_set_strip_16(r.png);
    png_set_packing(r.png);
    const int color = png_get_color_type(r.png, r.info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(r.png);
    }
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_expand_gray_1_2_4_to_8(r.png);
        png_set_gray_to_rgb(r.png);
    }
    if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(r.png);
    }
    png_set_strip_alpha(r.png);
    png_read_update_info(r.png, r.info);

    const int h = static_cast<int>(png_get_image_height(r.png, r.info));
    const int w = static_cast<int>(png_get_image_width(r.png, r.info));
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    Image img(3, h, w);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = row[static_cast<std::size_t>(x) * 3 + c] / 255.f;
            }
        }
    }
    return img;
}

// Writes 8-bit RGB; 1-channel images are replicated to gray RGB.
inline void write_image_png(const Image& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3) {
        throw std::invalid_argument("png: only 1- or 3-channel images can be written");
    }
    detail::PngWriter w(path);
    if (setjmp(png_jmpbuf(w.png))) {
        throw std::runtime_error("png: failed to encode " + path);
    }
    png_init_io(w.png, w.file);
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = img.at(img.channels == 1 ? 0 : c, y, x);
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::lround(clamp01(v) * 255.f));
            }
        }
        png_write_row(w.png, row.data());
    }
    png_write_end(w.png, nullptr);
}

// Class-id maps: 8-bit grayscale values are the ids; palette PNGs are read
// as raw palette indices (the usual indexed-label convention).
inline LabelMap read_label_png(const std::string& path) {
    detail::PngReader r(path);
    if (setjmp(png_jmpbuf(r.png))) {
        throw std::runtime_error("png: failed to decode label " + path);
    }
    png_init_io(r.png, r.file);
    png_read_info(r.png, r.info);
    const int color = png_get_color_type(r.png, r.info);
    if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_PALETTE) {
        throw std::runtime_error("png: label " + path + " must be grayscale or palette-indexed");
    }
    png_set_strip_16(r.png);
    png_set_packing(r.png);  // one byte per pixel for low bit depths
    png_read_update_info(r.png, r.info);

    const int h = static_cast<int>(png_get_image_height(r.png, r.info));
    const int w = static_cast<int>(png_get_image_width(r.png, r.info));
    std::vector<unsigned char> row(static_cast<std::size_t>(w));
    LabelMap lab(h, w);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) {
            lab.at(y, x) = row[static_cast<std::size_t>(x)];
        }
    }
    return lab;
}

inline void write_label_png(const LabelMap& lab, const std::string& path) {
    detail::PngWriter w(path);
    if (setjmp(png_jmpbuf(w.png))) {
        throw std::runtime_error("png: failed to encode label " + path);
    }
    png_init_io(w.png, w.file);
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(lab.width),
                 static_cast<png_uint_32>(lab.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    std::vector<unsigned char> row(static_cast<std::size_t>(lab.width));
    for (int y = 0; y < lab.height; ++y) {
        for (int x = 0; x < lab.width; ++x) {
            const std::int32_t id = lab.at(y, x);
            if (id < 0 || id > 255) {
                throw std::invalid_argument("png: label id " + std::to_string(id) +
                                            " does not fit an 8-bit label file");
            }
            row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(id);
        }
        png_write_row(w.png, row.data());
    }
    png_write_end(w.png, nullptr);
}

}  // namespace smir
