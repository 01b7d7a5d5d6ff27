#pragma once

#include <optional>
#include <stdexcept>

#include "smir/image.hpp"
#include "smir/rng.hpp"

namespace smir {

struct JitterFactors {
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
};

struct AugmentSettings {
    bool hflip = true;
    bool color_jitter = true;
    double jitter_lo = 0.8;
    double jitter_hi = 1.2;
    int crop_h = 0;  // 0: no crop
    int crop_w = 0;
};

inline JitterFactors draw_jitter(const AugmentSettings& s, RandomStream& rng) {
    JitterFactors f;
    f.brightness = rng.uniform(s.jitter_lo, s.jitter_hi);
    f.contrast = rng.uniform(s.jitter_lo, s.jitter_hi);
    f.saturation = rng.uniform(s.jitter_lo, s.jitter_hi);
    return f;
}

// Brightness scales intensities; contrast blends with the image's mean
// luminance; saturation blends each pixel with its own gray value. All
// factors 1.0 leave the image unchanged exactly.
inline Image apply_jitter(const Image& img, const JitterFactors& f) {
    Image out = img;
    if (f.brightness != 1.0) {
        for (auto& v : out.values) {
            v = clamp01(v * static_cast<float>(f.brightness));
        }
    }
    if (f.contrast != 1.0) {
        double lum = 0.0;
        if (out.channels == 3) {
            for (std::size_t p = 0; p < out.plane(); ++p) {
                lum += 0.299 * out.values[p] + 0.587 * out.values[out.plane() + p] +
                       0.114 * out.values[2 * out.plane() + p];
            }
            lum /= static_cast<double>(out.plane());
        } else {
            for (float v : out.values) {
                lum += v;
            }
            lum /= static_cast<double>(out.values.size());
        }
        const float l = static_cast<float>(lum);
        const float fc = static_cast<float>(f.contrast);
        for (auto& v : out.values) {
            v = clamp01(l + fc * (v - l));
        }
    }
    if (f.saturation != 1.0 && out.channels == 3) {
        const float fs = static_cast<float>(f.saturation);
        for (std::size_t p = 0; p < out.plane(); ++p) {
            const float g = 0.299f * out.values[p] + 0.587f * out.values[out.plane() + p] +
                            0.114f * out.values[2 * out.plane() + p];
            for (int c = 0; c < 3; ++c) {
                float& v = out.values[static_cast<std::size_t>(c) * out.plane() + p];
                v = clamp01(g + fs * (v - g));
            }
        }
    }
    return out;
}

struct CropRect {
    int y0 = 0;
    int x0 = 0;
    int h = 0;
    int w = 0;
};

inline CropRect draw_crop(int image_h, int image_w, int crop_h, int crop_w, RandomStream& rng) {
    if (crop_h > image_h || crop_w > image_w) {
        throw std::invalid_argument("augment: crop larger than image");
    }
    CropRect r;
    r.h = crop_h;
    r.w = crop_w;
    r.y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(image_h - crop_h + 1)));
    r.x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(image_w - crop_w + 1)));
    return r;
}

struct Augmented {
    Image image;
    std::optional<LabelMap> label;
};

// Flip and crop apply jointly to image and label; color jitter to the image
// only. Labels are moved, never interpolated. Draw order from the stream is
// fixed: crop, flip, jitter.
inline Augmented augment(const Image& image, const LabelMap* label, const AugmentSettings& s,
                         RandomStream& rng) {
    if (label && (label->height != image.height || label->width != image.width)) {
        throw std::invalid_argument("augment: label dimensions differ from image");
    }
    Augmented out;
    out.image = image;
    if (label) {
        out.label = *label;
    }
    if (s.crop_h > 0 && s.crop_w > 0) {
        const CropRect r = draw_crop(image.height, image.width, s.crop_h, s.crop_w, rng);
        out.image = crop(out.image, r.y0, r.x0, r.h, r.w);
        if (out.label) {
            out.label = crop(*out.label, r.y0, r.x0, r.h, r.w);
        }
    }
    if (s.hflip && rng.uniform01() < 0.5) {
        out.image = hflip(out.image);
        if (out.label) {
            out.label = hflip(*out.label);
        }
    }
    if (s.color_jitter) {
        out.image = apply_jitter(out.image, draw_jitter(s, rng));
    }
    return out;
}

}  // namespace smir
