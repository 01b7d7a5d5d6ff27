#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "smir/tensor.hpp"

namespace smir {

// Dense channel-major (CHW) image with intensities in [0, 1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> values;  // channels * height * width

    Image() = default;
    Image(int c, int h, int w, float fill = 0.f)
        : channels(c), height(h), width(w),
          values(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::size_t size() const { return values.size(); }

    float& at(int c, int y, int x) {
        return values[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width +
                      x];
    }
    float at(int c, int y, int x) const {
        return values[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width +
                      x];
    }

    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

// Per-pixel class ids with an optional ignore id excluded from losses and
// metrics.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::int32_t> ids;
    std::int32_t ignore_id = -1;  // -1: nothing ignored

    LabelMap() = default;
    LabelMap(int h, int w, std::int32_t fill = 0)
        : height(h), width(w), ids(static_cast<std::size_t>(h) * w, fill) {}

    std::int32_t& at(int y, int x) { return ids[static_cast<std::size_t>(y) * width + x]; }
    std::int32_t at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }
};

template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
    std::vector<T> v(img.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = static_cast<T>(img.values[i]);
    }
    return Tensor<T>::from_data({1, img.channels, img.height, img.width}, std::move(v));
}

// Batches images of identical shape into [N,C,H,W].
template <typename T>
Tensor<T> images_to_batch(const std::vector<Image>& imgs) {
    if (imgs.empty()) {
        throw std::invalid_argument("images_to_batch: empty batch");
    }
    const Image& first = imgs.front();
    std::vector<T> v(imgs.size() * first.size());
    for (std::size_t n = 0; n < imgs.size(); ++n) {
        if (!imgs[n].same_shape(first)) {
            throw std::invalid_argument("images_to_batch: mixed image shapes in batch");
        }
        for (std::size_t i = 0; i < first.size(); ++i) {
            v[n * first.size() + i] = static_cast<T>(imgs[n].values[i]);
        }
    }
    return Tensor<T>::from_data(
        {static_cast<int>(imgs.size()), first.channels, first.height, first.width}, std::move(v));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t, int batch_index = 0) {
    if (t.rank() != 4) {
        throw std::invalid_argument("tensor_to_image: expected rank-4 tensor, got " +
                                    shape_str(t.shape()));
    }
    Image img(t.dim(1), t.dim(2), t.dim(3));
    const std::size_t offset = static_cast<std::size_t>(batch_index) * img.size();
    for (std::size_t i = 0; i < img.size(); ++i) {
        img.values[i] = static_cast<float>(t.values()[offset + i]);
    }
    return img;
}

inline Image hflip(const Image& img) {
    Image out(img.channels, img.height, img.width);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
            }
        }
    }
    return out;
}

inline LabelMap hflip(const LabelMap& lab) {
    LabelMap out(lab.height, lab.width);
    out.ignore_id = lab.ignore_id;
    for (int y = 0; y < lab.height; ++y) {
        for (int x = 0; x < lab.width; ++x) {
            out.at(y, x) = lab.at(y, lab.width - 1 - x);
        }
    }
    return out;
}

inline Image crop(const Image& img, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || y0 + h > img.height || x0 + w > img.width) {
        throw std::invalid_argument("crop: rectangle outside image");
    }
    Image out(img.channels, h, w);
    for (int c = 0; c < img.channels; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
            }
        }
    }
    return out;
}

inline LabelMap crop(const LabelMap& lab, int y0, int x0, int h, int w) {
    if (y0 < 0 || x0 < 0 || y0 + h > lab.height || x0 + w > lab.width) {
        throw std::invalid_argument("crop: rectangle outside label map");
    }
    LabelMap out(h, w);
    out.ignore_id = lab.ignore_id;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            out.at(y, x) = lab.at(y0 + y, x0 + x);
        }
    }
    return out;
}

inline float clamp01(float v) { return std::clamp(v, 0.f, 1.f); }

}  // namespace smir
