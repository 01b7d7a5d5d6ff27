#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "smir/image.hpp"
#include "smir/rng.hpp"

namespace smir {

// Desk-scale verification corpus: colored, textured shapes on a low-variance
// background with pixel-exact labels. Textures give shape patches strictly
// higher masked-reconstruction difficulty than the background.
struct SynthSpec {
    int count = 160;
    int image_size = 64;
    int num_classes = 4;  // background + shape classes
    int min_shapes = 1;
    int max_shapes = 3;
    bool textured = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 2 || count < 0 || image_size < 16 || min_shapes < 0 ||
            max_shapes < min_shapes) {
            throw std::invalid_argument("synth spec: invalid field values");
        }
    }
};

struct SynthExample {
    Image image;
    LabelMap label;
};

namespace detail {

enum class ShapeType { disk, rect, triangle };

inline bool inside_shape(ShapeType t, int y, int x, int cy, int cx, int r) {
    switch (t) {
        case ShapeType::disk:
            return (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r;
        case ShapeType::rect:
            return std::abs(y - cy) <= r && std::abs(x - cx) <= (r * 3) / 2;
        case ShapeType::triangle: {
            // upward isoceles: apex (cx, cy-r), base y = cy+r
            if (y < cy - r || y > cy + r) {
                return false;
            }
            const double frac = static_cast<double>(y - (cy - r)) / (2.0 * r);
            const double half = frac * r;
            return std::abs(x - cx) <= half;
        }
    }
    return false;
}

}  // namespace detail

inline SynthExample generate_synthetic_example(const SynthSpec& spec, int index) {
    spec.validate();
    auto rng = derive_stream(spec.seed, "synth", static_cast<std::uint64_t>(index));
    const int sz = spec.image_size;

    SynthExample out{Image(3, sz, sz), LabelMap(sz, sz, 0)};

    float base[3];
    for (auto& b : base) {
        b = static_cast<float>(rng.uniform(0.35, 0.6));
    }
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < sz; ++y) {
            for (int x = 0; x < sz; ++x) {
                out.image.at(c, y, x) =
                    clamp01(base[c] + static_cast<float>(rng.uniform(-0.015, 0.015)));
            }
        }
    }

    const int shape_count =
        spec.min_shapes +
        static_cast<int>(rng.uniform_int(
            static_cast<std::uint64_t>(spec.max_shapes - spec.min_shapes + 1)));
    for (int s = 0; s < shape_count; ++s) {
        const int type_index = static_cast<int>(rng.uniform_int(3));
        const auto type = static_cast<detail::ShapeType>(type_index);
        const std::int32_t class_id = 1 + type_index % (spec.num_classes - 1);
        const int r = sz / 8 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(sz / 8)));
        const int margin = (r * 3) / 2 + 2;
        const int cy =
            margin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                         std::max(1, sz - 2 * margin))));
        const int cx =
            margin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                         std::max(1, sz - 2 * margin))));

        float lo[3], hi[3];
        for (int c = 0; c < 3; ++c) {
            const float shade = static_cast<float>(rng.uniform(0.0, 1.0));
            lo[c] = clamp01(shade * 0.25f);
            hi[c] = clamp01(0.6f + shade * 0.4f);
        }
        const int period = 3 + static_cast<int>(rng.uniform_int(4));
        const bool vertical = rng.uniform01() < 0.5;

        for (int y = 0; y < sz; ++y) {
            for (int x = 0; x < sz; ++x) {
                if (!detail::inside_shape(type, y, x, cy, cx, r)) {
                    continue;
                }
                out.label.at(y, x) = class_id;
                const int phase = vertical ? x : y;
                const bool stripe_on = spec.textured && (phase / period) % 2 == 0;
                for (int c = 0; c < 3; ++c) {
                    const float v = spec.textured ? (stripe_on ? hi[c] : lo[c])
                                                  : (lo[c] + hi[c]) * 0.5f;
                    out.image.at(c, y, x) =
                        clamp01(v + static_cast<float>(rng.uniform(-0.04, 0.04)));
                }
            }
        }
    }
    return out;
}

inline std::vector<SynthExample> generate_synthetic(const SynthSpec& spec) {
    std::vector<SynthExample> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int i = 0; i < spec.count; ++i) {
        out.push_back(generate_synthetic_example(spec, i));
    }
    return out;
}

}  // namespace smir
