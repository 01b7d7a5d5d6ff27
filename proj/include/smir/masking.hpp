#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "smir/image.hpp"
#include "smir/patch_grid.hpp"
#include "smir/patch_loss.hpp"
#include "smir/rng.hpp"

namespace smir {

inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

// Boolean per-patch mask over a grid.
struct PatchMask {
    PatchGrid grid;
    std::vector<bool> masked;

    int count() const { return static_cast<int>(std::count(masked.begin(), masked.end(), true)); }

    PatchMask complement() const {
        PatchMask out{grid, masked};
        out.masked.flip();
        return out;
    }
};

// Exactly round(ratio * P) patches, chosen uniformly without replacement.
inline PatchMask random_mask(const PatchGrid& grid, double ratio, RandomStream& rng) {
    if (ratio <= 0.0 || ratio >= 1.0) {
        throw std::invalid_argument("random_mask: ratio must be in (0,1)");
    }
    const int p = grid.patch_count();
    const int m = round_half_up(ratio * p);
    std::vector<int> idx(static_cast<std::size_t>(p));
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first m slots end up a uniform sample.
    for (int i = 0; i < m; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(p - i)));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    PatchMask mask{grid, std::vector<bool>(static_cast<std::size_t>(p), false)};
    for (int i = 0; i < m; ++i) {
        mask.masked[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = true;
    }
    return mask;
}

// Masked patches set to the fill value, everything else untouched.
inline Image apply_mask(const Image& image, const PatchMask& mask, float fill = 0.f) {
    const PatchGrid& g = mask.grid;
    if (g.image_h != image.height || g.image_w != image.width) {
        throw std::invalid_argument("apply_mask: grid does not match image dimensions");
    }
    Image out = image;
    for (int n = 0; n < g.patch_count(); ++n) {
        if (!mask.masked[static_cast<std::size_t>(n)]) {
            continue;
        }
        for (int c = 0; c < out.channels; ++c) {
            for (int y = g.y0(n); y < g.y0(n) + g.patch_h; ++y) {
                for (int x = g.x0(n); x < g.x0(n) + g.patch_w; ++x) {
                    out.at(c, y, x) = fill;
                }
            }
        }
    }
    return out;
}

struct MaskedSample {
    int index = 0;
    PatchMask mask;
    Image masked_image;
};

enum class SampleScheme {
    // Samples 0/1 and 2/3 are exact complement pairs, extras fully random.
    // With five samples at 50% this guarantees every patch is masked at
    // least twice, which plain i.i.d. draws only achieve in expectation.
    complement_pairs,
    independent,
};

inline std::vector<MaskedSample> gen_samples(const Image& image, const PatchGrid& grid, int k,
                                             double ratio, float fill, RandomStream& rng,
                                             SampleScheme scheme = SampleScheme::complement_pairs) {
    if (k < 2) {
        throw std::invalid_argument("gen_samples: need at least 2 samples");
    }
    std::vector<MaskedSample> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        PatchMask mask;
        if (scheme == SampleScheme::complement_pairs && (i == 1 || i == 3)) {
            mask = out[static_cast<std::size_t>(i - 1)].mask.complement();
        } else {
            mask = random_mask(grid, ratio, rng);
        }
        Image masked = apply_mask(image, mask, fill);
        out.push_back(MaskedSample{i, std::move(mask), std::move(masked)});
    }
    return out;
}

// Elementwise sum of per-sample loss maps: L(n) = sum_i L_i(n).
inline PatchLossMap aggregate_loss(const std::vector<PatchLossMap>& maps) {
    if (maps.empty()) {
        throw std::invalid_argument("aggregate_loss: no maps");
    }
    PatchLossMap out = maps.front();
    for (std::size_t i = 1; i < maps.size(); ++i) {
        if (maps[i].grid != out.grid) {
            throw std::invalid_argument("aggregate_loss: grid mismatch between maps");
        }
        for (std::size_t n = 0; n < out.values.size(); ++n) {
            out.values[n] += maps[i].values[n];
        }
    }
    return out;
}

// Masks the round(ratio * P) patches with the largest loss values. Ties are
// broken toward the lower patch index; deterministic.
inline PatchMask select_top(const PatchLossMap& lossmap, double ratio) {
    if (ratio <= 0.0 || ratio >= 1.0) {
        throw std::invalid_argument("select_top: ratio must be in (0,1)");
    }
    const int p = lossmap.grid.patch_count();
    const int m = round_half_up(ratio * p);
    std::vector<int> idx(static_cast<std::size_t>(p));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        const double va = lossmap.values[static_cast<std::size_t>(a)];
        const double vb = lossmap.values[static_cast<std::size_t>(b)];
        return va > vb || (va == vb && a < b);
    });
    PatchMask mask{lossmap.grid, std::vector<bool>(static_cast<std::size_t>(p), false)};
    for (int i = 0; i < m; ++i) {
        mask.masked[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = true;
    }
    return mask;
}

// A reconstructor maps a masked image to a reconstruction of the same shape.
using Reconstructor = std::function<Image(const Image&)>;

struct SelectiveMaskResult {
    PatchMask mask;
    Image masked_image;
    PatchLossMap aggregated;
    int forward_passes = 0;
};

// The full selection pipeline: k masked samples, one reconstruction each,
// per-patch losses aggregated across samples, top-ratio patches masked.
inline SelectiveMaskResult selective_mask_image(const Reconstructor& model, const Image& image,
                                                const PatchGrid& grid, int k = 5,
                                                double ratio = 0.5, float fill = 0.f,
                                                RandomStream* rng = nullptr,
                                                SampleScheme scheme =
                                                    SampleScheme::complement_pairs) {
    if (rng == nullptr) {
        throw std::invalid_argument("selective_mask_image: rng stream required");
    }
    auto samples = gen_samples(image, grid, k, ratio, fill, *rng, scheme);
    std::vector<PatchLossMap> maps;
    maps.reserve(samples.size());
    int passes = 0;
    for (const auto& sample : samples) {
        Image recon = model(sample.masked_image);
        ++passes;
        if (!recon.same_shape(image)) {
            throw std::invalid_argument(
                "selective_mask_image: reconstructor changed the image shape");
        }
        maps.push_back(patch_loss(recon, image, grid));
    }
    SelectiveMaskResult result;
    result.aggregated = aggregate_loss(maps);
    result.mask = select_top(result.aggregated, ratio);
    result.masked_image = apply_mask(image, result.mask, fill);
    result.forward_passes = passes;
    return result;
}

}  // namespace smir
