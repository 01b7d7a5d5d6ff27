#pragma once

#include <stdexcept>
#include <vector>

#include "smir/image.hpp"
#include "smir/patch_grid.hpp"
#include "smir/ssim.hpp"

namespace smir {

// One non-negative loss value per patch.
struct PatchLossMap {
    PatchGrid grid;
    std::vector<double> values;
};

// Per-patch selection loss: (1 - SSIM) + L1 against the original, where the
// SSIM term averages 3x3 uniform windows lying fully inside the patch.
// Window containment makes the per-patch locality exact: pixels strictly
// inside one patch influence no other patch's entry. Evaluation path only,
// no gradients.
inline PatchLossMap patch_loss(const Image& recon, const Image& original, const PatchGrid& grid,
                               const SsimParams& params = SsimParams::uniform3()) {
    if (!recon.same_shape(original)) {
        throw std::invalid_argument("patch_loss: image shapes differ");
    }
    grid.validate();
    if (grid.image_h != recon.height || grid.image_w != recon.width) {
        throw std::invalid_argument("patch_loss: grid does not match image dimensions");
    }
    const int ws = params.window_size;
    if (grid.patch_h < ws || grid.patch_w < ws) {
        throw std::invalid_argument("patch_loss: patch smaller than the SSIM window");
    }
    const double c1 = params.c1();
    const double c2 = params.c2();
    const double inv_area = 1.0 / (ws * ws);

    PatchLossMap out;
    out.grid = grid;
    out.values.resize(static_cast<std::size_t>(grid.patch_count()));

    for (int n = 0; n < grid.patch_count(); ++n) {
        const int y0 = grid.y0(n), x0 = grid.x0(n);
        const int y1 = y0 + grid.patch_h, x1 = x0 + grid.patch_w;

        double ssim_total = 0.0;
        int window_count = 0;
        for (int wy = y0; wy + ws <= y1; ++wy) {
            for (int wx = x0; wx + ws <= x1; ++wx) {
                double channel_total = 0.0;
                for (int c = 0; c < recon.channels; ++c) {
                    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
                    for (int dy = 0; dy < ws; ++dy) {
                        for (int dx = 0; dx < ws; ++dx) {
                            const double a = recon.at(c, wy + dy, wx + dx);
                            const double b = original.at(c, wy + dy, wx + dx);
                            sx += a;
                            sy += b;
                            sxx += a * a;
                            syy += b * b;
                            sxy += a * b;
                        }
                    }
                    const double mx = sx * inv_area;
                    const double my = sy * inv_area;
                    const double vx = sxx * inv_area - mx * mx;
                    const double vy = syy * inv_area - my * my;
                    const double cov = sxy * inv_area - mx * my;
                    channel_total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                                     ((mx * mx + my * my + c1) * (vx + vy + c2));
                }
                ssim_total += channel_total / recon.channels;
                ++window_count;
            }
        }

        double l1_total = 0.0;
        for (int c = 0; c < recon.channels; ++c) {
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    const double d = recon.at(c, y, x) - original.at(c, y, x);
                    l1_total += d < 0 ? -d : d;
                }
            }
        }
        const double l1_mean =
            l1_total / (static_cast<double>(recon.channels) * grid.patch_h * grid.patch_w);
        // SSIM is <= 1 up to rounding; clamp so the map is exactly non-negative.
        const double v = (1.0 - ssim_total / window_count) + l1_mean;
        out.values[static_cast<std::size_t>(n)] = v < 0.0 ? 0.0 : v;
    }
    return out;
}

}  // namespace smir
