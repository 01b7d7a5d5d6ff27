#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace smir {

// Rectangular partition of an image into rows x cols equal patches. Patch
// index n runs row-major in [0, P).
struct PatchGrid {
    int rows = 0;
    int cols = 0;
    int patch_h = 0;
    int patch_w = 0;
    int image_h = 0;
    int image_w = 0;

    int patch_count() const { return rows * cols; }

    int patch_row(int n) const { return n / cols; }
    int patch_col(int n) const { return n % cols; }
    int y0(int n) const { return patch_row(n) * patch_h; }
    int x0(int n) const { return patch_col(n) * patch_w; }

    bool operator==(const PatchGrid&) const = default;

    void validate() const {
        if (rows < 1 || cols < 1 || rows * patch_h != image_h || cols * patch_w != image_w) {
            throw std::invalid_argument("patch grid does not tile the image exactly");
        }
        if (patch_h < 3 || patch_w < 3) {
            throw std::invalid_argument("patch grid: patches must be at least 3x3 pixels");
        }
    }
};

// Chooses the factorization rows*cols == target_patches whose patches divide
// the image exactly and are closest to square (min |log(patch_h/patch_w)|);
// ties prefer the taller patch. Deterministic.
inline PatchGrid make_grid(int image_h, int image_w, int target_patches) {
    if (target_patches < 4) {
        throw std::invalid_argument("make_grid: need at least 4 patches");
    }
    PatchGrid best;
    double best_score = 0.0;
    bool found = false;
    for (int rows = 1; rows <= target_patches; ++rows) {
        if (target_patches % rows != 0) {
            continue;
        }
        const int cols = target_patches / rows;
        if (image_h % rows != 0 || image_w % cols != 0) {
            continue;
        }
        const int ph = image_h / rows;
        const int pw = image_w / cols;
        if (ph < 3 || pw < 3) {
            continue;
        }
        const double score = std::abs(std::log(static_cast<double>(ph) / pw));
        const bool better =
            !found || score < best_score - 1e-12 ||
            (score < best_score + 1e-12 && ph > best.patch_h);
        if (better) {
            best = PatchGrid{rows, cols, ph, pw, image_h, image_w};
            best_score = score;
            found = true;
        }
    }
    if (!found) {
        throw std::invalid_argument("make_grid: no factorization of " +
                                    std::to_string(target_patches) + " patches divides a " +
                                    std::to_string(image_h) + "x" + std::to_string(image_w) +
                                    " image into patches of at least 3x3 pixels");
    }
    return best;
}

}  // namespace smir
