#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "smir/image.hpp"
#include "smir/ops.hpp"
#include "smir/tensor.hpp"

namespace smir {

enum class WindowKind { uniform, gaussian };

// Windowed structural-similarity parameters. Inputs are assumed normalized
// to [0,1], hence dynamic range 1. Two configurations are used throughout:
// a 3x3 uniform window for per-patch selection losses and an 11x11 Gaussian
// window for the multiscale training loss.
struct SsimParams {
    int window_size = 11;
    WindowKind window_kind = WindowKind::gaussian;
    double gaussian_sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;

    double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
    double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }

    static SsimParams uniform3() { return {3, WindowKind::uniform, 1.5, 0.01, 0.03, 1.0}; }
    static SsimParams gaussian11() { return {11, WindowKind::gaussian, 1.5, 0.01, 0.03, 1.0}; }

    void validate() const {
        if (window_size < 3 || window_size % 2 == 0) {
            throw std::invalid_argument("ssim: window size must be odd and >= 3");
        }
        if (c1() <= 0.0 || c2() <= 0.0) {
            throw std::invalid_argument("ssim: stabilizing constants must be positive");
        }
    }
};

namespace detail {

template <typename T>
Tensor<T> ssim_window(const SsimParams& p) {
    const int ws = p.window_size;
    std::vector<T> w(static_cast<std::size_t>(ws) * ws);
    if (p.window_kind == WindowKind::uniform) {
        const T v = T(1) / static_cast<T>(ws * ws);
        for (auto& x : w) {
            x = v;
        }
    } else {
        const double c = (ws - 1) / 2.0;
        double total = 0.0;
        for (int y = 0; y < ws; ++y) {
            for (int x = 0; x < ws; ++x) {
                const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
                const double v = std::exp(-d2 / (2.0 * p.gaussian_sigma * p.gaussian_sigma));
                w[static_cast<std::size_t>(y) * ws + x] = static_cast<T>(v);
                total += v;
            }
        }
        for (auto& x : w) {
            x = static_cast<T>(static_cast<double>(x) / total);
        }
    }
    return Tensor<T>::from_data({1, 1, ws, ws}, std::move(w));
}

template <typename T>
void check_ssim_inputs(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p) {
    p.validate();
    detail::check_rank4(x.shape(), "ssim");
    check_same_shape(x, y, "ssim");
    if (x.dim(2) < p.window_size || x.dim(3) < p.window_size) {
        throw std::invalid_argument("ssim: image " + shape_str(x.shape()) +
                                    " smaller than window " + std::to_string(p.window_size));
    }
}

// Local mean/variance/covariance maps for one channel pair, valid-region
// semantics (no padding). Returns the full SSIM map and, when cs_only, just
// the contrast-structure term used by the intermediate multiscale levels.
template <typename T>
Tensor<T> local_similarity(const Tensor<T>& xc, const Tensor<T>& yc, const Tensor<T>& window,
                           const SsimParams& p, bool cs_only) {
    const T c1 = static_cast<T>(p.c1());
    const T c2 = static_cast<T>(p.c2());
    auto mu_x = conv2d(xc, window);
    auto mu_y = conv2d(yc, window);
    auto e_xx = conv2d(mul(xc, xc), window);
    auto e_yy = conv2d(mul(yc, yc), window);
    auto e_xy = conv2d(mul(xc, yc), window);
    auto var_x = sub(e_xx, mul(mu_x, mu_x));
    auto var_y = sub(e_yy, mul(mu_y, mu_y));
    auto cov = sub(e_xy, mul(mu_x, mu_y));
    auto cs = div(add_scalar(mul_scalar(cov, T(2)), c2),
                  add_scalar(add(var_x, var_y), c2));
    if (cs_only) {
        return cs;
    }
    auto lum = div(add_scalar(mul_scalar(mul(mu_x, mu_y), T(2)), c1),
                   add_scalar(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), c1));
    return mul(lum, cs);
}

template <typename T>
Tensor<T> channel_mean_map(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& p,
                           bool cs_only) {
    auto window = ssim_window<T>(p);
    const int channels = x.dim(1);
    Tensor<T> acc;
    for (int c = 0; c < channels; ++c) {
        auto m = local_similarity(slice_channels(x, c, c + 1), slice_channels(y, c, c + 1),
                                  window, p, cs_only);
        acc = c == 0 ? m : add(acc, m);
    }
    return mul_scalar(acc, T(1) / static_cast<T>(channels));
}

}  // namespace detail

// Per-pixel SSIM map over valid window positions, averaged across channels.
// Differentiable end to end.
template <typename T>
Tensor<T> ssim_map(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& params) {
    detail::check_ssim_inputs(x, y, params);
    return detail::channel_mean_map(x, y, params, false);
}

// Standard five-scale weights; always renormalized to sum to one, including
// the truncated case when the image only supports fewer scales.
inline std::vector<double> ms_ssim_weights(int scales) {
    static const double base[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    if (scales < 1 || scales > 5) {
        throw std::invalid_argument("ms_ssim: scales must be in [1,5]");
    }
    double total = 0.0;
    for (int i = 0; i < scales; ++i) {
        total += base[i];
    }
    std::vector<double> w(static_cast<std::size_t>(scales));
    for (int i = 0; i < scales; ++i) {
        w[static_cast<std::size_t>(i)] = base[i] / total;
    }
    return w;
}

inline int ms_ssim_max_scales(int h, int w, int window_size) {
    int scales = 1;
    int extent = std::min(h, w);
    while (scales < 5 && extent / 2 >= window_size) {
        extent /= 2;
        ++scales;
    }
    return scales;
}

// Multiscale SSIM: mean contrast-structure per intermediate scale, full SSIM
// (with luminance) at the coarsest, combined as a weighted product.
// Downsampling is 2x2 mean pooling, cropping a trailing odd row/column.
template <typename T>
Tensor<T> ms_ssim(const Tensor<T>& x, const Tensor<T>& y, const SsimParams& params, int scales) {
    detail::check_ssim_inputs(x, y, params);
    if (scales < 1) {
        throw std::invalid_argument("ms_ssim: scales must be >= 1");
    }
    const int min_dim = std::min(x.dim(2), x.dim(3));
    if (min_dim < params.window_size * (1 << (scales - 1))) {
        throw std::invalid_argument("ms_ssim: image " + shape_str(x.shape()) +
                                    " too small for " + std::to_string(scales) + " scales with " +
                                    std::to_string(params.window_size) + "-pixel window");
    }
    const auto weights = ms_ssim_weights(scales);
    Tensor<T> cur_x = x;
    Tensor<T> cur_y = y;
    Tensor<T> result;
    for (int s = 0; s < scales; ++s) {
        const bool coarsest = s == scales - 1;
        auto term = mean(detail::channel_mean_map(cur_x, cur_y, params, !coarsest));
        const T w = static_cast<T>(weights[static_cast<std::size_t>(s)]);
        auto factor = w == T(1) ? term : pow_scalar(term, w);
        result = s == 0 ? factor : mul(result, factor);
        if (!coarsest) {
            int h = cur_x.dim(2), wd = cur_x.dim(3);
            if (h % 2 != 0 || wd % 2 != 0) {
                cur_x = crop_spatial(cur_x, h - h % 2, wd - wd % 2);
                cur_y = crop_spatial(cur_y, h - h % 2, wd - wd % 2);
            }
            cur_x = avgpool2(cur_x);
            cur_y = avgpool2(cur_y);
        }
    }
    return result;
}

// Mean absolute difference over all elements.
template <typename T>
Tensor<T> l1(const Tensor<T>& x, const Tensor<T>& y) {
    detail::check_same_shape(x, y, "l1");
    return mean(abs(sub(x, y)));
}

// Reconstruction training loss: (1 - MS-SSIM) + L1 with the 11x11 Gaussian
// window, at the most scales the image supports (up to five).
template <typename T>
Tensor<T> train_loss(const Tensor<T>& recon, const Tensor<T>& target,
                     SsimParams params = SsimParams::gaussian11()) {
    detail::check_ssim_inputs(recon, target, params);
    const int scales = ms_ssim_max_scales(recon.dim(2), recon.dim(3), params.window_size);
    auto ms = ms_ssim(recon, target, params, scales);
    return add(sub_from_scalar(T(1), ms), l1(recon, target));
}

// Mean training loss over a batch, each image scored independently.
template <typename T>
Tensor<T> train_loss_batch(const Tensor<T>& recon, const Tensor<T>& target,
                           SsimParams params = SsimParams::gaussian11()) {
    detail::check_same_shape(recon, target, "train_loss_batch");
    const int n = recon.dim(0);
    Tensor<T> acc;
    for (int i = 0; i < n; ++i) {
        auto li = train_loss(slice_batch(recon, i, i + 1), slice_batch(target, i, i + 1), params);
        acc = i == 0 ? li : add(acc, li);
    }
    return mul_scalar(acc, T(1) / static_cast<T>(n));
}

// Evaluation-path conveniences on plain images (no graph, 64-bit math).

inline double ssim_mean(const Image& x, const Image& y, const SsimParams& params) {
    NoGradGuard ng;
    return mean(ssim_map(image_to_tensor<double>(x), image_to_tensor<double>(y), params)).item();
}

inline double ms_ssim_value(const Image& x, const Image& y, const SsimParams& params,
                            int scales) {
    NoGradGuard ng;
    return ms_ssim(image_to_tensor<double>(x), image_to_tensor<double>(y), params, scales).item();
}

inline double l1_value(const Image& x, const Image& y) {
    NoGradGuard ng;
    return l1(image_to_tensor<double>(x), image_to_tensor<double>(y)).item();
}

inline double train_loss_value(const Image& recon, const Image& target,
                               SsimParams params = SsimParams::gaussian11()) {
    NoGradGuard ng;
    return train_loss(image_to_tensor<double>(recon), image_to_tensor<double>(target), params)
        .item();
}

}  // namespace smir
