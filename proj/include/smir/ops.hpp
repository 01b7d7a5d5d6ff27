#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "smir/parallel.hpp"
#include "smir/tensor.hpp"

namespace smir {

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvDims {
    int batch, cin, h, w;
    int cout, kh, kw;
    int stride, padding;
    int ho, wo;
    int k() const { return cin * kh * kw; }
    int n() const { return ho * wo; }
};

template <typename T>
void im2col(const T* img, const ConvDims& d, T* col) {
    const int n_dim = d.n();
    for (int c = 0; c < d.cin; ++c) {
        const T* plane = img + static_cast<std::size_t>(c) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                T* row = col + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * n_dim;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.padding + ky;
                    T* out = row + static_cast<std::size_t>(oy) * d.wo;
                    if (iy < 0 || iy >= d.h) {
                        for (int ox = 0; ox < d.wo; ++ox) {
                            out[ox] = T(0);
                        }
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(iy) * d.w;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride - d.padding + kx;
                        out[ox] = (ix >= 0 && ix < d.w) ? src[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* img) {
    const int n_dim = d.n();
    for (int c = 0; c < d.cin; ++c) {
        T* plane = img + static_cast<std::size_t>(c) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky) {
            for (int kx = 0; kx < d.kw; ++kx) {
                const T* row = col + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * n_dim;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.padding + ky;
                    if (iy < 0 || iy >= d.h) {
                        continue;
                    }
                    const T* src = row + static_cast<std::size_t>(oy) * d.wo;
                    T* dst = plane + static_cast<std::size_t>(iy) * d.w;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride - d.padding + kx;
                        if (ix >= 0 && ix < d.w) {
                            dst[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

inline void check_rank4(const Shape& s, const char* op) {
    if (s.size() != 4) {
        throw std::invalid_argument(std::string(op) + ": expected rank-4 tensor, got " +
                                    shape_str(s));
    }
}

}  // namespace detail

// 2-D cross-correlation over [N,Cin,H,W] with an [Cout,Cin,kh,kw] kernel and
// optional [Cout] bias. Output size must divide exactly:
// H' = (H + 2*padding - kh)/stride + 1. Differentiable w.r.t. input, kernel
// and bias. The batch dimension is processed in parallel; per-image kernel
// and bias gradients are reduced in image order so results do not depend on
// the worker count.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride = 1, int padding = 0) {
    detail::check_rank4(input.shape(), "conv2d input");
    detail::check_rank4(kernel.shape(), "conv2d kernel");
    if (stride < 1 || padding < 0) {
        throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
    }
    detail::ConvDims d;
    d.batch = input.dim(0);
    d.cin = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.cout = kernel.dim(0);
    d.kh = kernel.dim(2);
    d.kw = kernel.dim(3);
    d.stride = stride;
    d.padding = padding;
    if (d.kh < 1 || d.kw < 1) {
        throw std::invalid_argument("conv2d: kernel extents must be >= 1");
    }
    if (kernel.dim(1) != d.cin) {
        throw std::invalid_argument("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                    " input channels, input has " + std::to_string(d.cin));
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != d.cout)) {
        throw std::invalid_argument("conv2d: bias shape must be [Cout]");
    }
    const int hnum = d.h + 2 * padding - d.kh;
    const int wnum = d.w + 2 * padding - d.kw;
    if (hnum < 0 || wnum < 0 || hnum % stride != 0 || wnum % stride != 0) {
        throw std::invalid_argument("conv2d: output size of input " + shape_str(input.shape()) +
                                    " with kernel " + shape_str(kernel.shape()) + ", stride " +
                                    std::to_string(stride) + ", padding " +
                                    std::to_string(padding) + " is not an exact integer");
    }
    d.ho = hnum / stride + 1;
    d.wo = wnum / stride + 1;

    const std::size_t in_plane = static_cast<std::size_t>(d.cin) * d.h * d.w;
    const std::size_t out_plane = static_cast<std::size_t>(d.cout) * d.n();
    std::vector<T> out(static_cast<std::size_t>(d.batch) * out_plane);
    const T* in_ptr = input.data();
    const T* k_ptr = kernel.data();
    const T* b_ptr = has_bias ? bias.data() : nullptr;

    parallel_for(static_cast<std::size_t>(d.batch), [&](std::size_t img) {
        std::vector<T> col(static_cast<std::size_t>(d.k()) * d.n());
        detail::im2col(in_ptr + img * in_plane, d, col.data());
        T* dst = out.data() + img * out_plane;
        detail::MatMap<T>(dst, d.cout, d.n()).noalias() =
            detail::ConstMatMap<T>(k_ptr, d.cout, d.k()) *
            detail::ConstMatMap<T>(col.data(), d.k(), d.n());
        if (b_ptr) {
            for (int m = 0; m < d.cout; ++m) {
                T* row = dst + static_cast<std::size_t>(m) * d.n();
                for (int n = 0; n < d.n(); ++n) {
                    row[n] += b_ptr[m];
                }
            }
        }
    });

    auto in_node = input.node();
    auto k_node = kernel.node();
    std::vector<std::shared_ptr<detail::TensorNode<T>>> parents = {in_node, k_node};
    std::shared_ptr<detail::TensorNode<T>> b_node;
    if (has_bias) {
        b_node = bias.node();
        parents.push_back(b_node);
    }

    auto backward = [in_node, k_node, b_node, d, in_plane, out_plane](const std::vector<T>& g) {
        const std::size_t kcount = static_cast<std::size_t>(d.cout) * d.k();
        const std::size_t nimg = static_cast<std::size_t>(d.batch);
        const bool need_in = in_node->requires_grad;
        const bool need_k = k_node->requires_grad;
        const bool need_b = b_node && b_node->requires_grad;

        std::vector<T> gin(need_in ? nimg * in_plane : 0, T(0));
        std::vector<T> gk_part(need_k ? nimg * kcount : 0, T(0));
        std::vector<T> gb_part(need_b ? nimg * d.cout : 0, T(0));

        parallel_for(nimg, [&](std::size_t img) {
            const T* gout = g.data() + img * out_plane;
            std::vector<T> col(static_cast<std::size_t>(d.k()) * d.n());
            detail::im2col(in_node->values.data() + img * in_plane, d, col.data());
            if (need_k) {
                // dK[m,k] = sum_n gout[m,n] * col[k,n]
                detail::MatMap<T>(gk_part.data() + img * kcount, d.cout, d.k()).noalias() =
                    detail::ConstMatMap<T>(gout, d.cout, d.n()) *
                    detail::ConstMatMap<T>(col.data(), d.k(), d.n()).transpose();
            }
            if (need_b) {
                T* gb = gb_part.data() + img * d.cout;
                for (int m = 0; m < d.cout; ++m) {
                    const T* grow = gout + static_cast<std::size_t>(m) * d.n();
                    T acc = T(0);
                    for (int n = 0; n < d.n(); ++n) {
                        acc += grow[n];
                    }
                    gb[m] = acc;
                }
            }
            if (need_in) {
                // dcol[k,n] = sum_m K[m,k] * gout[m,n], then scatter to image.
                std::vector<T>& dcol = col;  // reuse, overwritten below
                detail::MatMap<T>(dcol.data(), d.k(), d.n()).noalias() =
                    detail::ConstMatMap<T>(k_node->values.data(), d.cout, d.k()).transpose() *
                    detail::ConstMatMap<T>(gout, d.cout, d.n());
                detail::col2im_add(dcol.data(), d, gin.data() + img * in_plane);
            }
        });

        if (need_in) {
            in_node->accumulate(gin);
        }
        if (need_k) {
            std::vector<T> gk(kcount, T(0));
            for (std::size_t img = 0; img < nimg; ++img) {
                const T* part = gk_part.data() + img * kcount;
                for (std::size_t i = 0; i < kcount; ++i) {
                    gk[i] += part[i];
                }
            }
            k_node->accumulate(gk);
        }
        if (need_b) {
            std::vector<T> gb(static_cast<std::size_t>(d.cout), T(0));
            for (std::size_t img = 0; img < nimg; ++img) {
                const T* part = gb_part.data() + img * d.cout;
                for (int m = 0; m < d.cout; ++m) {
                    gb[static_cast<std::size_t>(m)] += part[m];
                }
            }
            b_node->accumulate(gb);
        }
    };

    return detail::make_op_result<T>({d.batch, d.cout, d.ho, d.wo}, std::move(out),
                                     std::move(parents), std::move(backward));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, int stride = 1,
                 int padding = 0) {
    return conv2d(input, kernel, Tensor<T>(), stride, padding);
}

// 2x2 max pooling. Gradient routes to the argmax; ties go to the first
// element in row-major window order.
template <typename T>
Tensor<T> maxpool2(const Tensor<T>& input) {
    detail::check_rank4(input.shape(), "maxpool2");
    const int batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("maxpool2: spatial dims must be even, got " +
                                    shape_str(input.shape()));
    }
    const int ho = h / 2, wo = w / 2;
    std::vector<T> out(static_cast<std::size_t>(batch) * ch * ho * wo);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    const T* in = input.data();
    std::size_t o = 0;
    for (int nc = 0; nc < batch * ch; ++nc) {
        const T* plane = in + static_cast<std::size_t>(nc) * h * w;
        const std::size_t base = static_cast<std::size_t>(nc) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox, ++o) {
                std::size_t best = static_cast<std::size_t>(2 * oy) * w + 2 * ox;
                T bv = plane[best];
                const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
                for (std::size_t c : cand) {
                    if (plane[c] > bv) {
                        bv = plane[c];
                        best = c;
                    }
                }
                out[o] = bv;
                (*argmax)[o] = base + best;
            }
        }
    }
    auto an = input.node();
    return detail::make_op_result<T>({batch, ch, ho, wo}, std::move(out), {an},
                                     [an, argmax](const std::vector<T>& g) {
                                         if (!an->requires_grad) {
                                             return;
                                         }
                                         std::vector<T> ga(an->values.size(), T(0));
                                         for (std::size_t i = 0; i < g.size(); ++i) {
                                             ga[(*argmax)[i]] += g[i];
                                         }
                                         an->accumulate(ga);
                                     });
}

// 2x2 mean pooling, the downsampling step of the multiscale loss.
template <typename T>
Tensor<T> avgpool2(const Tensor<T>& input) {
    detail::check_rank4(input.shape(), "avgpool2");
    const int batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("avgpool2: spatial dims must be even, got " +
                                    shape_str(input.shape()));
    }
    const int ho = h / 2, wo = w / 2;
    std::vector<T> out(static_cast<std::size_t>(batch) * ch * ho * wo);
    const T* in = input.data();
    std::size_t o = 0;
    for (int nc = 0; nc < batch * ch; ++nc) {
        const T* plane = in + static_cast<std::size_t>(nc) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
            const T* r0 = plane + static_cast<std::size_t>(2 * oy) * w;
            const T* r1 = r0 + w;
            for (int ox = 0; ox < wo; ++ox, ++o) {
                out[o] = (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * T(0.25);
            }
        }
    }
    auto an = input.node();
    return detail::make_op_result<T>(
        {batch, ch, ho, wo}, std::move(out), {an}, [an, h, w, ho, wo](const std::vector<T>& g) {
            if (!an->requires_grad) {
                return;
            }
            std::vector<T> ga(an->values.size(), T(0));
            std::size_t o = 0;
            const int planes = static_cast<int>(an->values.size()) / (h * w);
            for (int nc = 0; nc < planes; ++nc) {
                T* plane = ga.data() + static_cast<std::size_t>(nc) * h * w;
                for (int oy = 0; oy < ho; ++oy) {
                    T* r0 = plane + static_cast<std::size_t>(2 * oy) * w;
                    T* r1 = r0 + w;
                    for (int ox = 0; ox < wo; ++ox, ++o) {
                        const T v = g[o] * T(0.25);
                        r0[2 * ox] += v;
                        r0[2 * ox + 1] += v;
                        r1[2 * ox] += v;
                        r1[2 * ox + 1] += v;
                    }
                }
            }
            an->accumulate(ga);
        });
}

// Nearest-neighbour 2x upsampling; backward sums each replicated block.
template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& input) {
    detail::check_rank4(input.shape(), "upsample_nearest2");
    const int batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int ho = h * 2, wo = w * 2;
    std::vector<T> out(static_cast<std::size_t>(batch) * ch * ho * wo);
    const T* in = input.data();
    for (int nc = 0; nc < batch * ch; ++nc) {
        const T* src = in + static_cast<std::size_t>(nc) * h * w;
        T* dst = out.data() + static_cast<std::size_t>(nc) * ho * wo;
        for (int y = 0; y < h; ++y) {
            T* d0 = dst + static_cast<std::size_t>(2 * y) * wo;
            T* d1 = d0 + wo;
            for (int x = 0; x < w; ++x) {
                const T v = src[static_cast<std::size_t>(y) * w + x];
                d0[2 * x] = v;
                d0[2 * x + 1] = v;
                d1[2 * x] = v;
                d1[2 * x + 1] = v;
            }
        }
    }
    auto an = input.node();
    return detail::make_op_result<T>(
        {batch, ch, ho, wo}, std::move(out), {an}, [an, h, w, ho, wo](const std::vector<T>& g) {
            if (!an->requires_grad) {
                return;
            }
            std::vector<T> ga(an->values.size(), T(0));
            const int planes = static_cast<int>(an->values.size()) / (h * w);
            for (int nc = 0; nc < planes; ++nc) {
                const T* src = g.data() + static_cast<std::size_t>(nc) * ho * wo;
                T* dst = ga.data() + static_cast<std::size_t>(nc) * h * w;
                for (int y = 0; y < h; ++y) {
                    const T* s0 = src + static_cast<std::size_t>(2 * y) * wo;
                    const T* s1 = s0 + wo;
                    for (int x = 0; x < w; ++x) {
                        dst[static_cast<std::size_t>(y) * w + x] =
                            s0[2 * x] + s0[2 * x + 1] + s1[2 * x] + s1[2 * x + 1];
                    }
                }
            }
            an->accumulate(ga);
        });
}

// Channel concatenation for skip connections; backward splits the gradient.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_rank4(a.shape(), "concat_channels");
    detail::check_rank4(b.shape(), "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw std::invalid_argument("concat_channels: batch/spatial mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const int batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    const int h = a.dim(2), w = a.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<T> out(static_cast<std::size_t>(batch) * (ca + cb) * plane);
    for (int n = 0; n < batch; ++n) {
        T* dst = out.data() + static_cast<std::size_t>(n) * (ca + cb) * plane;
        const T* pa = a.data() + static_cast<std::size_t>(n) * ca * plane;
        const T* pb = b.data() + static_cast<std::size_t>(n) * cb * plane;
        std::copy(pa, pa + ca * plane, dst);
        std::copy(pb, pb + cb * plane, dst + ca * plane);
    }
    auto an = a.node();
    auto bn = b.node();
    return detail::make_op_result<T>(
        {batch, ca + cb, h, w}, std::move(out), {an, bn},
        [an, bn, batch, ca, cb, plane](const std::vector<T>& g) {
            if (an->requires_grad) {
                std::vector<T> ga(an->values.size());
                for (int n = 0; n < batch; ++n) {
                    const T* src = g.data() + static_cast<std::size_t>(n) * (ca + cb) * plane;
                    std::copy(src, src + ca * plane,
                              ga.data() + static_cast<std::size_t>(n) * ca * plane);
                }
                an->accumulate(ga);
            }
            if (bn->requires_grad) {
                std::vector<T> gb(bn->values.size());
                for (int n = 0; n < batch; ++n) {
                    const T* src =
                        g.data() + static_cast<std::size_t>(n) * (ca + cb) * plane + ca * plane;
                    std::copy(src, src + cb * plane,
                              gb.data() + static_cast<std::size_t>(n) * cb * plane);
                }
                bn->accumulate(gb);
            }
        });
}

// Batch rows [n0, n1) of a rank-4 tensor; backward scatters into zeros.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& a, int n0, int n1) {
    detail::check_rank4(a.shape(), "slice_batch");
    const int batch = a.dim(0);
    if (n0 < 0 || n1 > batch || n0 >= n1) {
        throw std::invalid_argument("slice_batch: invalid range [" + std::to_string(n0) + "," +
                                    std::to_string(n1) + ") for batch " + std::to_string(batch));
    }
    const std::size_t stride = a.size() / static_cast<std::size_t>(batch);
    const int ns = n1 - n0;
    std::vector<T> out(a.data() + n0 * stride, a.data() + n1 * stride);
    auto an = a.node();
    return detail::make_op_result<T>(
        {ns, a.dim(1), a.dim(2), a.dim(3)}, std::move(out), {an},
        [an, n0, stride](const std::vector<T>& g) {
            if (!an->requires_grad) {
                return;
            }
            std::vector<T> ga(an->values.size(), T(0));
            std::copy(g.begin(), g.end(), ga.begin() + static_cast<std::ptrdiff_t>(n0 * stride));
            an->accumulate(ga);
        });
}

// Channels [c0, c1) of a rank-4 tensor; backward scatters into zeros.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& a, int c0, int c1) {
    detail::check_rank4(a.shape(), "slice_channels");
    const int batch = a.dim(0), ch = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (c0 < 0 || c1 > ch || c0 >= c1) {
        throw std::invalid_argument("slice_channels: invalid range [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") for " + std::to_string(ch) +
                                    " channels");
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const int cs = c1 - c0;
    std::vector<T> out(static_cast<std::size_t>(batch) * cs * plane);
    for (int n = 0; n < batch; ++n) {
        const T* src = a.data() + (static_cast<std::size_t>(n) * ch + c0) * plane;
        std::copy(src, src + cs * plane, out.data() + static_cast<std::size_t>(n) * cs * plane);
    }
    auto an = a.node();
    return detail::make_op_result<T>(
        {batch, cs, h, w}, std::move(out), {an},
        [an, batch, ch, c0, cs, plane](const std::vector<T>& g) {
            if (!an->requires_grad) {
                return;
            }
            std::vector<T> ga(an->values.size(), T(0));
            for (int n = 0; n < batch; ++n) {
                const T* src = g.data() + static_cast<std::size_t>(n) * cs * plane;
                std::copy(src, src + cs * plane,
                          ga.data() + (static_cast<std::size_t>(n) * ch + c0) * plane);
            }
            an->accumulate(ga);
        });
}

// Top-left spatial crop; backward zero-pads back to the input size.
template <typename T>
Tensor<T> crop_spatial(const Tensor<T>& a, int ho, int wo) {
    detail::check_rank4(a.shape(), "crop_spatial");
    const int batch = a.dim(0), ch = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (ho < 1 || wo < 1 || ho > h || wo > w) {
        throw std::invalid_argument("crop_spatial: invalid crop " + std::to_string(ho) + "x" +
                                    std::to_string(wo) + " of " + shape_str(a.shape()));
    }
    std::vector<T> out(static_cast<std::size_t>(batch) * ch * ho * wo);
    for (int nc = 0; nc < batch * ch; ++nc) {
        const T* src = a.data() + static_cast<std::size_t>(nc) * h * w;
        T* dst = out.data() + static_cast<std::size_t>(nc) * ho * wo;
        for (int y = 0; y < ho; ++y) {
            std::copy(src + static_cast<std::size_t>(y) * w, src + static_cast<std::size_t>(y) * w + wo,
                      dst + static_cast<std::size_t>(y) * wo);
        }
    }
    auto an = a.node();
    return detail::make_op_result<T>(
        {batch, ch, ho, wo}, std::move(out), {an},
        [an, h, w, ho, wo](const std::vector<T>& g) {
            if (!an->requires_grad) {
                return;
            }
            std::vector<T> ga(an->values.size(), T(0));
            const int planes = static_cast<int>(an->values.size()) / (h * w);
            for (int nc = 0; nc < planes; ++nc) {
                const T* src = g.data() + static_cast<std::size_t>(nc) * ho * wo;
                T* dst = ga.data() + static_cast<std::size_t>(nc) * h * w;
                for (int y = 0; y < ho; ++y) {
                    std::copy(src + static_cast<std::size_t>(y) * wo,
                              src + static_cast<std::size_t>(y) * wo + wo,
                              dst + static_cast<std::size_t>(y) * w);
                }
            }
            an->accumulate(ga);
        });
}

// Per-pixel softmax over the channel dimension, numerically stabilized.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& a) {
    detail::check_rank4(a.shape(), "softmax_channels");
    const int batch = a.dim(0), ch = a.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<T> out(a.size());
    const T* in = a.data();
    for (int n = 0; n < batch; ++n) {
        const T* src = in + static_cast<std::size_t>(n) * ch * plane;
        T* dst = out.data() + static_cast<std::size_t>(n) * ch * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            T mx = src[p];
            for (int c = 1; c < ch; ++c) {
                mx = std::max(mx, src[static_cast<std::size_t>(c) * plane + p]);
            }
            T denom = T(0);
            for (int c = 0; c < ch; ++c) {
                const T e = std::exp(src[static_cast<std::size_t>(c) * plane + p] - mx);
                dst[static_cast<std::size_t>(c) * plane + p] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (int c = 0; c < ch; ++c) {
                dst[static_cast<std::size_t>(c) * plane + p] *= inv;
            }
        }
    }
    auto an = a.node();
    auto probs = std::make_shared<std::vector<T>>(out);
    return detail::make_op_result<T>(
        a.shape(), std::move(out), {an},
        [an, probs, batch, ch, plane](const std::vector<T>& g) {
            if (!an->requires_grad) {
                return;
            }
            std::vector<T> ga(g.size());
            for (int n = 0; n < batch; ++n) {
                const std::size_t base = static_cast<std::size_t>(n) * ch * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    T dot = T(0);
                    for (int c = 0; c < ch; ++c) {
                        const std::size_t i = base + static_cast<std::size_t>(c) * plane + p;
                        dot += g[i] * (*probs)[i];
                    }
                    for (int c = 0; c < ch; ++c) {
                        const std::size_t i = base + static_cast<std::size_t>(c) * plane + p;
                        ga[i] = (*probs)[i] * (g[i] - dot);
                    }
                }
            }
            an->accumulate(ga);
        });
}

// Normalizes each (image, channel) plane to zero mean and unit variance.
// No learned affine terms, so checkpoints carry no normalization state.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& a, T eps = T(1e-5)) {
    detail::check_rank4(a.shape(), "instance_norm");
    const int batch = a.dim(0), ch = a.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const T inv_m = T(1) / static_cast<T>(plane);
    std::vector<T> out(a.size());
    auto stats = std::make_shared<std::vector<T>>(static_cast<std::size_t>(batch) * ch * 2);
    const T* in = a.data();
    for (int nc = 0; nc < batch * ch; ++nc) {
        const T* src = in + static_cast<std::size_t>(nc) * plane;
        T m = T(0);
        for (std::size_t p = 0; p < plane; ++p) {
            m += src[p];
        }
        m *= inv_m;
        T var = T(0);
        for (std::size_t p = 0; p < plane; ++p) {
            const T dv = src[p] - m;
            var += dv * dv;
        }
        var *= inv_m;
        const T s = T(1) / std::sqrt(var + eps);
        (*stats)[static_cast<std::size_t>(nc) * 2] = m;
        (*stats)[static_cast<std::size_t>(nc) * 2 + 1] = s;
        T* dst = out.data() + static_cast<std::size_t>(nc) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            dst[p] = (src[p] - m) * s;
        }
    }
    auto an = a.node();
    return detail::make_op_result<T>(
        a.shape(), std::move(out), {an},
        [an, stats, batch, ch, plane, inv_m](const std::vector<T>& g) {
            if (!an->requires_grad) {
                return;
            }
            std::vector<T> ga(g.size());
            for (int nc = 0; nc < batch * ch; ++nc) {
                const T m = (*stats)[static_cast<std::size_t>(nc) * 2];
                const T s = (*stats)[static_cast<std::size_t>(nc) * 2 + 1];
                const T* src = an->values.data() + static_cast<std::size_t>(nc) * plane;
                const T* gp = g.data() + static_cast<std::size_t>(nc) * plane;
                T gmean = T(0), gymean = T(0);
                for (std::size_t p = 0; p < plane; ++p) {
                    const T y = (src[p] - m) * s;
                    gmean += gp[p];
                    gymean += gp[p] * y;
                }
                gmean *= inv_m;
                gymean *= inv_m;
                T* dst = ga.data() + static_cast<std::size_t>(nc) * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    const T y = (src[p] - m) * s;
                    dst[p] = s * (gp[p] - gmean - y * gymean);
                }
            }
            an->accumulate(ga);
        });
}

}  // namespace smir
