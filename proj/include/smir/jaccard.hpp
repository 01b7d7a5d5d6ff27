#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "smir/image.hpp"
#include "smir/ops.hpp"
#include "smir/tensor.hpp"

namespace smir {

// Soft Jaccard loss over softmax probabilities: per class c,
//   J_c = (sum p_c t_c + eps) / (sum p_c + sum t_c - sum p_c t_c + eps)
// and the loss is 1 - mean_c J_c. Pixels carrying the ignore id are excluded
// from every sum. Differentiable w.r.t. the scores.
template <typename T>
Tensor<T> jaccard_loss(const Tensor<T>& scores, const std::vector<LabelMap>& labels,
                       T eps = T(1e-7)) {
    detail::check_rank4(scores.shape(), "jaccard_loss");
    const int batch = scores.dim(0), classes = scores.dim(1);
    const int h = scores.dim(2), w = scores.dim(3);
    if (static_cast<int>(labels.size()) != batch) {
        throw std::invalid_argument("jaccard_loss: batch size mismatch with labels");
    }
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    // Constant one-hot targets and valid mask, broadcast across channels.
    std::vector<T> onehot(scores.size(), T(0));
    std::vector<T> valid(scores.size(), T(0));
    std::vector<double> target_count(static_cast<std::size_t>(classes), 0.0);
    for (int n = 0; n < batch; ++n) {
        const LabelMap& lab = labels[static_cast<std::size_t>(n)];
        if (lab.height != h || lab.width != w) {
            throw std::invalid_argument("jaccard_loss: label dimensions mismatch scores");
        }
        for (std::size_t p = 0; p < plane; ++p) {
            const std::int32_t id = lab.ids[p];
            if (id == lab.ignore_id) {
                continue;
            }
            if (id < 0 || id >= classes) {
                throw std::invalid_argument("jaccard_loss: label id " + std::to_string(id) +
                                            " outside [0," + std::to_string(classes) + ")");
            }
            const std::size_t base = static_cast<std::size_t>(n) * classes * plane;
            onehot[base + static_cast<std::size_t>(id) * plane + p] = T(1);
            target_count[static_cast<std::size_t>(id)] += 1.0;
            for (int c = 0; c < classes; ++c) {
                valid[base + static_cast<std::size_t>(c) * plane + p] = T(1);
            }
        }
    }
    auto t_const = Tensor<T>::from_data(scores.shape(), std::move(onehot));
    auto valid_const = Tensor<T>::from_data(scores.shape(), std::move(valid));

    auto probs = softmax_channels(scores);
    auto masked_probs = mul(probs, valid_const);
    auto intersection_map = mul(probs, t_const);

    Tensor<T> j_sum;
    for (int c = 0; c < classes; ++c) {
        auto inter = sum(slice_channels(intersection_map, c, c + 1));
        auto psum = sum(slice_channels(masked_probs, c, c + 1));
        const T tsum = static_cast<T>(target_count[static_cast<std::size_t>(c)]);
        auto denom = add_scalar(sub(psum, inter), tsum + eps);
        auto j = div(add_scalar(inter, eps), denom);
        j_sum = c == 0 ? j : add(j_sum, j);
    }
    auto mean_j = mul_scalar(j_sum, T(1) / static_cast<T>(classes));
    return sub_from_scalar(T(1), mean_j);
}

}  // namespace smir
