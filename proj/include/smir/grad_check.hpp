#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "smir/tensor.hpp"

namespace smir {

// Central-finite-difference verification of reverse-mode gradients.
// Meaningful only at 64-bit precision; the fn must be deterministic and
// scalar-valued. Returns the max relative error over the probed elements,
// with the denominator floored so near-zero gradients compare absolutely.
// max_probes == 0 checks every element; otherwise evenly spaced indices.
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                         const Tensor<double>& x0, double eps = 1e-5,
                         std::size_t max_probes = 0) {
    Tensor<double> x = Tensor<double>::from_data(x0.shape(), x0.values(), true);
    Tensor<double> out = fn(x);
    if (out.size() != 1) {
        throw std::invalid_argument("grad_check: function must be scalar-valued");
    }
    out.backward();
    const std::vector<double> analytic = x.grad();

    std::vector<std::size_t> probes;
    if (max_probes == 0 || max_probes >= x0.size()) {
        probes.resize(x0.size());
        for (std::size_t i = 0; i < probes.size(); ++i) {
            probes[i] = i;
        }
    } else {
        probes.resize(max_probes);
        for (std::size_t i = 0; i < max_probes; ++i) {
            probes[i] = i * x0.size() / max_probes;
        }
    }

    Tensor<double> probe = Tensor<double>::from_data(x0.shape(), x0.values(), false);
    double worst = 0.0;
    {
        NoGradGuard ng;
        for (std::size_t i : probes) {
            const double orig = probe.data()[i];
            probe.data()[i] = orig + eps;
            const double fp = fn(probe).item();
            probe.data()[i] = orig - eps;
            const double fm = fn(probe).item();
            probe.data()[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double denom = std::max(std::abs(analytic[i]) + std::abs(numeric), 1e-3);
            const double err = std::abs(analytic[i] - numeric) / denom;
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace smir
