#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "smir/tensor.hpp"

namespace smir {

// The paper does not name an optimizer; Adam with these defaults is the
// conventional choice for reconstruction training.
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction, operating directly on parameter data
// and gradients. Deterministic given inputs; one state slot per parameter.
template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    const AdamConfig& config() const { return config_; }
    long step_count() const { return step_; }

    // params[i].grad() must be populated; call after backward().
    void step(std::vector<Tensor<T>>& params) {
        ensure_state(params);
        ++step_;
        const T b1 = static_cast<T>(config_.beta1);
        const T b2 = static_cast<T>(config_.beta2);
        const T corr1 = T(1) - static_cast<T>(std::pow(config_.beta1, step_));
        const T corr2 = T(1) - static_cast<T>(std::pow(config_.beta2, step_));
        const T lr = static_cast<T>(config_.lr);
        const T eps = static_cast<T>(config_.eps);
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto& t = params[p];
            const std::vector<T>& g = t.grad();
            std::vector<T>& m = m_[p];
            std::vector<T>& v = v_[p];
            T* w = t.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * g[i];
                v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
                const T mhat = m[i] / corr1;
                const T vhat = v[i] / corr2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    void zero_grad(std::vector<Tensor<T>>& params) {
        for (auto& t : params) {
            t.zero_grad();
        }
    }

private:
    void ensure_state(const std::vector<Tensor<T>>& params) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (std::size_t p = 0; p < params.size(); ++p) {
                m_[p].assign(params[p].size(), T(0));
                v_[p].assign(params[p].size(), T(0));
            }
            return;
        }
        if (m_.size() != params.size()) {
            throw std::invalid_argument("adam: parameter count changed under the optimizer");
        }
        for (std::size_t p = 0; p < params.size(); ++p) {
            if (m_[p].size() != params[p].size()) {
                throw std::invalid_argument("adam: parameter shape changed under the optimizer");
            }
        }
    }

    AdamConfig config_;
    long step_ = 0;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
};

}  // namespace smir
