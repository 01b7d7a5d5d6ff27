#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "smir/adam.hpp"
#include "smir/tensor.hpp"

using smir::Tensor;

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    auto w = Tensor<double>::from_data({3}, {1.0, -2.0, 0.5}, true);
    w.zero_grad();
    std::vector<Tensor<double>> params{w};
    smir::Adam<double> opt;
    opt.step(params);
    EXPECT_EQ(w.values(), (std::vector<double>{1.0, -2.0, 0.5}));
    EXPECT_EQ(opt.step_count(), 1);
}

TEST(Adam, DescendsOnPositiveGradient) {
    auto w = Tensor<double>::from_data({1}, {1.0}, true);
    w.zero_grad();
    w.node()->grad[0] = 1.0;
    std::vector<Tensor<double>> params{w};
    smir::Adam<double> opt(smir::AdamConfig{0.1, 0.9, 0.999, 1e-8});
    opt.step(params);
    EXPECT_LT(w.values()[0], 1.0);
}

// Ten steps on f(w) = w^2 from w = 1: |w| shrinks monotonically. The oracle
// is the scalar Adam recurrence run directly alongside.
TEST(Adam, QuadraticDescentMatchesScalarRecurrence) {
    auto w = Tensor<double>::from_data({1}, {1.0}, true);
    std::vector<Tensor<double>> params{w};
    const smir::AdamConfig cfg{0.05, 0.9, 0.999, 1e-8};
    smir::Adam<double> opt(cfg);

    double ref_w = 1.0, m = 0.0, v = 0.0;
    double prev = std::abs(w.values()[0]);
    for (int t = 1; t <= 10; ++t) {
        w.zero_grad();
        auto loss = smir::mul(w, w);
        loss.backward();
        opt.step(params);

        const double g = 2.0 * ref_w;
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
        const double mhat = m / (1 - std::pow(cfg.beta1, t));
        const double vhat = v / (1 - std::pow(cfg.beta2, t));
        ref_w -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);

        EXPECT_NEAR(w.values()[0], ref_w, 1e-12);
        EXPECT_LT(std::abs(w.values()[0]), prev);
        prev = std::abs(w.values()[0]);
    }
}

TEST(Adam, StateShapeMismatchThrows) {
    auto w = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
    w.zero_grad();
    std::vector<Tensor<double>> params{w};
    smir::Adam<double> opt;
    opt.step(params);
    auto w2 = Tensor<double>::from_data({3}, {1.0, 2.0, 3.0}, true);
    w2.zero_grad();
    std::vector<Tensor<double>> params2{w2};
    EXPECT_THROW(opt.step(params2), std::invalid_argument);
}
