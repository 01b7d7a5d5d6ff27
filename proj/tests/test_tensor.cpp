#include <cmath>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "smir/grad_check.hpp"
#include "smir/rng.hpp"
#include "smir/tensor.hpp"

using smir::Tensor;

namespace {

Tensor<double> random_tensor(smir::Shape shape, smir::RandomStream& rng, double lo = 0.0,
                             double hi = 1.0) {
    std::vector<double> v(smir::shape_size(shape));
    for (auto& x : v) {
        x = rng.uniform(lo, hi);
    }
    return Tensor<double>::from_data(std::move(shape), std::move(v));
}

}  // namespace

TEST(Tensor, ShapeDataInvariant) {
    EXPECT_THROW(Tensor<float>::from_data({2, 3}, {1.f, 2.f}), std::invalid_argument);
    auto t = Tensor<float>::zeros({2, 3});
    EXPECT_EQ(t.size(), 6u);
}

TEST(Tensor, ReluBasics) {
    auto x = Tensor<float>::from_data({3}, {-1.f, 0.f, 2.f});
    auto y = smir::relu(x);
    EXPECT_EQ(y.values(), (std::vector<float>{0.f, 0.f, 2.f}));
}

TEST(Tensor, MeanBasics) {
    auto x = Tensor<double>::from_data({4}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(smir::mean(x).item(), 2.5);
}

TEST(Tensor, AddSubMulDivForward) {
    auto a = Tensor<double>::from_data({2}, {1.0, 4.0});
    auto b = Tensor<double>::from_data({2}, {2.0, 8.0});
    EXPECT_EQ(smir::add(a, b).values(), (std::vector<double>{3.0, 12.0}));
    EXPECT_EQ(smir::sub(a, b).values(), (std::vector<double>{-1.0, -4.0}));
    EXPECT_EQ(smir::mul(a, b).values(), (std::vector<double>{2.0, 32.0}));
    EXPECT_EQ(smir::div(a, b).values(), (std::vector<double>{0.5, 0.5}));
}

TEST(Tensor, ShapeMismatchThrows) {
    auto a = Tensor<double>::zeros({2});
    auto b = Tensor<double>::zeros({3});
    EXPECT_THROW(smir::add(a, b), std::invalid_argument);
    EXPECT_THROW(smir::mul(a, b), std::invalid_argument);
}

TEST(Tensor, DivisionGuard) {
    auto a = Tensor<double>::from_data({2}, {1.0, -1.0});
    auto b = Tensor<double>::from_data({2}, {0.0, 1e-30});
    auto y = smir::div(a, b);
    EXPECT_TRUE(std::isfinite(y.values()[0]));
    EXPECT_TRUE(std::isfinite(y.values()[1]));
    EXPECT_DOUBLE_EQ(y.values()[0], 1e12);
}

TEST(Tensor, BackwardAccumulatesOverFanOut) {
    auto x = Tensor<double>::from_data({1}, {3.0}, true);
    auto y = smir::add(smir::mul(x, x), x);  // x^2 + x, dy/dx = 2x + 1
    y.backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(Tensor, BackwardRequiresScalar) {
    auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
    auto y = smir::mul(x, x);
    EXPECT_THROW(y.backward(), std::invalid_argument);
}

TEST(Tensor, NoGradGuardBuildsNoGraph) {
    auto x = Tensor<double>::from_data({2}, {1.0, 2.0}, true);
    smir::NoGradGuard ng;
    auto y = smir::mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->parents.empty());
}

// f = sum is linear: with inputs and eps chosen exactly representable, the
// central difference is exact and the reported error is 0.
TEST(GradCheck, SumIsExact) {
    std::vector<double> v;
    for (int i = 0; i < 16; ++i) {
        v.push_back(static_cast<double>(i) / 16.0);
    }
    auto x = Tensor<double>::from_data({16}, std::move(v));
    const double err = smir::grad_check(
        [](const Tensor<double>& t) { return smir::sum(t); }, x, 0x1.0p-6);
    EXPECT_EQ(err, 0.0);
}

TEST(GradCheck, CompositeSigmoidMul) {
    auto rng = smir::derive_stream(7, "sigmul");
    auto x = random_tensor({2, 5}, rng, -1.0, 1.0);
    const double err = smir::grad_check(
        [](const Tensor<double>& t) { return smir::mean(smir::sigmoid(smir::mul(t, t))); }, x);
    EXPECT_LE(err, 1e-4);
}

TEST(GradCheck, ElementwiseSuite) {
    auto rng = smir::derive_stream(11, "elem");
    auto x = random_tensor({3, 4}, rng, 0.05, 1.0);
    auto other = random_tensor({3, 4}, rng, 0.5, 1.5);

    const std::vector<std::pair<const char*, std::function<Tensor<double>(const Tensor<double>&)>>>
        cases = {
            {"add", [&](const Tensor<double>& t) { return smir::mean(smir::add(t, other)); }},
            {"sub", [&](const Tensor<double>& t) { return smir::mean(smir::sub(other, t)); }},
            {"mul", [&](const Tensor<double>& t) { return smir::mean(smir::mul(t, other)); }},
            {"div_num", [&](const Tensor<double>& t) { return smir::mean(smir::div(t, other)); }},
            {"div_den", [&](const Tensor<double>& t) { return smir::mean(smir::div(other, t)); }},
            {"relu", [&](const Tensor<double>& t) { return smir::mean(smir::relu(t)); }},
            {"sigmoid", [&](const Tensor<double>& t) { return smir::mean(smir::sigmoid(t)); }},
            {"abs", [&](const Tensor<double>& t) { return smir::mean(smir::abs(t)); }},
            {"add_scalar",
             [&](const Tensor<double>& t) { return smir::mean(smir::add_scalar(t, 0.7)); }},
            {"mul_scalar",
             [&](const Tensor<double>& t) { return smir::mean(smir::mul_scalar(t, -1.3)); }},
            {"sub_from_scalar",
             [&](const Tensor<double>& t) { return smir::mean(smir::sub_from_scalar(1.0, t)); }},
            {"pow_scalar",
             [&](const Tensor<double>& t) { return smir::mean(smir::pow_scalar(t, 0.3)); }},
            {"sum", [&](const Tensor<double>& t) { return smir::sum(t); }},
        };
    for (const auto& [name, fn] : cases) {
        EXPECT_LE(smir::grad_check(fn, x), 1e-4) << name;
    }
}

TEST(GradCheck, AbsSubgradientAtZeroIsZero) {
    auto x = Tensor<double>::from_data({3}, {-1.0, 0.0, 2.0}, true);
    auto y = smir::sum(smir::abs(x));
    y.backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], -1.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
    EXPECT_DOUBLE_EQ(x.grad()[2], 1.0);
}

TEST(Tensor, DeterministicForwardBackward) {
    auto run = [] {
        auto rng = smir::derive_stream(99, "det");
        std::vector<double> v(64);
        for (auto& x : v) {
            x = rng.uniform01();
        }
        auto x = Tensor<double>::from_data({64}, v, true);
        auto loss = smir::mean(smir::sigmoid(smir::mul(x, smir::add_scalar(x, 0.5))));
        loss.backward();
        auto out = x.grad();
        out.push_back(loss.item());
        return out;
    };
    EXPECT_EQ(run(), run());
}

TEST(Tensor, GradientsFiniteOnUnitInputs) {
    auto rng = smir::derive_stream(5, "finite");
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> xv(32), wv(32);
        for (auto& v : xv) {
            v = rng.uniform01();
        }
        for (auto& v : wv) {
            v = rng.uniform(-10.0, 10.0);
        }
        auto x = Tensor<double>::from_data({32}, xv, true);
        auto w = Tensor<double>::from_data({32}, wv, true);
        auto loss = smir::mean(
            smir::div(smir::abs(smir::mul(w, smir::sigmoid(x))), smir::add_scalar(smir::relu(w), 0.1)));
        loss.backward();
        for (double g : x.grad()) {
            ASSERT_TRUE(std::isfinite(g));
        }
        for (double g : w.grad()) {
            ASSERT_TRUE(std::isfinite(g));
        }
    }
}

TEST(RandomStream, DeterministicAndUniform) {
    smir::RandomStream a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(a.next_u64(), b.next_u64());
    }
    smir::RandomStream c(7);
    double acc = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        acc += c.uniform01();
    }
    EXPECT_NEAR(acc / n, 0.5, 0.01);
}
