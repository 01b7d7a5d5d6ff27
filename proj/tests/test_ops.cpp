#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "smir/grad_check.hpp"
#include "smir/ops.hpp"
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

TEST(Conv2d, AllOnesSumsWindow) {
    auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto k = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto y = smir::conv2d(x, k);
    ASSERT_EQ(y.shape(), (smir::Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y.item(), 9.0);
}

TEST(Conv2d, OneByOneIdentityKernel) {
    auto rng = smir::derive_stream(3, "convid");
    auto x = random_tensor({1, 1, 4, 5}, rng);
    auto k = Tensor<double>::full({1, 1, 1, 1}, 1.0);
    auto y = smir::conv2d(x, k);
    EXPECT_EQ(y.values(), x.values());
}

TEST(Conv2d, StridePaddingShapes) {
    auto x = Tensor<double>::zeros({2, 3, 8, 8});
    auto k = Tensor<double>::zeros({4, 3, 3, 3});
    EXPECT_EQ(smir::conv2d(x, k, 1, 1).shape(), (smir::Shape{2, 4, 8, 8}));
    EXPECT_EQ(smir::conv2d(x, k, 1, 0).shape(), (smir::Shape{2, 4, 6, 6}));
    // (8 - 3) = 5 does not divide by stride 2
    EXPECT_THROW(smir::conv2d(x, k, 2, 0), std::invalid_argument);
    auto kbad = Tensor<double>::zeros({4, 2, 3, 3});
    EXPECT_THROW(smir::conv2d(x, kbad), std::invalid_argument);
}

TEST(Conv2d, BiasAddsPerChannel) {
    auto x = Tensor<double>::full({1, 1, 2, 2}, 0.0);
    auto k = Tensor<double>::full({2, 1, 1, 1}, 1.0);
    auto b = Tensor<double>::from_data({2}, {0.5, -1.5});
    auto y = smir::conv2d(x, k, b);
    EXPECT_EQ(y.values(), (std::vector<double>{0.5, 0.5, 0.5, 0.5, -1.5, -1.5, -1.5, -1.5}));
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
    auto rng = smir::derive_stream(17, "convgrad");
    auto x0 = random_tensor({1, 2, 5, 5}, rng);
    auto k = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
    auto b = random_tensor({3}, rng, -0.2, 0.2);
    // w.r.t. input
    EXPECT_LE(smir::grad_check(
                  [&](const Tensor<double>& t) { return smir::sum(smir::conv2d(t, k, b, 1, 1)); },
                  x0),
              1e-4);
    // w.r.t. kernel
    EXPECT_LE(smir::grad_check(
                  [&](const Tensor<double>& t) { return smir::sum(smir::conv2d(x0, t, b, 1, 1)); },
                  k),
              1e-4);
    // w.r.t. bias
    EXPECT_LE(smir::grad_check(
                  [&](const Tensor<double>& t) { return smir::sum(smir::conv2d(x0, k, t, 1, 1)); },
                  b),
              1e-4);
}

TEST(Conv2d, StridedGradient) {
    auto rng = smir::derive_stream(18, "convstride");
    auto x0 = random_tensor({1, 1, 6, 6}, rng);
    auto k = random_tensor({2, 1, 2, 2}, rng, -0.5, 0.5);
    EXPECT_LE(smir::grad_check(
                  [&](const Tensor<double>& t) {
                      return smir::mean(smir::conv2d(t, k, 2, 0));
                  },
                  x0),
              1e-4);
}

TEST(Maxpool2, ForwardAndTies) {
    auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(smir::maxpool2(x).item(), 4.0);

    auto c = Tensor<double>::full({1, 1, 4, 4}, 0.25);
    auto y = smir::maxpool2(c);
    for (double v : y.values()) {
        EXPECT_DOUBLE_EQ(v, 0.25);
    }

    // Tie: gradient goes to the first element in row-major order.
    auto t = Tensor<double>::from_data({1, 1, 2, 2}, {5, 5, 5, 5}, true);
    auto s = smir::sum(smir::maxpool2(t));
    s.backward();
    EXPECT_EQ(t.grad(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Maxpool2, OddDimsThrow) {
    EXPECT_THROW(smir::maxpool2(Tensor<double>::zeros({1, 1, 3, 4})), std::invalid_argument);
}

TEST(Maxpool2, Gradient) {
    auto rng = smir::derive_stream(21, "pool");
    auto x = random_tensor({1, 1, 4, 4}, rng);
    EXPECT_LE(smir::grad_check(
                  [](const Tensor<double>& t) { return smir::sum(smir::maxpool2(t)); }, x),
              1e-4);
}

TEST(Avgpool2, ForwardAndGradient) {
    auto x = Tensor<double>::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(smir::avgpool2(x).item(), 2.5);
    auto rng = smir::derive_stream(22, "avg");
    auto r = random_tensor({2, 2, 4, 6}, rng);
    EXPECT_LE(smir::grad_check(
                  [](const Tensor<double>& t) { return smir::mean(smir::avgpool2(t)); }, r),
              1e-4);
}

TEST(Upsample, ReplicatesAndRoundTrips) {
    auto x = Tensor<double>::from_data({1, 1, 1, 1}, {5.0});
    auto y = smir::upsample_nearest2(x);
    EXPECT_EQ(y.shape(), (smir::Shape{1, 1, 2, 2}));
    EXPECT_EQ(y.values(), (std::vector<double>{5, 5, 5, 5}));

    auto rng = smir::derive_stream(23, "upsample");
    auto r = random_tensor({1, 2, 3, 3}, rng);
    auto rt = smir::maxpool2(smir::upsample_nearest2(r));
    EXPECT_EQ(rt.values(), r.values());

    EXPECT_LE(smir::grad_check(
                  [](const Tensor<double>& t) {
                      return smir::mean(smir::upsample_nearest2(t));
                  },
                  r),
              1e-4);
}

TEST(ConcatChannels, ShapesAndEmpty) {
    auto a = Tensor<double>::zeros({1, 2, 4, 4});
    auto b = Tensor<double>::zeros({1, 3, 4, 4});
    EXPECT_EQ(smir::concat_channels(a, b).shape(), (smir::Shape{1, 5, 4, 4}));

    auto rng = smir::derive_stream(31, "concat");
    auto x = random_tensor({1, 2, 3, 3}, rng);
    auto empty = Tensor<double>::zeros({1, 0, 3, 3});
    EXPECT_EQ(smir::concat_channels(x, empty).values(), x.values());

    auto bad = Tensor<double>::zeros({1, 1, 5, 4});
    EXPECT_THROW(smir::concat_channels(a, bad), std::invalid_argument);
}

TEST(ConcatChannels, GradientSplits) {
    auto rng = smir::derive_stream(32, "concatgrad");
    auto a = random_tensor({2, 2, 3, 3}, rng);
    auto b = random_tensor({2, 1, 3, 3}, rng);
    EXPECT_LE(smir::grad_check(
                  [&](const Tensor<double>& t) {
                      return smir::mean(smir::concat_channels(t, b));
                  },
                  a),
              1e-4);
    EXPECT_LE(smir::grad_check(
                  [&](const Tensor<double>& t) {
                      return smir::mean(smir::concat_channels(a, t));
                  },
                  b),
              1e-4);
}

TEST(SliceChannels, InverseOfConcatAndGradient) {
    auto rng = smir::derive_stream(33, "slice");
    auto x = random_tensor({1, 4, 2, 2}, rng);
    auto s = smir::slice_channels(x, 1, 3);
    EXPECT_EQ(s.shape(), (smir::Shape{1, 2, 2, 2}));
    EXPECT_THROW(smir::slice_channels(x, 3, 3), std::invalid_argument);
    EXPECT_LE(smir::grad_check(
                  [](const Tensor<double>& t) {
                      return smir::mean(smir::slice_channels(t, 1, 3));
                  },
                  x),
              1e-4);
}

TEST(CropSpatial, ForwardAndGradient) {
    auto rng = smir::derive_stream(34, "crop");
    auto x = random_tensor({1, 2, 5, 7}, rng);
    auto c = smir::crop_spatial(x, 4, 6);
    EXPECT_EQ(c.shape(), (smir::Shape{1, 2, 4, 6}));
    EXPECT_DOUBLE_EQ(c.values()[0], x.values()[0]);
    EXPECT_LE(smir::grad_check(
                  [](const Tensor<double>& t) {
                      return smir::mean(smir::crop_spatial(t, 3, 5));
                  },
                  x),
              1e-4);
}

TEST(SoftmaxChannels, NormalizesAndGradient) {
    auto rng = smir::derive_stream(35, "softmax");
    auto x = random_tensor({1, 3, 2, 2}, rng, -2.0, 2.0);
    auto p = smir::softmax_channels(x);
    for (int pos = 0; pos < 4; ++pos) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) {
            s += p.values()[static_cast<std::size_t>(c) * 4 + pos];
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    auto w = random_tensor({1, 3, 2, 2}, rng);  // random linear functional
    EXPECT_LE(smir::grad_check(
                  [&](const Tensor<double>& t) {
                      return smir::mean(smir::mul(w, smir::softmax_channels(t)));
                  },
                  x),
              1e-4);
}

TEST(InstanceNorm, NormalizesPlanesAndGradient) {
    auto rng = smir::derive_stream(36, "inorm");
    auto x = random_tensor({2, 3, 4, 4}, rng, -1.0, 3.0);
    auto y = smir::instance_norm(x);
    for (int nc = 0; nc < 6; ++nc) {
        double m = 0.0;
        for (int p = 0; p < 16; ++p) {
            m += y.values()[static_cast<std::size_t>(nc) * 16 + p];
        }
        EXPECT_NEAR(m / 16.0, 0.0, 1e-9);
    }
    auto w = random_tensor({2, 3, 4, 4}, rng);
    EXPECT_LE(smir::grad_check(
                  [&](const Tensor<double>& t) {
                      return smir::mean(smir::mul(w, smir::instance_norm(t)));
                  },
                  x),
              1e-3);
}

// Thread-count independence: conv gradients reduce per-image partials in a
// fixed order, so worker count must not change a single bit.
TEST(Conv2d, WorkerCountInvariance) {
    auto rng = smir::derive_stream(40, "workers");
    auto x0 = random_tensor({8, 3, 8, 8}, rng);
    auto k0 = random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);

    auto run = [&](int threads) {
        setenv("SMIR_THREADS", std::to_string(threads).c_str(), 1);
        auto x = Tensor<double>::from_data(x0.shape(), x0.values(), true);
        auto k = Tensor<double>::from_data(k0.shape(), k0.values(), true);
        auto loss = smir::mean(smir::conv2d(x, k, 1, 1));
        loss.backward();
        auto out = x.grad();
        const auto& kg = k.grad();
        out.insert(out.end(), kg.begin(), kg.end());
        out.push_back(loss.item());
        return out;
    };
    const auto serial = run(1);
    const auto threaded = run(4);
    unsetenv("SMIR_THREADS");
    EXPECT_EQ(serial, threaded);
}
