#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "smir/checkpoint.hpp"
#include "smir/grad_check.hpp"
#include "smir/ssim.hpp"
#include "smir/unet.hpp"

using smir::Checkpoint;
using smir::HeadKind;
using smir::Tensor;
using smir::UNet;
using smir::UNetConfig;

namespace {

UNetConfig small_config(std::uint64_t seed = 1) {
    UNetConfig c;
    c.depth = 2;
    c.base_channels = 4;
    c.out_channels = 3;
    c.seed = seed;
    return c;
}

std::filesystem::path temp_file(const char* name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST(UNet, OutputPreservesSpatialDims) {
    UNetConfig c;
    c.depth = 3;
    c.base_channels = 8;
    c.out_channels = 3;
    UNet<float> model(c, HeadKind::reconstruction);
    auto rng = smir::derive_stream(1, "unet-shape");
    std::vector<float> v(3 * 64 * 64);
    for (auto& x : v) {
        x = static_cast<float>(rng.uniform01());
    }
    smir::NoGradGuard ng;
    auto out = model.forward(Tensor<float>::from_data({1, 3, 64, 64}, std::move(v)));
    EXPECT_EQ(out.shape(), (smir::Shape{1, 3, 64, 64}));
    for (float y : out.values()) {
        ASSERT_GT(y, 0.f);
        ASSERT_LT(y, 1.f);
    }
}

TEST(UNet, SameSeedSameWeights) {
    UNet<float> a(small_config(42), HeadKind::reconstruction);
    UNet<float> b(small_config(42), HeadKind::reconstruction);
    ASSERT_EQ(a.param_names(), b.param_names());
    for (const auto& name : a.param_names()) {
        ASSERT_EQ(a.param(name).values(), b.param(name).values()) << name;
    }
    UNet<float> c(small_config(43), HeadKind::reconstruction);
    EXPECT_NE(a.param("enc0.conv1.weight").values(), c.param("enc0.conv1.weight").values());
}

TEST(UNet, ParameterCountMatchesLayerEnumeration) {
    const UNetConfig c = small_config();
    UNet<float> model(c, HeadKind::reconstruction);
    // Enumerate the declared architecture layer by layer: conv weights are
    // cout*cin*k*k plus cout biases.
    auto conv = [](int cin, int cout, int k) {
        return static_cast<std::size_t>(cout) * cin * k * k + static_cast<std::size_t>(cout);
    };
    std::size_t expected = 0;
    expected += conv(3, 4, 3) + conv(4, 4, 3);      // enc0
    expected += conv(4, 8, 3) + conv(8, 8, 3);      // enc1
    expected += conv(8, 16, 3) + conv(16, 16, 3);   // bottleneck
    expected += conv(16 + 8, 8, 3) + conv(8, 8, 3); // dec1
    expected += conv(8 + 4, 4, 3) + conv(4, 4, 3);  // dec0
    expected += conv(4, 3, 1);                      // head
    EXPECT_EQ(model.parameter_count(), expected);
    EXPECT_EQ(expected, 7547u);
}

TEST(UNet, BatchRowsIndependent) {
    UNet<float> model(small_config(3), HeadKind::reconstruction);
    auto rng = smir::derive_stream(2, "unet-batch");
    std::vector<float> one(3 * 32 * 32);
    for (auto& x : one) {
        x = static_cast<float>(rng.uniform01());
    }
    std::vector<float> two = one;
    two.insert(two.end(), one.begin(), one.end());
    smir::NoGradGuard ng;
    auto out = model.forward(Tensor<float>::from_data({2, 3, 32, 32}, std::move(two)));
    const std::size_t half = out.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
        ASSERT_EQ(out.values()[i], out.values()[half + i]);
    }
}

TEST(UNet, IndivisibleSpatialDimsThrowAtForward) {
    UNet<float> model(small_config(), HeadKind::reconstruction);
    smir::NoGradGuard ng;
    EXPECT_THROW(model.forward(Tensor<float>::zeros({1, 3, 30, 32})), std::invalid_argument);
}

TEST(UNet, TrainLossGradientThroughModel) {
    UNetConfig c = small_config(7);
    UNet<double> model(c, HeadKind::reconstruction);
    auto rng = smir::derive_stream(3, "unet-grad");
    const smir::Image target_img = oracle::random_image(3, 32, 32, rng);
    auto target = smir::image_to_tensor<double>(target_img);
    const smir::Image input_img = oracle::random_image(3, 32, 32, rng);

    const double err = smir::grad_check(
        [&](const Tensor<double>& x) { return smir::train_loss(model.forward(x), target); },
        smir::image_to_tensor<double>(input_img), 1e-5, 160);
    EXPECT_LE(err, 1e-3);
}

TEST(Checkpoint, RoundTripsBitwise) {
    UNet<float> model(small_config(11), HeadKind::reconstruction);
    const auto path = temp_file("smir_test_roundtrip.ckpt");
    smir::save_checkpoint(model, 4, 30, 123, path.string(), {{"note", "test"}});
    const Checkpoint ck = smir::load_checkpoint(path.string());
    EXPECT_EQ(ck.partition, 4);
    EXPECT_EQ(ck.epoch, 30);
    EXPECT_EQ(ck.run_seed, 123u);
    EXPECT_EQ(ck.head, HeadKind::reconstruction);
    EXPECT_EQ(ck.config, model.config());
    EXPECT_EQ(ck.extra.at("note"), "test");
    UNet<float> restored = smir::model_from_checkpoint(ck);
    for (const auto& name : model.param_names()) {
        ASSERT_EQ(restored.param(name).values(), model.param(name).values()) << name;
    }
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsBadMagic) {
    const auto path = temp_file("smir_test_magic.ckpt");
    std::ofstream(path) << "PNGX garbage";
    EXPECT_THROW(smir::load_checkpoint(path.string()), std::runtime_error);
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsFutureVersion) {
    UNet<float> model(small_config(12), HeadKind::reconstruction);
    const auto path = temp_file("smir_test_version.ckpt");
    smir::save_checkpoint(model, 0, 0, 0, path.string());
    // bump the version field in place
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const std::uint32_t v2 = 2;
    f.write(reinterpret_cast<const char*>(&v2), sizeof(v2));
    f.close();
    try {
        smir::load_checkpoint(path.string());
        FAIL() << "expected version error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsTruncation) {
    UNet<float> model(small_config(13), HeadKind::reconstruction);
    const auto path = temp_file("smir_test_trunc.ckpt");
    smir::save_checkpoint(model, 0, 0, 0, path.string());
    const auto full = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, full - 64);
    EXPECT_THROW(smir::load_checkpoint(path.string()), std::runtime_error);
    std::filesystem::remove(path);
}

TEST(Transfer, CopiesAllButHead) {
    UNet<float> source(small_config(21), HeadKind::reconstruction);
    // Perturb the source away from its init so "freshly initialized differs"
    // is meaningful even with an identical target seed.
    for (auto& v : source.param("head.weight").values()) {
        v += 0.25f;
    }
    const Checkpoint ck = smir::checkpoint_from_model(source, 9, 0, 0);

    UNetConfig target = small_config(22);
    target.out_channels = 21;
    UNet<float> seg = smir::transfer_weights(ck, target);
    EXPECT_EQ(seg.head(), HeadKind::segmentation);
    EXPECT_EQ(seg.param("head.weight").shape()[0], 21);
    for (const auto& name : source.param_names()) {
        if (name == "head.weight" || name == "head.bias") {
            continue;
        }
        ASSERT_EQ(seg.param(name).values(), source.param(name).values()) << name;
    }

    // Same class count: everything but the head matches, the head does not.
    UNetConfig same = small_config(23);
    UNet<float> seg3 = smir::transfer_weights(ck, same);
    EXPECT_NE(seg3.param("head.weight").values(), source.param("head.weight").values());
}

TEST(Transfer, RejectsBackboneMismatch) {
    UNet<float> source(small_config(31), HeadKind::reconstruction);
    const Checkpoint ck = smir::checkpoint_from_model(source, 0, 0, 0);
    UNetConfig target = small_config(31);
    target.base_channels = 8;
    EXPECT_THROW(smir::transfer_weights(ck, target), std::invalid_argument);
}

TEST(Transfer, MissingTensorNamedInError) {
    UNet<float> source(small_config(32), HeadKind::reconstruction);
    Checkpoint ck = smir::checkpoint_from_model(source, 0, 0, 0);
    std::erase_if(ck.tensors, [](const Checkpoint::Blob& b) {
        return b.name == "enc1.conv2.weight";
    });
    try {
        smir::transfer_weights(ck, small_config(33));
        FAIL() << "expected missing-tensor error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("enc1.conv2.weight"), std::string::npos);
    }
}

// After transfer, the pre-head activation must be bitwise identical between
// the source reconstruction model and the target segmentation model.
TEST(Transfer, PreHeadActivationsBitwiseEqual) {
    UNet<float> source(small_config(41), HeadKind::reconstruction);
    const Checkpoint ck = smir::checkpoint_from_model(source, 0, 0, 0);
    UNetConfig target = small_config(77);
    target.out_channels = 5;
    UNet<float> seg = smir::transfer_weights(ck, target);

    auto rng = smir::derive_stream(4, "transfer-inv");
    smir::NoGradGuard ng;
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<float> v(3 * 16 * 16);
        for (auto& x : v) {
            x = static_cast<float>(rng.uniform01());
        }
        auto input = Tensor<float>::from_data({1, 3, 16, 16}, std::move(v));
        const auto a = source.forward_features(input).values();
        const auto b = seg.forward_features(input).values();
        ASSERT_EQ(a, b);
    }
}
