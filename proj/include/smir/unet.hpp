#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "smir/ops.hpp"
#include "smir/rng.hpp"
#include "smir/tensor.hpp"

namespace smir {

enum class NormKind { none, per_instance };
enum class HeadKind { reconstruction, segmentation };

inline const char* to_string(NormKind k) {
    return k == NormKind::none ? "none" : "per_instance";
}
inline const char* to_string(HeadKind k) {
    return k == HeadKind::reconstruction ? "reconstruction" : "segmentation";
}

struct UNetConfig {
    int depth = 3;
    int base_channels = 16;
    int in_channels = 3;
    int out_channels = 3;
    NormKind norm_kind = NormKind::none;
    std::uint64_t seed = 0;

    bool operator==(const UNetConfig&) const = default;

    void validate() const {
        if (depth < 2 || base_channels < 4 || in_channels < 1 || out_channels < 1) {
            throw std::invalid_argument(
                "unet config: need depth >= 2, base_channels >= 4, channels >= 1");
        }
    }

    // Equality of everything the weights depend on structurally; the head
    // width and the init seed may differ across a transfer.
    bool same_backbone(const UNetConfig& o) const {
        return depth == o.depth && base_channels == o.base_channels &&
               in_channels == o.in_channels && norm_kind == o.norm_kind;
    }
};

// Compact U-Net: `depth` conv-conv-maxpool encoder stages doubling channels,
// a two-conv bottleneck, a symmetric nearest-upsample + skip-concat decoder,
// and a 1x1 output head. The reconstruction head ends in a sigmoid so
// outputs live in (0,1); the segmentation head emits raw per-class scores.
template <typename T>
class UNet {
public:
    UNet() = default;

    UNet(const UNetConfig& config, HeadKind head) : config_(config), head_(head) {
        config_.validate();
        build();
    }

    const UNetConfig& config() const { return config_; }
    HeadKind head() const { return head_; }

    const std::vector<std::string>& param_names() const { return names_; }

    Tensor<T>& param(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw std::invalid_argument("unet: no parameter named " + name);
        }
        return params_[it->second];
    }
    const Tensor<T>& param(const std::string& name) const {
        return const_cast<UNet*>(this)->param(name);
    }

    std::vector<Tensor<T>>& params() { return params_; }
    const std::vector<Tensor<T>>& params() const { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) {
            n += p.size();
        }
        return n;
    }

    // Activation entering the final 1x1 head convolution.
    Tensor<T> forward_features(const Tensor<T>& input) const {
        detail::check_rank4(input.shape(), "unet forward");
        if (input.dim(1) != config_.in_channels) {
            throw std::invalid_argument("unet: input has " + std::to_string(input.dim(1)) +
                                        " channels, config expects " +
                                        std::to_string(config_.in_channels));
        }
        const int div = 1 << config_.depth;
        if (input.dim(2) % div != 0 || input.dim(3) % div != 0) {
            throw std::invalid_argument("unet: spatial dims of " + shape_str(input.shape()) +
                                        " must be divisible by " + std::to_string(div));
        }
        Tensor<T> x = input;
        std::vector<Tensor<T>> skips;
        for (int s = 0; s < config_.depth; ++s) {
            x = block(x, "enc" + std::to_string(s));
            skips.push_back(x);
            x = maxpool2(x);
        }
        x = block(x, "bottleneck");
        for (int s = config_.depth - 1; s >= 0; --s) {
            x = upsample_nearest2(x);
            x = concat_channels(x, skips[static_cast<std::size_t>(s)]);
            x = block(x, "dec" + std::to_string(s));
        }
        return x;
    }

    Tensor<T> forward(const Tensor<T>& input) const {
        Tensor<T> x = conv2d(forward_features(input), param("head.weight"), param("head.bias"));
        return head_ == HeadKind::reconstruction ? sigmoid(x) : x;
    }

    // Copies raw parameter values from another model (shapes must match).
    void load_values_from(const UNet& other) {
        if (names_ != other.names_) {
            throw std::invalid_argument("unet: parameter sets differ");
        }
        for (std::size_t i = 0; i < params_.size(); ++i) {
            params_[i].values() = other.params_[i].values();
        }
    }

private:
    Tensor<T> block(const Tensor<T>& input, const std::string& name) const {
        Tensor<T> x = input;
        for (int c = 1; c <= 2; ++c) {
            const std::string prefix = name + ".conv" + std::to_string(c);
            x = conv2d(x, param(prefix + ".weight"), param(prefix + ".bias"), 1, 1);
            if (config_.norm_kind == NormKind::per_instance) {
                x = instance_norm(x);
            }
            x = relu(x);
        }
        return x;
    }

    void add_conv(const std::string& prefix, int cin, int cout, int k) {
        // He fan-in init, one derived stream per tensor name so the layout
        // of other layers never shifts a layer's draw sequence.
        auto rng = derive_stream(config_.seed, "init", fnv1a64(prefix));
        const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
        std::vector<T> w(static_cast<std::size_t>(cout) * cin * k * k);
        for (auto& v : w) {
            v = static_cast<T>(rng.normal() * stddev);
        }
        add_param(prefix + ".weight",
                  Tensor<T>::from_data({cout, cin, k, k}, std::move(w), true));
        add_param(prefix + ".bias", Tensor<T>::zeros({cout}, true));
    }

    void add_param(std::string name, Tensor<T> t) {
        index_[name] = params_.size();
        names_.push_back(std::move(name));
        params_.push_back(std::move(t));
    }

    void build() {
        int ch = config_.in_channels;
        std::vector<int> stage_channels;
        for (int s = 0; s < config_.depth; ++s) {
            const int out = config_.base_channels << s;
            const std::string name = "enc" + std::to_string(s);
            add_conv(name + ".conv1", ch, out, 3);
            add_conv(name + ".conv2", out, out, 3);
            stage_channels.push_back(out);
            ch = out;
        }
        const int mid = config_.base_channels << config_.depth;
        add_conv("bottleneck.conv1", ch, mid, 3);
        add_conv("bottleneck.conv2", mid, mid, 3);
        ch = mid;
        for (int s = config_.depth - 1; s >= 0; --s) {
            const int out = stage_channels[static_cast<std::size_t>(s)];
            const std::string name = "dec" + std::to_string(s);
            add_conv(name + ".conv1", ch + out, out, 3);
            add_conv(name + ".conv2", out, out, 3);
            ch = out;
        }
        add_conv("head", ch, config_.out_channels, 1);
    }

    UNetConfig config_;
    HeadKind head_ = HeadKind::reconstruction;
    std::vector<std::string> names_;
    std::vector<Tensor<T>> params_;
    std::map<std::string, std::size_t> index_;
};

template <typename T>
UNet<T> build_unet(const UNetConfig& config, HeadKind head = HeadKind::reconstruction) {
    return UNet<T>(config, head);
}

}  // namespace smir
