#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smir/tensor.hpp"
#include "smir/unet.hpp"

namespace smir {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts unsupported");

// On-disk model snapshot. Format: magic "SMIR", u32 version, u64 metadata
// length + key=value text lines, u32 tensor count, then per tensor a
// length-prefixed name, u32 rank, u32 extents and raw little-endian f32
// data. Round-trips bitwise.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    struct Blob {
        std::string name;
        Shape shape;
        std::vector<float> values;
    };

    UNetConfig config;
    HeadKind head = HeadKind::reconstruction;
    int partition = -1;
    int epoch = 0;
    std::uint64_t run_seed = 0;
    std::map<std::string, std::string> extra;
    std::vector<Blob> tensors;

    const Blob* find(const std::string& name) const {
        for (const auto& b : tensors) {
            if (b.name == name) {
                return &b;
            }
        }
        return nullptr;
    }
};

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline std::uint32_t read_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
    }
    return v;
}
inline std::uint64_t read_u64(std::istream& in, const char* what) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
        throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
    }
    return v;
}

inline std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) {
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    return kv;
}

}  // namespace detail

inline Checkpoint checkpoint_from_model(const UNet<float>& model, int partition, int epoch,
                                        std::uint64_t run_seed,
                                        std::map<std::string, std::string> extra = {}) {
    Checkpoint ck;
    ck.config = model.config();
    ck.head = model.head();
    ck.partition = partition;
    ck.epoch = epoch;
    ck.run_seed = run_seed;
    ck.extra = std::move(extra);
    for (const auto& name : model.param_names()) {
        const auto& t = model.param(name);
        ck.tensors.push_back(Checkpoint::Blob{name, t.shape(), t.values()});
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    }
    out.write("SMIR", 4);
    detail::write_u32(out, Checkpoint::kVersion);

    std::ostringstream meta;
    meta << "model.depth=" << ck.config.depth << "\n";
    meta << "model.base_channels=" << ck.config.base_channels << "\n";
    meta << "model.in_channels=" << ck.config.in_channels << "\n";
    meta << "model.out_channels=" << ck.config.out_channels << "\n";
    meta << "model.norm=" << to_string(ck.config.norm_kind) << "\n";
    meta << "model.seed=" << ck.config.seed << "\n";
    meta << "head=" << to_string(ck.head) << "\n";
    meta << "partition=" << ck.partition << "\n";
    meta << "epoch=" << ck.epoch << "\n";
    meta << "run_seed=" << ck.run_seed << "\n";
    for (const auto& [k, v] : ck.extra) {
        meta << k << "=" << v << "\n";
    }
    const std::string meta_text = meta.str();
    detail::write_u64(out, meta_text.size());
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));

    detail::write_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& blob : ck.tensors) {
        detail::write_u32(out, static_cast<std::uint32_t>(blob.name.size()));
        out.write(blob.name.data(), static_cast<std::streamsize>(blob.name.size()));
        detail::write_u32(out, static_cast<std::uint32_t>(blob.shape.size()));
        for (int extent : blob.shape) {
            detail::write_u32(out, static_cast<std::uint32_t>(extent));
        }
        out.write(reinterpret_cast<const char*>(blob.values.data()),
                  static_cast<std::streamsize>(blob.values.size() * sizeof(float)));
    }
    if (!out) {
        throw std::runtime_error("checkpoint: write failed: " + path);
    }
}

inline void save_checkpoint(const UNet<float>& model, int partition, int epoch,
                            std::uint64_t run_seed, const std::string& path,
                            std::map<std::string, std::string> extra = {}) {
    save_checkpoint(checkpoint_from_model(model, partition, epoch, run_seed, std::move(extra)),
                    path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot open: " + path);
    }
    char magic[4] = {};
    if (!in.read(magic, 4) || std::memcmp(magic, "SMIR", 4) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path +
                                 " (not a checkpoint file)");
    }
    const std::uint32_t version = detail::read_u32(in, "version");
    if (version != Checkpoint::kVersion) {
        throw std::runtime_error("checkpoint: unsupported format version " +
                                 std::to_string(version) + " in " + path + " (reader supports " +
                                 std::to_string(Checkpoint::kVersion) + ")");
    }
    const std::uint64_t meta_len = detail::read_u64(in, "metadata length");
    std::string meta_text(meta_len, '\0');
    if (!in.read(meta_text.data(), static_cast<std::streamsize>(meta_len))) {
        throw std::runtime_error("checkpoint: truncated metadata in " + path);
    }
    auto kv = detail::parse_kv(meta_text);
    auto take = [&kv, &path](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw std::runtime_error("checkpoint: missing metadata key '" + std::string(key) +
                                     "' in " + path);
        }
        std::string v = it->second;
        kv.erase(it);
        return v;
    };

    Checkpoint ck;
    ck.config.depth = std::stoi(take("model.depth"));
    ck.config.base_channels = std::stoi(take("model.base_channels"));
    ck.config.in_channels = std::stoi(take("model.in_channels"));
    ck.config.out_channels = std::stoi(take("model.out_channels"));
    ck.config.norm_kind =
        take("model.norm") == "per_instance" ? NormKind::per_instance : NormKind::none;
    ck.config.seed = std::stoull(take("model.seed"));
    ck.head = take("head") == "segmentation" ? HeadKind::segmentation : HeadKind::reconstruction;
    ck.partition = std::stoi(take("partition"));
    ck.epoch = std::stoi(take("epoch"));
    ck.run_seed = std::stoull(take("run_seed"));
    ck.extra = std::move(kv);

    const std::uint32_t count = detail::read_u32(in, "tensor count");
    ck.tensors.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto& blob = ck.tensors[i];
        const std::uint32_t name_len = detail::read_u32(in, "tensor name length");
        blob.name.resize(name_len);
        if (!in.read(blob.name.data(), name_len)) {
            throw std::runtime_error("checkpoint: truncated tensor name in " + path);
        }
        const std::uint32_t rank = detail::read_u32(in, "tensor rank");
        blob.shape.resize(rank);
        std::size_t total = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            blob.shape[r] = static_cast<int>(detail::read_u32(in, "tensor extent"));
            total *= static_cast<std::size_t>(blob.shape[r]);
        }
        blob.values.resize(total);
        if (!in.read(reinterpret_cast<char*>(blob.values.data()),
                     static_cast<std::streamsize>(total * sizeof(float)))) {
            throw std::runtime_error("checkpoint: truncated tensor data for '" + blob.name +
                                     "' in " + path);
        }
    }
    if (in.peek() != std::ifstream::traits_type::eof()) {
        throw std::runtime_error("checkpoint: trailing bytes after tensor table in " + path);
    }
    return ck;
}

// Instantiates the model a checkpoint describes, verifying the tensor table
// is complete and shape-consistent with the config.
inline UNet<float> model_from_checkpoint(const Checkpoint& ck) {
    UNet<float> model(ck.config, ck.head);
    if (ck.tensors.size() != model.param_names().size()) {
        throw std::runtime_error("checkpoint: expected " +
                                 std::to_string(model.param_names().size()) + " tensors, found " +
                                 std::to_string(ck.tensors.size()));
    }
    for (const auto& name : model.param_names()) {
        const Checkpoint::Blob* blob = ck.find(name);
        if (blob == nullptr) {
            throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        }
        auto& dst = model.param(name);
        if (blob->shape != dst.shape()) {
            throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                                     shape_str(blob->shape) + ", model expects " +
                                     shape_str(dst.shape()));
        }
        dst.values() = blob->values;
    }
    return model;
}

// Downstream initialization: every tensor except the final 1x1 head layer is
// copied bitwise from the reconstruction checkpoint; the head is freshly
// initialized from the target seed with out_channels = num_classes.
inline UNet<float> transfer_weights(const Checkpoint& source, const UNetConfig& target_config) {
    if (source.head != HeadKind::reconstruction) {
        throw std::invalid_argument("transfer_weights: source must be a reconstruction checkpoint");
    }
    target_config.validate();
    if (!source.config.same_backbone(target_config)) {
        throw std::invalid_argument(
            "transfer_weights: source and target configs differ beyond the head");
    }
    UNet<float> model(target_config, HeadKind::segmentation);
    for (const auto& name : model.param_names()) {
        if (name == "head.weight" || name == "head.bias") {
            continue;  // fresh init stays
        }
        const Checkpoint::Blob* blob = source.find(name);
        if (blob == nullptr) {
            throw std::runtime_error("transfer_weights: source checkpoint is missing tensor '" +
                                     name + "'");
        }
        auto& dst = model.param(name);
        if (blob->shape != dst.shape()) {
            throw std::runtime_error("transfer_weights: tensor '" + name + "' has shape " +
                                     shape_str(blob->shape) + ", target expects " +
                                     shape_str(dst.shape()));
        }
        dst.values() = blob->values;
    }
    return model;
}

}  // namespace smir
