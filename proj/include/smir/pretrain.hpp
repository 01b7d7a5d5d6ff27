#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smir/adam.hpp"
#include "smir/augment.hpp"
#include "smir/checkpoint.hpp"
#include "smir/hash.hpp"
#include "smir/masking.hpp"
#include "smir/parallel.hpp"
#include "smir/rng.hpp"
#include "smir/ssim.hpp"
#include "smir/unet.hpp"

namespace smir {

enum class MaskingMode { selective, random };

inline const char* to_string(MaskingMode m) {
    return m == MaskingMode::selective ? "selective" : "random";
}

struct PretrainConfig {
    int num_partitions = 10;
    int samples_per_image = 5;
    double mask_ratio = 0.5;
    int epochs_per_partition = 30;
    int batch_size = 8;
    std::uint64_t seed = 0;
    MaskingMode masking_mode = MaskingMode::selective;
    // Ablation: draw the random-mode mask once per partition instead of per
    // epoch, mirroring how selective masks are held fixed.
    bool fixed_random_masks = false;
    SampleScheme sample_scheme = SampleScheme::complement_pairs;
    int target_patches = 64;
    int crop_size = 64;  // 0: train on full images (must share one shape)
    float mask_fill = 0.f;
    AugmentSettings augment;
    UNetConfig model;
    AdamConfig optimizer;

    void validate() const {
        if (num_partitions < 2 && masking_mode == MaskingMode::selective) {
            throw std::invalid_argument("pretrain: selective masking needs >= 2 partitions");
        }
        if (num_partitions < 1 || samples_per_image < 2 || epochs_per_partition < 0 ||
            batch_size < 1) {
            throw std::invalid_argument("pretrain: invalid schedule fields");
        }
        if (mask_ratio <= 0.0 || mask_ratio >= 1.0) {
            throw std::invalid_argument("pretrain: mask ratio must be in (0,1)");
        }
    }
};

// Uniform shuffle followed by a contiguous split; the first (N mod n)
// partitions take the extra element.
struct PartitionPlan {
    std::vector<std::vector<int>> partitions;
};

inline PartitionPlan make_partition_plan(std::size_t count, int n, RandomStream& rng) {
    if (n < 1 || count < static_cast<std::size_t>(n)) {
        throw std::invalid_argument("partition: need at least as many images as partitions");
    }
    std::vector<int> ids(count);
    std::iota(ids.begin(), ids.end(), 0);
    rng.shuffle(ids);
    PartitionPlan plan;
    plan.partitions.resize(static_cast<std::size_t>(n));
    const std::size_t base = count / static_cast<std::size_t>(n);
    const std::size_t extra = count % static_cast<std::size_t>(n);
    std::size_t pos = 0;
    for (int p = 0; p < n; ++p) {
        const std::size_t take = base + (static_cast<std::size_t>(p) < extra ? 1 : 0);
        plan.partitions[static_cast<std::size_t>(p)].assign(ids.begin() + static_cast<long>(pos),
                                                            ids.begin() +
                                                                static_cast<long>(pos + take));
        pos += take;
    }
    return plan;
}

// One image's training directive for a pretraining step. Without a fixed
// crop/mask, a fresh crop and mask are drawn every epoch.
struct PretrainExample {
    int id = 0;  // dataset-global index; keys the per-image random streams
    const Image* original = nullptr;
    std::optional<CropRect> fixed_crop;
    std::optional<PatchMask> fixed_mask;
};

struct TrainEpochsResult {
    std::vector<double> epoch_losses;
    long long examples_processed = 0;
};

namespace detail {

inline CropRect full_rect(const Image& img) { return CropRect{0, 0, img.height, img.width}; }

inline CropRect choose_crop(const Image& img, int crop_size, RandomStream& rng) {
    if (crop_size <= 0 || (img.height == crop_size && img.width == crop_size)) {
        return full_rect(img);
    }
    return draw_crop(img.height, img.width, crop_size, crop_size, rng);
}

}  // namespace detail

inline std::uint64_t model_weights_hash(const UNet<float>& model) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& name : model.param_names()) {
        const auto& v = model.param(name).values();
        h = fnv1a64(name, h);
        h = fnv1a64(v.data(), v.size() * sizeof(float), h);
    }
    return h;
}

// Minibatch reconstruction training. Per epoch and image: take the crop
// (fixed or freshly drawn), jitter the input copy, mask it (fixed mask or a
// fresh draw), then flip input and target jointly. The un-jittered crop is
// the reconstruction target. All randomness is drawn from streams keyed by
// (seed, partition, epoch, image id), so any partition boundary is a clean
// resume point.
inline TrainEpochsResult train_reconstruction_epochs(UNet<float>& model,
                                                     const std::vector<PretrainExample>& examples,
                                                     const PretrainConfig& cfg,
                                                     int partition_index, Adam<float>& opt) {
    cfg.validate();
    if (static_cast<int>(examples.size()) < cfg.batch_size) {
        throw std::invalid_argument("pretrain: batch size exceeds the partition size");
    }
    TrainEpochsResult result;
    for (int epoch = 0; epoch < cfg.epochs_per_partition; ++epoch) {
        std::vector<int> order(examples.size());
        std::iota(order.begin(), order.end(), 0);
        {
            auto order_rng = derive_stream(cfg.seed, "order",
                                           static_cast<std::uint64_t>(partition_index),
                                           static_cast<std::uint64_t>(epoch));
            order_rng.shuffle(order);
        }
        double loss_total = 0.0;
        long long seen = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Image> inputs, targets;
            inputs.reserve(stop - start);
            targets.reserve(stop - start);
            for (std::size_t bi = start; bi < stop; ++bi) {
                const PretrainExample& ex = examples[static_cast<std::size_t>(
                    order[bi])];
                auto rng = derive_stream(cfg.seed, "aug",
                                         static_cast<std::uint64_t>(partition_index),
                                         static_cast<std::uint64_t>(epoch),
                                         static_cast<std::uint64_t>(ex.id));
                const CropRect rect = ex.fixed_crop
                                          ? *ex.fixed_crop
                                          : detail::choose_crop(*ex.original, cfg.crop_size, rng);
                Image target = crop(*ex.original, rect.y0, rect.x0, rect.h, rect.w);
                Image input = cfg.augment.color_jitter
                                  ? apply_jitter(target, draw_jitter(cfg.augment, rng))
                                  : target;
                const PatchGrid grid = make_grid(rect.h, rect.w, cfg.target_patches);
                const PatchMask mask =
                    ex.fixed_mask ? *ex.fixed_mask : random_mask(grid, cfg.mask_ratio, rng);
                input = apply_mask(input, mask, cfg.mask_fill);
                if (cfg.augment.hflip && rng.uniform01() < 0.5) {
                    input = hflip(input);
                    target = hflip(target);
                }
                inputs.push_back(std::move(input));
                targets.push_back(std::move(target));
            }
            auto input_batch = images_to_batch<float>(inputs);
            auto target_batch = images_to_batch<float>(targets);
            auto recon = model.forward(input_batch);
            auto loss = train_loss_batch(recon, target_batch);
            const double batch_loss = static_cast<double>(loss.item());
            if (!std::isfinite(batch_loss)) {
                throw std::runtime_error(
                    "pretrain: non-finite loss at partition " + std::to_string(partition_index) +
                    ", epoch " + std::to_string(epoch) + ", batch starting at " +
                    std::to_string(start));
            }
            opt.zero_grad(model.params());
            loss.backward();
            opt.step(model.params());
            loss_total += batch_loss * static_cast<double>(stop - start);
            seen += static_cast<long long>(stop - start);
        }
        result.epoch_losses.push_back(loss_total / static_cast<double>(seen));
        result.examples_processed += seen;
    }
    return result;
}

struct MaskRecord {
    int image_id = 0;
    CropRect crop;
    std::vector<bool> mask;
    std::uint64_t source_hash = 0;
};

struct StepResult {
    TrainEpochsResult train;
    std::vector<MaskRecord> masks;
    long long mask_forward_passes = 0;
};

// Initialization step: fresh random 50% masks re-drawn every epoch.
inline StepResult init_step(UNet<float>& model, const std::vector<Image>& dataset,
                            const std::vector<int>& partition, const PretrainConfig& cfg,
                            Adam<float>& opt) {
    if (partition.empty()) {
        throw std::invalid_argument("init_step: empty partition");
    }
    std::vector<PretrainExample> examples;
    examples.reserve(partition.size());
    for (int id : partition) {
        examples.push_back(PretrainExample{id, &dataset[static_cast<std::size_t>(id)], {}, {}});
    }
    StepResult result;
    result.train = train_reconstruction_epochs(model, examples, cfg, 0, opt);
    return result;
}

// Selective step for partition i: one fixed crop and selective mask per
// image, computed with the weights carried over from partition i-1, then
// training continues on those fixed masked crops. Mask computation is
// forward-only and parallel across the partition's images.
inline StepResult selective_step(UNet<float>& model, const std::vector<Image>& dataset,
                                 const std::vector<int>& partition, const PretrainConfig& cfg,
                                 int partition_index, Adam<float>& opt) {
    if (partition.empty()) {
        throw std::invalid_argument("selective_step: empty partition");
    }
    const std::uint64_t source_hash = model_weights_hash(model);
    std::vector<PretrainExample> examples(partition.size());
    std::vector<MaskRecord> records(partition.size());
    std::vector<long long> passes(partition.size(), 0);

    const Reconstructor reconstruct = [&model](const Image& masked) {
        NoGradGuard ng;
        return tensor_to_image(model.forward(image_to_tensor<float>(masked)));
    };

    parallel_for(partition.size(), [&](std::size_t slot) {
        const int id = partition[slot];
        const Image& original = dataset[static_cast<std::size_t>(id)];
        auto rng = derive_stream(cfg.seed, "selmask",
                                 static_cast<std::uint64_t>(partition_index),
                                 static_cast<std::uint64_t>(id));
        const CropRect rect = detail::choose_crop(original, cfg.crop_size, rng);
        const Image target = crop(original, rect.y0, rect.x0, rect.h, rect.w);
        const PatchGrid grid = make_grid(rect.h, rect.w, cfg.target_patches);
        auto selection = selective_mask_image(reconstruct, target, grid, cfg.samples_per_image,
                                              cfg.mask_ratio, cfg.mask_fill, &rng,
                                              cfg.sample_scheme);
        examples[slot] = PretrainExample{id, &dataset[static_cast<std::size_t>(id)], rect,
                                         selection.mask};
        records[slot] = MaskRecord{id, rect, selection.mask.masked, source_hash};
        passes[slot] = selection.forward_passes;
    });

    StepResult result;
    result.masks = std::move(records);
    for (long long p : passes) {
        result.mask_forward_passes += p;
    }
    result.train = train_reconstruction_epochs(model, examples, cfg, partition_index, opt);
    return result;
}

// Random-mode counterpart for partitions >= 1: identical schedule and
// budget, fresh random masks (per epoch, or once per partition when the
// fixed_random_masks ablation flag is set).
inline StepResult random_step(UNet<float>& model, const std::vector<Image>& dataset,
                              const std::vector<int>& partition, const PretrainConfig& cfg,
                              int partition_index, Adam<float>& opt) {
    if (partition.empty()) {
        throw std::invalid_argument("random_step: empty partition");
    }
    std::vector<PretrainExample> examples;
    examples.reserve(partition.size());
    std::vector<MaskRecord> records;
    const std::uint64_t source_hash = model_weights_hash(model);
    for (int id : partition) {
        PretrainExample ex{id, &dataset[static_cast<std::size_t>(id)], {}, {}};
        if (cfg.fixed_random_masks) {
            auto rng = derive_stream(cfg.seed, "fixedrand",
                                     static_cast<std::uint64_t>(partition_index),
                                     static_cast<std::uint64_t>(id));
            const Image& original = dataset[static_cast<std::size_t>(id)];
            const CropRect rect = detail::choose_crop(original, cfg.crop_size, rng);
            const PatchGrid grid = make_grid(rect.h, rect.w, cfg.target_patches);
            ex.fixed_crop = rect;
            ex.fixed_mask = random_mask(grid, cfg.mask_ratio, rng);
            records.push_back(MaskRecord{id, rect, ex.fixed_mask->masked, source_hash});
        }
        examples.push_back(std::move(ex));
    }
    StepResult result;
    result.masks = std::move(records);
    result.train = train_reconstruction_epochs(model, examples, cfg, partition_index, opt);
    return result;
}

struct PretrainRunReport {
    PartitionPlan plan;
    std::vector<std::vector<double>> partition_losses;
    std::vector<std::uint64_t> checkpoint_hashes;  // weights hash per partition
    std::vector<std::string> checkpoint_paths;
    long long train_examples = 0;
    long long mask_forward_passes = 0;
    int resumed_from_partition = -1;
};

struct PretrainOutput {
    UNet<float> model;
    PretrainRunReport report;
};

namespace detail {

inline std::string checkpoint_path(const std::string& out_dir, int partition) {
    return (std::filesystem::path(out_dir) /
            ("partition_" + std::to_string(partition) + ".ckpt"))
        .string();
}

inline void write_loss_csv(const std::string& out_dir, int partition,
                           const std::vector<double>& losses) {
    std::ofstream out(std::filesystem::path(out_dir) /
                      ("partition_" + std::to_string(partition) + "_losses.csv"));
    out << "epoch,mean_loss\n";
    for (std::size_t e = 0; e < losses.size(); ++e) {
        out << e << "," << losses[e] << "\n";
    }
}

inline void write_mask_log(const std::string& out_dir, int partition,
                           const std::vector<MaskRecord>& records) {
    std::ofstream out(std::filesystem::path(out_dir) /
                      ("partition_" + std::to_string(partition) + "_masks.txt"));
    out << "# image_id,source_weights_hash,crop_y,crop_x,crop_h,crop_w,mask_bits\n";
    for (const auto& r : records) {
        out << r.image_id << "," << hash_to_hex(r.source_hash) << "," << r.crop.y0 << ","
            << r.crop.x0 << "," << r.crop.h << "," << r.crop.w << ",";
        for (bool b : r.mask) {
            out << (b ? '1' : '0');
        }
        out << "\n";
    }
}

}  // namespace detail

// The full iterative scheme: random-mask training on partition 0, then one
// selective (or budget-matched random) step per remaining partition, each
// continuing from the previous weights with a fresh optimizer. When out_dir
// is set, every partition leaves a checkpoint, a loss CSV and a mask log,
// and an interrupted run resumes bitwise from the last complete partition.
inline PretrainOutput run_pretraining(PretrainConfig cfg, const std::vector<Image>& dataset,
                                      const std::string& out_dir = "", bool resume = false) {
    cfg.validate();
    if (dataset.size() < static_cast<std::size_t>(cfg.num_partitions)) {
        throw std::invalid_argument("pretrain: fewer images than partitions");
    }
    cfg.model.out_channels = 3;
    cfg.model.seed = derive_seed(cfg.seed, "model-init");

    auto plan_rng = derive_stream(cfg.seed, "partition-plan");
    PretrainRunReport report;
    report.plan = make_partition_plan(dataset.size(), cfg.num_partitions, plan_rng);

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
    }

    UNet<float> model(cfg.model, HeadKind::reconstruction);
    int first_partition = 0;
    if (resume && !out_dir.empty()) {
        for (int p = cfg.num_partitions - 1; p >= 0; --p) {
            const std::string path = detail::checkpoint_path(out_dir, p);
            if (std::filesystem::exists(path)) {
                const Checkpoint ck = load_checkpoint(path);
                if (!(ck.config == cfg.model) || ck.run_seed != cfg.seed) {
                    throw std::runtime_error(
                        "pretrain: checkpoint " + path +
                        " does not match this run's config/seed; refusing to resume");
                }
                model = model_from_checkpoint(ck);
                first_partition = p + 1;
                report.resumed_from_partition = p;
                break;
            }
        }
    }

    for (int p = first_partition; p < cfg.num_partitions; ++p) {
        Adam<float> opt(cfg.optimizer);  // moments reset at every boundary
        const auto& partition = report.plan.partitions[static_cast<std::size_t>(p)];
        StepResult step;
        if (p == 0) {
            step = init_step(model, dataset, partition, cfg, opt);
        } else if (cfg.masking_mode == MaskingMode::selective) {
            step = selective_step(model, dataset, partition, cfg, p, opt);
        } else {
            step = random_step(model, dataset, partition, cfg, p, opt);
        }
        report.partition_losses.push_back(step.train.epoch_losses);
        report.train_examples += step.train.examples_processed;
        report.mask_forward_passes += step.mask_forward_passes;
        report.checkpoint_hashes.push_back(model_weights_hash(model));
        if (!out_dir.empty()) {
            const std::string path = detail::checkpoint_path(out_dir, p);
            save_checkpoint(model, p, cfg.epochs_per_partition, cfg.seed, path,
                            {{"masking_mode", to_string(cfg.masking_mode)}});
            report.checkpoint_paths.push_back(path);
            detail::write_loss_csv(out_dir, p, step.train.epoch_losses);
            if (!step.masks.empty()) {
                detail::write_mask_log(out_dir, p, step.masks);
            }
        }
    }
    return PretrainOutput{std::move(model), std::move(report)};
}

// Mean Eq.-2 loss of a reconstructor on held-out images, masked per the
// given mode. Selective masks are derived from the same reconstructor.
inline double validate_reconstruction(const Reconstructor& reconstruct,
                                      const std::vector<Image>& heldout, MaskingMode mode,
                                      const PretrainConfig& cfg) {
    if (heldout.empty()) {
        throw std::invalid_argument("validate_reconstruction: empty held-out set");
    }
    std::vector<double> losses(heldout.size(), 0.0);
    parallel_for(heldout.size(), [&](std::size_t i) {
        auto rng = derive_stream(cfg.seed, "validate", static_cast<std::uint64_t>(i),
                                 mode == MaskingMode::selective ? 1u : 0u);
        const Image& original = heldout[i];
        const CropRect rect = detail::choose_crop(original, cfg.crop_size, rng);
        const Image target = crop(original, rect.y0, rect.x0, rect.h, rect.w);
        const PatchGrid grid = make_grid(rect.h, rect.w, cfg.target_patches);
        Image masked;
        if (mode == MaskingMode::selective) {
            masked = selective_mask_image(reconstruct, target, grid, cfg.samples_per_image,
                                          cfg.mask_ratio, cfg.mask_fill, &rng, cfg.sample_scheme)
                         .masked_image;
        } else {
            masked = apply_mask(target, random_mask(grid, cfg.mask_ratio, rng), cfg.mask_fill);
        }
        losses[i] = train_loss_value(reconstruct(masked), target);
    });
    double total = 0.0;
    for (double l : losses) {
        total += l;
    }
    return total / static_cast<double>(losses.size());
}

inline Reconstructor model_reconstructor(const UNet<float>& model) {
    return [&model](const Image& masked) {
        NoGradGuard ng;
        return tensor_to_image(model.forward(image_to_tensor<float>(masked)));
    };
}

inline double validate_reconstruction(const UNet<float>& model,
                                      const std::vector<Image>& heldout, MaskingMode mode,
                                      const PretrainConfig& cfg) {
    return validate_reconstruction(model_reconstructor(model), heldout, mode, cfg);
}

}  // namespace smir
