#pragma once

#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "smir/adam.hpp"
#include "smir/augment.hpp"
#include "smir/jaccard.hpp"
#include "smir/rng.hpp"
#include "smir/seg_metrics.hpp"
#include "smir/unet.hpp"

namespace smir {

struct DownstreamConfig {
    int epochs = 500;  // paper-scale default; desk presets override
    int batch_size = 8;
    std::uint64_t seed = 0;
    int crop_size = 64;  // 0: full images
    AugmentSettings augment;
    AdamConfig optimizer;
    std::vector<std::string> class_names;  // defaults derived from the model

    void validate() const {
        if (epochs < 0 || batch_size < 1) {
            throw std::invalid_argument("downstream: invalid epochs/batch size");
        }
    }
};

struct DownstreamResult {
    UNet<float> best_model;
    double best_val_miou = 0.0;
    int best_epoch = -1;
    std::vector<double> train_losses;
    std::vector<double> val_mious;
    long long examples_processed = 0;
};

// Supervised segmentation training with the soft Jaccard objective. Flip and
// crop apply jointly to image and label, color jitter to the image only.
// The checkpoint with the best validation mIoU is retained (earliest epoch
// wins ties); zero epochs returns the initialization unchanged.
inline DownstreamResult train_downstream(const UNet<float>& init,
                                         const std::vector<EvalExample>& train_set,
                                         const std::vector<EvalExample>& val_set,
                                         const DownstreamConfig& cfg) {
    cfg.validate();
    if (init.head() != HeadKind::segmentation) {
        throw std::invalid_argument("downstream: model must carry a segmentation head");
    }
    if (train_set.empty() || val_set.empty()) {
        throw std::invalid_argument("downstream: train and validation sets must be nonempty");
    }
    const int num_classes = init.config().out_channels;
    for (const auto& ex : train_set) {
        if (ex.label.ids.empty()) {
            throw std::invalid_argument("downstream: unlabeled example in the training set");
        }
    }
    std::vector<std::string> class_names =
        cfg.class_names.empty() ? default_class_names(num_classes) : cfg.class_names;

    UNet<float> model(init.config(), HeadKind::segmentation);
    model.load_values_from(init);
    Adam<float> opt(cfg.optimizer);

    DownstreamResult result;
    result.best_model = UNet<float>(init.config(), HeadKind::segmentation);
    result.best_model.load_values_from(init);

    AugmentSettings aug = cfg.augment;
    aug.crop_h = cfg.crop_size;
    aug.crop_w = cfg.crop_size;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        {
            auto order_rng =
                derive_stream(cfg.seed, "ds-order", static_cast<std::uint64_t>(epoch));
            order_rng.shuffle(order);
        }
        double loss_total = 0.0;
        long long seen = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Image> images;
            std::vector<LabelMap> labels;
            for (std::size_t bi = start; bi < stop; ++bi) {
                const EvalExample& ex = train_set[static_cast<std::size_t>(order[bi])];
                auto rng = derive_stream(cfg.seed, "ds-aug", static_cast<std::uint64_t>(epoch),
                                         static_cast<std::uint64_t>(order[bi]));
                Augmented a = augment(ex.image, &ex.label, aug, rng);
                images.push_back(std::move(a.image));
                labels.push_back(std::move(*a.label));
            }
            auto scores = model.forward(images_to_batch<float>(images));
            auto loss = jaccard_loss(scores, labels);
            const double batch_loss = static_cast<double>(loss.item());
            if (!std::isfinite(batch_loss)) {
                throw std::runtime_error("downstream: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch starting at " +
                                         std::to_string(start));
            }
            opt.zero_grad(model.params());
            loss.backward();
            opt.step(model.params());
            loss_total += batch_loss * static_cast<double>(stop - start);
            seen += static_cast<long long>(stop - start);
        }
        result.train_losses.push_back(loss_total / static_cast<double>(seen));
        result.examples_processed += seen;

        const SegReport val = iou_report(model, val_set, class_names, cfg.seed);
        result.val_mious.push_back(val.miou);
        if (val.miou > result.best_val_miou || result.best_epoch < 0) {
            result.best_val_miou = val.miou;
            result.best_epoch = epoch;
            result.best_model.load_values_from(model);
        }
    }
    return result;
}

}  // namespace smir
