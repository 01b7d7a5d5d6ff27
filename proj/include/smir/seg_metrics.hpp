#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "smir/image.hpp"
#include "smir/parallel.hpp"
#include "smir/tensor.hpp"
#include "smir/unet.hpp"

namespace smir {

// Per-class IoU with confusion counts for a labeled evaluation set.
// Classes whose union is zero in the set carry no defined IoU and are
// excluded from the mean.
struct SegReport {
    std::vector<std::string> class_names;
    std::vector<long long> intersection;  // true positives
    std::vector<long long> unions;        // TP + FP + FN
    std::vector<double> iou;              // meaningful where valid
    std::vector<bool> valid;
    double miou = 0.0;             // mean over valid classes
    double miou_foreground = 0.0;  // same, excluding class 0
    std::uint64_t seed = 0;

    int num_classes() const { return static_cast<int>(class_names.size()); }
};

inline std::vector<std::string> default_class_names(int num_classes) {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(num_classes));
    names.emplace_back("background");
    for (int c = 1; c < num_classes; ++c) {
        names.push_back("class" + std::to_string(c));
    }
    return names;
}

// Confusion matrix indexed [truth][prediction].
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes)
        : classes_(num_classes),
          counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

    void add(const LabelMap& truth, const LabelMap& prediction) {
        if (truth.height != prediction.height || truth.width != prediction.width) {
            throw std::invalid_argument("confusion: prediction/label dimensions differ");
        }
        for (std::size_t i = 0; i < truth.ids.size(); ++i) {
            const std::int32_t t = truth.ids[i];
            if (t == truth.ignore_id) {
                continue;
            }
            const std::int32_t p = prediction.ids[i];
            if (t < 0 || t >= classes_ || p < 0 || p >= classes_) {
                throw std::invalid_argument("confusion: id outside [0," +
                                            std::to_string(classes_) + ")");
            }
            ++counts_[static_cast<std::size_t>(t) * classes_ + p];
        }
    }

    void merge(const ConfusionMatrix& other) {
        for (std::size_t i = 0; i < counts_.size(); ++i) {
            counts_[i] += other.counts_[i];
        }
    }

    long long at(int truth, int pred) const {
        return counts_[static_cast<std::size_t>(truth) * classes_ + pred];
    }
    int num_classes() const { return classes_; }

private:
    int classes_;
    std::vector<long long> counts_;
};

inline SegReport report_from_confusion(const ConfusionMatrix& conf,
                                       std::vector<std::string> class_names,
                                       std::uint64_t seed = 0) {
    const int classes = conf.num_classes();
    if (static_cast<int>(class_names.size()) != classes) {
        throw std::invalid_argument("report: class name count mismatch");
    }
    SegReport r;
    r.class_names = std::move(class_names);
    r.intersection.resize(static_cast<std::size_t>(classes));
    r.unions.resize(static_cast<std::size_t>(classes));
    r.iou.assign(static_cast<std::size_t>(classes), 0.0);
    r.valid.assign(static_cast<std::size_t>(classes), false);
    r.seed = seed;
    double total = 0.0, total_fg = 0.0;
    int count = 0, count_fg = 0;
    for (int c = 0; c < classes; ++c) {
        long long tp = conf.at(c, c);
        long long fp = 0, fn = 0;
        for (int o = 0; o < classes; ++o) {
            if (o != c) {
                fp += conf.at(o, c);
                fn += conf.at(c, o);
            }
        }
        const long long uni = tp + fp + fn;
        r.intersection[static_cast<std::size_t>(c)] = tp;
        r.unions[static_cast<std::size_t>(c)] = uni;
        if (uni > 0) {
            const double iou = static_cast<double>(tp) / static_cast<double>(uni);
            r.iou[static_cast<std::size_t>(c)] = iou;
            r.valid[static_cast<std::size_t>(c)] = true;
            total += iou;
            ++count;
            if (c != 0) {
                total_fg += iou;
                ++count_fg;
            }
        }
    }
    r.miou = count > 0 ? total / count : 0.0;
    r.miou_foreground = count_fg > 0 ? total_fg / count_fg : 0.0;
    return r;
}

inline LabelMap argmax_prediction(const Tensor<float>& scores, int batch_index = 0) {
    const int classes = scores.dim(1), h = scores.dim(2), w = scores.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t base = static_cast<std::size_t>(batch_index) * classes * plane;
    LabelMap pred(h, w);
    for (std::size_t p = 0; p < plane; ++p) {
        int best = 0;
        float bv = scores.values()[base + p];
        for (int c = 1; c < classes; ++c) {
            const float v = scores.values()[base + static_cast<std::size_t>(c) * plane + p];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        pred.ids[p] = best;
    }
    return pred;
}

inline SegReport iou_report_from_predictions(const std::vector<LabelMap>& predictions,
                                             const std::vector<LabelMap>& truths,
                                             int num_classes,
                                             std::vector<std::string> class_names = {},
                                             std::uint64_t seed = 0) {
    if (predictions.size() != truths.size() || predictions.empty()) {
        throw std::invalid_argument("iou_report: need matching, nonempty prediction/label sets");
    }
    if (class_names.empty()) {
        class_names = default_class_names(num_classes);
    }
    // Parallel per-image confusion, merged in image order.
    std::vector<ConfusionMatrix> partial(predictions.size(), ConfusionMatrix(num_classes));
    parallel_for(predictions.size(), [&](std::size_t i) {
        partial[i].add(truths[i], predictions[i]);
    });
    ConfusionMatrix conf(num_classes);
    for (const auto& part : partial) {
        conf.merge(part);
    }
    return report_from_confusion(conf, std::move(class_names), seed);
}

// Runs the model over the evaluation set (no gradients) and scores argmax
// predictions against the labels.
struct EvalExample {
    Image image;
    LabelMap label;
};

inline SegReport iou_report(const UNet<float>& model, const std::vector<EvalExample>& eval_set,
                            std::vector<std::string> class_names = {}, std::uint64_t seed = 0) {
    if (eval_set.empty()) {
        throw std::invalid_argument("iou_report: empty evaluation set");
    }
    const int classes = model.config().out_channels;
    std::vector<LabelMap> preds(eval_set.size());
    std::vector<LabelMap> truths(eval_set.size());
    parallel_for(eval_set.size(), [&](std::size_t i) {
        NoGradGuard ng;
        auto scores = model.forward(image_to_tensor<float>(eval_set[i].image));
        preds[i] = argmax_prediction(scores);
        truths[i] = eval_set[i].label;
    });
    return iou_report_from_predictions(preds, truths, classes, std::move(class_names), seed);
}

// The k valid classes with the smallest IoU, ascending; ties by class id.
inline std::vector<int> lowest_k(const SegReport& report, int k) {
    if (k < 0 || k > report.num_classes()) {
        throw std::invalid_argument("lowest_k: k outside [0, class count]");
    }
    std::vector<int> ids;
    for (int c = 0; c < report.num_classes(); ++c) {
        if (report.valid[static_cast<std::size_t>(c)]) {
            ids.push_back(c);
        }
    }
    std::sort(ids.begin(), ids.end(), [&](int a, int b) {
        const double ia = report.iou[static_cast<std::size_t>(a)];
        const double ib = report.iou[static_cast<std::size_t>(b)];
        return ia < ib || (ia == ib && a < b);
    });
    if (static_cast<int>(ids.size()) > k) {
        ids.resize(static_cast<std::size_t>(k));
    }
    return ids;
}

// Arithmetic mean of per-class IoU and mIoU across runs. Class sets must
// match exactly; no silent realignment.
inline SegReport compare_runs(const std::vector<SegReport>& reports) {
    if (reports.empty()) {
        throw std::invalid_argument("compare_runs: no reports");
    }
    SegReport avg = reports.front();
    for (std::size_t i = 1; i < reports.size(); ++i) {
        const SegReport& r = reports[i];
        if (r.class_names != avg.class_names) {
            throw std::invalid_argument("compare_runs: class sets differ between reports");
        }
        if (r.valid != avg.valid) {
            throw std::invalid_argument("compare_runs: class validity differs between reports");
        }
        for (std::size_t c = 0; c < avg.iou.size(); ++c) {
            avg.iou[c] += r.iou[c];
            avg.intersection[c] += r.intersection[c];
            avg.unions[c] += r.unions[c];
        }
        avg.miou += r.miou;
        avg.miou_foreground += r.miou_foreground;
    }
    const double inv = 1.0 / static_cast<double>(reports.size());
    for (std::size_t c = 0; c < avg.iou.size(); ++c) {
        avg.iou[c] *= inv;
    }
    avg.miou *= inv;
    avg.miou_foreground *= inv;
    return avg;
}

inline void save_report_csv(const SegReport& r, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("report: cannot write " + path);
    }
    out << "class,intersection,union,iou\n";
    for (int c = 0; c < r.num_classes(); ++c) {
        out << r.class_names[static_cast<std::size_t>(c)] << ","
            << r.intersection[static_cast<std::size_t>(c)] << ","
            << r.unions[static_cast<std::size_t>(c)] << ",";
        if (r.valid[static_cast<std::size_t>(c)]) {
            out << r.iou[static_cast<std::size_t>(c)];
        } else {
            out << "undefined";
        }
        out << "\n";
    }
    out << "miou," << r.miou << "\n";
    out << "miou_foreground," << r.miou_foreground << "\n";
    out << "seed," << r.seed << "\n";
}

inline SegReport load_report_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("report: cannot open " + path);
    }
    SegReport r;
    std::string line;
    if (!std::getline(in, line) || line.rfind("class,", 0) != 0) {
        throw std::runtime_error("report: malformed header in " + path);
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        if (cells.size() == 2 && cells[0] == "miou") {
            r.miou = std::stod(cells[1]);
        } else if (cells.size() == 2 && cells[0] == "miou_foreground") {
            r.miou_foreground = std::stod(cells[1]);
        } else if (cells.size() == 2 && cells[0] == "seed") {
            r.seed = std::stoull(cells[1]);
        } else if (cells.size() == 4) {
            r.class_names.push_back(cells[0]);
            r.intersection.push_back(std::stoll(cells[1]));
            r.unions.push_back(std::stoll(cells[2]));
            const bool ok = cells[3] != "undefined";
            r.valid.push_back(ok);
            r.iou.push_back(ok ? std::stod(cells[3]) : 0.0);
        } else {
            throw std::runtime_error("report: malformed line '" + line + "' in " + path);
        }
    }
    return r;
}

}  // namespace smir
