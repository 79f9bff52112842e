#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "divseg/core.hpp"
#include "divseg/kv_config.hpp"

namespace divseg {

/// K×K pixel confusion matrix, rows = ground truth, columns = prediction.
class ConfusionCounts {
public:
    explicit ConfusionCounts(int classes = 2);

    int classes() const noexcept { return classes_; }
    std::uint64_t cell(int gt, int pred) const { return cells_[static_cast<std::size_t>(gt) * classes_ + pred]; }
    void add(int gt, int pred, std::uint64_t n = 1);

    std::uint64_t tp(int c) const;
    std::uint64_t fp(int c) const;
    std::uint64_t fn(int c) const;
    std::uint64_t tn(int c) const;
    std::uint64_t total() const;

    ConfusionCounts& operator+=(const ConfusionCounts& other);
    bool operator==(const ConfusionCounts&) const = default;

private:
    int classes_;
    std::vector<std::uint64_t> cells_;
};

ConfusionCounts confusion(const LabelMask& pred, const LabelMask& gt, int classes);

struct ClassMetrics {
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double f2 = 0.0;
};

struct AllClassMetrics {
    double iou = 0.0;
    double f1 = 0.0;
    double recall = 0.0;
    double precision = 0.0;
};

// Conventions for empty denominators:
//   class absent in both prediction and ground truth -> every metric 1.0
//   otherwise a 0/0 precision or recall is 0.0
ClassMetrics per_class_metrics(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn);
ClassMetrics per_class_metrics(const ConfusionCounts& counts, int c);

// Micro average over pooled per-class counts. Precision, recall and F1 all
// reduce to pixel accuracy.
AllClassMetrics all_class_metrics(const ConfusionCounts& counts);

struct ImageScore {
    std::string image;
    double f1 = 0.0;
    double f2 = 0.0;
    double ppv = 0.0;
    double recall = 0.0;

    double score() const { return (f1 + f2 + ppv + recall) / 4.0; }
};

struct ChallengeScore {
    double mean = 0.0;
    double sd = 0.0;  // population standard deviation
};

ChallengeScore challenge_score(std::span<const ImageScore> images);
ImageScore image_score(const std::string& name, const LabelMask& pred, const LabelMask& gt, int polyp_class = 1);

struct MetricsReport {
    int classes = 2;
    int polyp_class = 1;
    ConfusionCounts counts{2};
    std::vector<ClassMetrics> per_class;
    AllClassMetrics all;
    ChallengeScore challenge;
    std::vector<ImageScore> images;

    KeyValueDoc to_doc() const;
    std::string images_csv() const;
    // Table with IoU/F1/REC/PREC per class and for all classes, then the
    // challenge score.
    std::string table() const;

    void save(const std::filesystem::path& report_path) const;
};

// Accumulates per-image confusion into a dataset report.
class MetricsAccumulator {
public:
    explicit MetricsAccumulator(int classes = 2, int polyp_class = 1);

    void add(const std::string& name, const LabelMask& pred, const LabelMask& gt);
    MetricsReport report() const;

private:
    int classes_;
    int polyp_class_;
    ConfusionCounts pooled_;
    std::vector<ImageScore> images_;
};

MetricsReport evaluate_masks(std::span<const std::string> names, std::span<const LabelMask> preds,
                             std::span<const LabelMask> gts, int classes, int polyp_class = 1);

// Pairs mask files by filename stem. Fails listing every unmatched name.
MetricsReport evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                               int classes, int polyp_class = 1);

}  // namespace divseg
