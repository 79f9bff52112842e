#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "divseg/augment.hpp"
#include "divseg/backbones.hpp"
#include "divseg/checkpoint.hpp"
#include "divseg/kv_config.hpp"
#include "divseg/manifest.hpp"

namespace divseg {

enum class KeepCheckpoints { All, Best };

struct TrainConfig {
    int epochs = 200;
    int batch_size = 8;
    int working_size = 256;
    double lr_initial = 1e-4;
    double lr_reduced = 1e-5;
    int lr_switch_epoch = 50;  // last epoch trained at lr_initial
    std::uint64_t seed = 0;
    int target_class = 1;
    double dice_smoothing = 1.0;
    std::string selection_metric = "val_polyp_iou";
    KeepCheckpoints keep = KeepCheckpoints::All;

    void validate() const;
    static TrainConfig from_doc(const KeyValueDoc& doc);
    void write(KeyValueDoc& doc) const;
};

// Step schedule: lr_initial for epochs 1..lr_switch_epoch, lr_reduced after.
// `epoch` is 1-based and must lie in [1, cfg.epochs].
double lr_at_epoch(int epoch, const TrainConfig& cfg);

struct EpochSummary {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;  // mean Dice loss over the epoch's batches
    std::map<std::string, double> validation;
};

struct TrainResult {
    std::vector<CheckpointRecord> records;
    CheckpointRecord best;
    std::vector<EpochSummary> epochs;
};

struct TrainOptions {
    // Where checkpoints, records.tsv and the `best` marker go. Without it
    // nothing is written and the best weights are restored in memory.
    std::optional<std::filesystem::path> out_dir;
    std::function<void(const EpochSummary&)> on_epoch;
};

// Validation metrics computed each epoch, all in [0,1]:
//   val_polyp_iou, val_polyp_f1, val_dice_score
std::map<std::string, double> validation_metrics(SegmentationNetwork& net, std::span<const Sample> samples,
                                                 const TrainConfig& cfg);

// The highest value of `metric`; ties go to the earliest epoch.
const CheckpointRecord& select_best(const std::vector<CheckpointRecord>& records, const std::string& metric);

TrainResult train(SegmentationNetwork& net, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& validation_set, const TrainConfig& cfg,
                  const AugmentationSpec& augmentation, const TrainOptions& options = {});

TrainResult train(SegmentationNetwork& net, const DatasetManifest& manifest, const TrainConfig& cfg,
                  const AugmentationSpec& augmentation, const TrainOptions& options = {});

}  // namespace divseg
