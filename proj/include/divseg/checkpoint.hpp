#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "divseg/backbones.hpp"

namespace divseg {

/// One saved training snapshot. `metrics` holds validation values in [0,1]
/// keyed by name (e.g. "val_polyp_iou").
struct CheckpointRecord {
    std::string arch_id;
    int epoch = 0;
    std::map<std::string, double> metrics;
    std::filesystem::path location;  // checkpoint directory; empty if weights were not kept

    double metric(const std::string& name) const;
};

// A checkpoint directory holds:
//   checkpoint.txt  key = value metadata (network spec, epoch, metric.<name>, weights)
//   weights.pt      parameters and buffers in libtorch archive format
inline constexpr const char* kCheckpointMetaFile = "checkpoint.txt";
inline constexpr const char* kCheckpointWeightsFile = "weights.pt";

void save_checkpoint(const std::filesystem::path& dir, SegmentationNetwork& net, const CheckpointRecord& record);

struct LoadedCheckpoint {
    NetworkPtr network;  // in evaluation mode
    CheckpointRecord record;
};

// Accepts a checkpoint directory, or a training output directory containing a
// `best` marker file naming the checkpoint subdirectory.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ArchRegistry& registry = default_registry());

std::filesystem::path resolve_checkpoint_dir(const std::filesystem::path& path);

}  // namespace divseg
