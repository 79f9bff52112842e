#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "divseg/checkpoint.hpp"
#include "divseg/core.hpp"

namespace divseg {

enum class FusionMode { SoftMean, HardVote };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

/// Ordered ensemble members plus fusion settings. Serialised as a key-value
/// manifest with one `member = <checkpoint path>` line per member.
struct EnsembleSpec {
    std::vector<std::filesystem::path> members;
    FusionMode mode = FusionMode::SoftMean;
    double threshold = 0.5;  // foreground when mean probability >= threshold
    int working_size = 256;

    void validate() const;
    void save(const std::filesystem::path& path) const;
    static EnsembleSpec load(const std::filesystem::path& path);
};

// Per-pixel, per-class arithmetic mean. The result does not depend on the
// order of `maps`.
ProbMap mean_probs(std::span<const ProbMap> maps);

// Binary: foreground where the mean foreground probability >= threshold.
// More classes: argmax of the mean, ties to the lowest class.
LabelMask threshold_mean(const ProbMap& mean, double threshold = 0.5);
LabelMask fuse_soft(std::span<const ProbMap> maps, double threshold = 0.5);

// Per-pixel mean of binary votes rounded half-up (2 * votes >= members).
LabelMask fuse_hard(std::span<const LabelMask> masks);

/// Loaded ensemble ready for inference.
class DivergentNets {
public:
    // Loads every member; failures name the member path.
    explicit DivergentNets(EnsembleSpec spec);

    const EnsembleSpec& spec() const noexcept { return spec_; }
    const std::vector<LoadedCheckpoint>& members() const noexcept { return members_; }

    // Masks at each image's original resolution.
    std::vector<LabelMask> predict(std::span<const ImageTensor> images) const;
    LabelMask predict(const ImageTensor& image) const;

private:
    EnsembleSpec spec_;
    std::vector<LoadedCheckpoint> members_;
};

LabelMask divergentnets_predict(const ImageTensor& image, const EnsembleSpec& spec);

}  // namespace divseg
