#pragma once

#include <cstdint>
#include <filesystem>

#include "divseg/core.hpp"
#include "divseg/kv_config.hpp"
#include "divseg/manifest.hpp"

namespace divseg {

/// Synthetic polyp-like data: smooth tinted background with noise and
/// brighter, colour-shifted irregular ellipses. Masks are the exact blob
/// supports.
struct SynthConfig {
    int count = 100;
    int image_size = 64;
    std::uint64_t seed = 0;
    int blobs_max = 3;         // positives get 1..blobs_max blobs
    double radius_min = 0.08;  // semi-axis, fraction of image size
    double radius_max = 0.22;
    double negative_fraction = 0.2;
    double noise = 0.06;       // std-dev of additive Gaussian texture noise
    int validation_count = 0;
    int test_count = 0;        // the remaining images are train

    void validate() const;
    static SynthConfig from_doc(const KeyValueDoc& doc);
    void write(KeyValueDoc& doc) const;

    int negative_count() const;
};

// Largest relative radial wobble applied to a blob outline.
inline constexpr double kBlobWobble = 0.15;

struct SynthSample {
    ImageTensor image;
    LabelMask mask;
    bool negative = false;
};

// Renders sample `index` of the dataset described by cfg.
SynthSample render_sample(const SynthConfig& cfg, int index, bool negative);

// Which indices are negatives; exactly cfg.negative_count() of them.
std::vector<bool> negative_assignment(const SynthConfig& cfg);

// Writes out_dir/images/NNNNN.png, out_dir/masks/NNNNN.png (every image gets
// a mask file; negatives are all background), out_dir/manifest.tsv and
// out_dir/synth.txt.
DatasetManifest generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace divseg
