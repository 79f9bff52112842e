#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "divseg/core.hpp"
#include "divseg/kv_config.hpp"
#include "divseg/rng.hpp"

namespace divseg {

struct AugmentOp {
    std::string name;
    double probability = 0.0;
    std::map<std::string, double> params;

    double param(const std::string& key, double fallback) const;
};

/// Ordered list of randomly applied transforms. Geometric ops warp image and
/// mask with the same transform (bilinear for the image, nearest for the
/// mask); photometric ops touch the image only.
///
/// Config form, one line per op in application order:
///   aug.<name> = <probability> [param=value ...]
struct AugmentationSpec {
    std::vector<AugmentOp> ops;

    void validate() const;
    static AugmentationSpec from_doc(const KeyValueDoc& doc);
    void write(KeyValueDoc& doc) const;

    // horizontal_flip, shift_scale_rotate, brightness_contrast,
    // gaussian_noise and blur at their default parameters.
    static AugmentationSpec standard();
};

// Every op name the parser accepts.
const std::vector<std::string>& known_augment_ops();

// Applies `spec` to a copy of the pair. Image values stay in [0,1] and mask
// labels stay within the mask's classes.
std::pair<ImageTensor, LabelMask> augment(const ImageTensor& image, const LabelMask& mask,
                                          const AugmentationSpec& spec, Rng& rng);

}  // namespace divseg
