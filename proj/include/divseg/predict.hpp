#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

#include "divseg/backbones.hpp"
#include "divseg/checkpoint.hpp"
#include "divseg/core.hpp"

namespace divseg {

torch::Tensor images_to_batch(std::span<const ImageTensor> images);
torch::Tensor masks_to_labels(std::span<const LabelMask> masks);
LogitMap logits_from_batch(const torch::Tensor& logits, int64_t index);

// Resizes each image to working_size×working_size, runs the network in
// evaluation mode and returns per-pixel softmax maps at the working size.
std::vector<ProbMap> predict_working_probs(SegmentationNetwork& net, std::span<const ImageTensor> images,
                                           int working_size, int batch_size = 16);

// Same, with the maps resized back (bilinear) to each image's own size.
std::vector<ProbMap> predict_probs(SegmentationNetwork& net, std::span<const ImageTensor> images, int working_size,
                                   int batch_size = 16);

// Hard masks at the original resolutions.
std::vector<LabelMask> predict(SegmentationNetwork& net, std::span<const ImageTensor> images, int working_size,
                               int batch_size = 16);
std::vector<LabelMask> predict(const LoadedCheckpoint& checkpoint, std::span<const ImageTensor> images,
                               int working_size, int batch_size = 16);

}  // namespace divseg
