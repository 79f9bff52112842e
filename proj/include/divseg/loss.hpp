#pragma once

#include <vector>

#include <torch/torch.h>

#include "divseg/core.hpp"

namespace divseg {

/// Which class channel the Dice is computed on, plus the additive smoothing
/// term placed in both numerator and denominator.
struct DiceConfig {
    int target_class = 1;
    double smoothing = 1.0;

    void validate(int classes) const;
};

// Sums that the soft Dice is built from. Over a batch they are pooled across
// every image before the ratio is taken.
struct DiceTerms {
    double intersection = 0.0;  // sum p_n * g_n
    double pred_sum = 0.0;      // sum p_n
    double gt_sum = 0.0;        // sum g_n

    double score(double smoothing) const;
};

DiceTerms dice_terms(const ProbMap& pred, const LabelMask& gt, const DiceConfig& cfg);

// (2 * sum p_n g_n + eps) / (sum p_n + sum g_n + eps). Only channel n of
// `pred` is read. When the denominator is zero (eps = 0 and nothing on
// channel n anywhere) the score is 1.
double single_channel_dice_score(const ProbMap& pred, const LabelMask& gt, const DiceConfig& cfg);
double single_channel_dice_loss(const ProbMap& pred, const LabelMask& gt, const DiceConfig& cfg);

// d loss / d pred, laid out like pred (K×H×W). Non-target channels are zero.
std::vector<double> single_channel_dice_loss_grad(const ProbMap& pred, const LabelMask& gt,
                                                  const DiceConfig& cfg);

// Batch form used for training: probs is B×K×H×W floating point, labels is
// B×H×W int64. One global Dice over the whole batch. Differentiable in
// probs through a hand-written backward.
torch::Tensor single_channel_dice_loss(const torch::Tensor& probs, const torch::Tensor& labels,
                                       const DiceConfig& cfg);

}  // namespace divseg
