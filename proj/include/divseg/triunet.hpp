#pragma once

#include <memory>

#include <torch/torch.h>

#include "divseg/backbones.hpp"
#include "divseg/loss.hpp"

namespace divseg {

/// Two parallel networks whose logits are concatenated along channels and
/// fed to a third network.
struct TriUNetSpec {
    NetworkSpec net_a;
    NetworkSpec net_b;
    NetworkSpec net_c;

    // Throws ConfigError when the channel arithmetic does not close.
    void validate() const;

    // UNet branches with seeds (seed, seed+1, seed+2); branch outputs have
    // spec.classes channels each.
    static TriUNetSpec from_network_spec(const NetworkSpec& spec);

    bool operator==(const TriUNetSpec&) const = default;
};

class TriUNet : public SegmentationNetwork {
public:
    TriUNet(TriUNetSpec spec, NetworkPtr net_a, NetworkPtr net_b, NetworkPtr net_c);

    const TriUNetSpec& triunet_spec() const noexcept { return tri_spec_; }

    int spatial_divisor() const override;
    void describe(KeyValueDoc& doc) const override;

    // Raw branch outputs V1, V2 for a batch.
    std::pair<torch::Tensor, torch::Tensor> branch_logits(const torch::Tensor& batch);

    // Runs the two branches on separate threads. Results are identical to
    // the sequential path.
    void set_parallel_branches(bool enabled) noexcept { parallel_branches_ = enabled; }

    SegmentationNetwork& net_a() { return *net_a_; }
    SegmentationNetwork& net_b() { return *net_b_; }
    SegmentationNetwork& net_c() { return *net_c_; }

protected:
    torch::Tensor run(const torch::Tensor& batch) override;

private:
    TriUNetSpec tri_spec_;
    NetworkPtr net_a_;
    NetworkPtr net_b_;
    NetworkPtr net_c_;
    bool parallel_branches_ = false;
};

std::shared_ptr<TriUNet> build_triunet(const TriUNetSpec& spec, const ArchRegistry& registry = default_registry());

// Rebuilds the composite spec from checkpoint metadata written by describe().
TriUNetSpec read_triunet_spec(const KeyValueDoc& doc);

/// Result of one optimisation step on the whole composite.
struct StepResult {
    double loss = 0.0;
};

// Forward, softmax over classes, single-channel Dice on cfg.target_class,
// backward through all three subnets, one optimizer step. The returned loss
// is the value at the pre-step forward.
StepResult end_to_end_step(SegmentationNetwork& net, torch::optim::Optimizer& optimizer, const torch::Tensor& batch,
                           const torch::Tensor& labels, const DiceConfig& cfg);

}  // namespace divseg
