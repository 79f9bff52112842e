#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "divseg/kv_config.hpp"

namespace divseg {

struct NetworkSpec {
    std::string arch_id = "unet";
    int in_channels = 3;
    int classes = 2;
    int depth = 4;
    int base_width = 16;
    std::uint64_t seed = 0;

    void validate() const;
    void write(KeyValueDoc& doc, const std::string& prefix = "") const;
    static NetworkSpec read(const KeyValueDoc& doc, const std::string& prefix = "");

    bool operator==(const NetworkSpec&) const = default;
};

/// Common forward contract: B×in_channels×H×W images to B×classes×H×W logits.
/// H and W must be divisible by spatial_divisor().
class SegmentationNetwork : public torch::nn::Module {
public:
    explicit SegmentationNetwork(NetworkSpec spec);

    const NetworkSpec& spec() const noexcept { return spec_; }

    // Validates the batch shape, then runs the network.
    torch::Tensor forward(const torch::Tensor& batch);

    virtual int spatial_divisor() const { return 1 << spec_.depth; }

    // Checkpoint metadata describing how to rebuild this network.
    virtual void describe(KeyValueDoc& doc) const;

    std::int64_t parameter_count() const;

protected:
    virtual torch::Tensor run(const torch::Tensor& batch) = 0;

private:
    NetworkSpec spec_;
};

using NetworkPtr = std::shared_ptr<SegmentationNetwork>;
using NetworkBuilder = std::function<NetworkPtr(const NetworkSpec&)>;

class ArchRegistry {
public:
    // Throws ConfigError on a duplicate id.
    void register_arch(const std::string& arch_id, NetworkBuilder builder);

    bool contains(const std::string& arch_id) const;
    std::vector<std::string> ids() const;

    // Validates the spec and builds with parameters initialised from spec.seed.
    NetworkPtr build(const NetworkSpec& spec) const;

private:
    std::map<std::string, NetworkBuilder> builders_;
};

// Registry holding unet, unetpp, fpn, deeplabv3, deeplabv3plus and triunet.
const ArchRegistry& default_registry();

// Adds the five single-network architectures to `registry`.
void register_backbones(ArchRegistry& registry);

NetworkPtr build_network(const NetworkSpec& spec);

// Runs `make` with the global torch RNG seeded from `seed`, serialised
// across threads so concurrent builds stay deterministic.
NetworkPtr build_seeded(std::uint64_t seed, const std::function<NetworkPtr()>& make);

// Flat name -> tensor snapshot of parameters and buffers.
std::map<std::string, torch::Tensor> snapshot_state(const torch::nn::Module& module);

}  // namespace divseg
