#include "divseg/triunet.hpp"

#include <algorithm>
#include <cmath>
#include <future>

#include "divseg/error.hpp"

namespace divseg {
namespace {

NetworkSpec composite_spec(const TriUNetSpec& spec) {
    spec.validate();
    NetworkSpec out;
    out.arch_id = "triunet";
    out.in_channels = spec.net_a.in_channels;
    out.classes = spec.net_c.classes;
    out.depth = std::max({spec.net_a.depth, spec.net_b.depth, spec.net_c.depth});
    out.base_width = spec.net_a.base_width;
    out.seed = spec.net_a.seed;
    return out;
}

}  // namespace

void TriUNetSpec::validate() const {
    net_a.validate();
    net_b.validate();
    net_c.validate();
    if (net_a.in_channels != net_b.in_channels) {
        throw ConfigError("triunet: parallel branches must take the same input channels, net_a has " +
                          std::to_string(net_a.in_channels) + ", net_b has " + std::to_string(net_b.in_channels));
    }
    const int expected = net_a.classes + net_b.classes;
    if (net_c.in_channels != expected) {
        throw ConfigError("triunet: net_c.in_channels must equal net_a.classes + net_b.classes = " +
                          std::to_string(expected) + ", got " + std::to_string(net_c.in_channels));
    }
}

TriUNetSpec TriUNetSpec::from_network_spec(const NetworkSpec& spec) {
    TriUNetSpec out;
    out.net_a = spec;
    out.net_a.arch_id = "unet";
    out.net_b = out.net_a;
    out.net_b.seed = spec.seed + 1;
    out.net_c = out.net_a;
    out.net_c.in_channels = 2 * spec.classes;
    out.net_c.seed = spec.seed + 2;
    return out;
}

TriUNet::TriUNet(TriUNetSpec spec, NetworkPtr net_a, NetworkPtr net_b, NetworkPtr net_c)
    : SegmentationNetwork(composite_spec(spec)),
      tri_spec_(std::move(spec)),
      net_a_(register_module("net_a", std::move(net_a))),
      net_b_(register_module("net_b", std::move(net_b))),
      net_c_(register_module("net_c", std::move(net_c))) {}

int TriUNet::spatial_divisor() const {
    return std::max({net_a_->spatial_divisor(), net_b_->spatial_divisor(), net_c_->spatial_divisor()});
}

void TriUNet::describe(KeyValueDoc& doc) const {
    spec().write(doc);
    tri_spec_.net_a.write(doc, "net_a.");
    tri_spec_.net_b.write(doc, "net_b.");
    tri_spec_.net_c.write(doc, "net_c.");
}

std::pair<torch::Tensor, torch::Tensor> TriUNet::branch_logits(const torch::Tensor& batch) {
    if (!parallel_branches_) return {net_a_->forward(batch), net_b_->forward(batch)};
    // Grad mode is thread-local; carry the caller's setting over.
    const bool grad = torch::GradMode::is_enabled();
    auto second = std::async(std::launch::async, [&] {
        torch::AutoGradMode mode(grad);
        return net_b_->forward(batch);
    });
    auto first = net_a_->forward(batch);
    return {first, second.get()};
}

torch::Tensor TriUNet::run(const torch::Tensor& batch) {
    auto [v1, v2] = branch_logits(batch);
    return net_c_->forward(torch::cat({v1, v2}, 1));
}

std::shared_ptr<TriUNet> build_triunet(const TriUNetSpec& spec, const ArchRegistry& registry) {
    spec.validate();
    return std::make_shared<TriUNet>(spec, registry.build(spec.net_a), registry.build(spec.net_b),
                                     registry.build(spec.net_c));
}

TriUNetSpec read_triunet_spec(const KeyValueDoc& doc) {
    if (!doc.contains("net_a.arch_id")) {
        return TriUNetSpec::from_network_spec(NetworkSpec::read(doc));
    }
    TriUNetSpec spec{NetworkSpec::read(doc, "net_a."), NetworkSpec::read(doc, "net_b."),
                     NetworkSpec::read(doc, "net_c.")};
    spec.validate();
    return spec;
}

StepResult end_to_end_step(SegmentationNetwork& net, torch::optim::Optimizer& optimizer, const torch::Tensor& batch,
                           const torch::Tensor& labels, const DiceConfig& cfg) {
    net.train();
    optimizer.zero_grad();
    const auto probs = torch::softmax(net.forward(batch), 1);
    auto loss = single_channel_dice_loss(probs, labels, cfg);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) throw TrainingError("non-finite loss " + std::to_string(value));
    loss.backward();
    optimizer.step();
    return {value};
}

}  // namespace divseg
