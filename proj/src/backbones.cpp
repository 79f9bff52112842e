#include "divseg/backbones.hpp"

#include <mutex>

#include "divseg/error.hpp"
#include "divseg/triunet.hpp"

namespace divseg {

namespace F = torch::nn::functional;

namespace {

class ConvBnReluImpl : public torch::nn::Module {
public:
    ConvBnReluImpl(int64_t in, int64_t out, int64_t kernel = 3, int64_t dilation = 1)
        : conv_(register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel)
                                                              .padding(dilation * (kernel / 2))
                                                              .dilation(dilation)
                                                              .bias(false)))),
          bn_(register_module("bn", torch::nn::BatchNorm2d(out))) {}

    torch::Tensor forward(const torch::Tensor& x) { return torch::relu(bn_->forward(conv_->forward(x))); }

private:
    torch::nn::Conv2d conv_;
    torch::nn::BatchNorm2d bn_;
};
TORCH_MODULE(ConvBnRelu);

class DoubleConvImpl : public torch::nn::Module {
public:
    DoubleConvImpl(int64_t in, int64_t out, int64_t dilation = 1)
        : first_(register_module("first", ConvBnRelu(in, out, 3, dilation))),
          second_(register_module("second", ConvBnRelu(out, out, 3, dilation))) {}

    torch::Tensor forward(const torch::Tensor& x) { return second_->forward(first_->forward(x)); }

private:
    ConvBnRelu first_;
    ConvBnRelu second_;
};
TORCH_MODULE(DoubleConv);

ConvBnRelu conv_bn_relu(int64_t in, int64_t out, int64_t kernel = 3, int64_t dilation = 1) {
    return ConvBnRelu(in, out, kernel, dilation);
}

DoubleConv double_conv(int64_t in, int64_t out, int64_t dilation = 1) { return DoubleConv(in, out, dilation); }

torch::Tensor upsample_to(const torch::Tensor& x, int64_t h, int64_t w) {
    if (x.size(2) == h && x.size(3) == w) return x;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

std::vector<int64_t> level_widths(const NetworkSpec& spec) {
    std::vector<int64_t> widths;
    for (int i = 0; i <= spec.depth; ++i) widths.push_back(static_cast<int64_t>(spec.base_width) << i);
    return widths;
}

// Plain UNet: double-conv encoder, transposed-conv upsampling, concatenated skips.
class UNet : public SegmentationNetwork {
public:
    explicit UNet(const NetworkSpec& spec) : SegmentationNetwork(spec) {
        const auto ch = level_widths(spec);
        for (int i = 0; i <= spec.depth; ++i) encoder_->push_back(double_conv(i == 0 ? spec.in_channels : ch[i - 1], ch[i]));
        for (int i = 0; i < spec.depth; ++i) {
            up_->push_back(torch::nn::ConvTranspose2d(torch::nn::ConvTranspose2dOptions(ch[i + 1], ch[i], 2).stride(2)));
            decoder_->push_back(double_conv(2 * ch[i], ch[i]));
        }
        head_ = torch::nn::Conv2d(torch::nn::Conv2dOptions(ch[0], spec.classes, 1));
        register_module("encoder", encoder_);
        register_module("up", up_);
        register_module("decoder", decoder_);
        register_module("head", head_);
    }

protected:
    torch::Tensor run(const torch::Tensor& batch) override {
        const int depth = spec().depth;
        std::vector<torch::Tensor> skips;
        auto x = batch;
        for (int i = 0; i <= depth; ++i) {
            x = encoder_[i]->as<DoubleConvImpl>()->forward(x);
            if (i < depth) {
                skips.push_back(x);
                x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
            }
        }
        for (int i = depth - 1; i >= 0; --i) {
            x = up_[i]->as<torch::nn::ConvTranspose2d>()->forward(x);
            x = decoder_[i]->as<DoubleConvImpl>()->forward(torch::cat({x, skips[i]}, 1));
        }
        return head_->forward(x);
    }

private:
    torch::nn::ModuleList encoder_;
    torch::nn::ModuleList up_;
    torch::nn::ModuleList decoder_;
    torch::nn::Conv2d head_{nullptr};
};

// UNet++: nested decoder nodes X(i,j) fed by every earlier node on row i
// and the upsampled node X(i+1,j-1).
class UNetPlusPlus : public SegmentationNetwork {
public:
    explicit UNetPlusPlus(const NetworkSpec& spec) : SegmentationNetwork(spec) {
        const auto ch = level_widths(spec);
        for (int i = 0; i <= spec.depth; ++i) encoder_->push_back(double_conv(i == 0 ? spec.in_channels : ch[i - 1], ch[i]));
        for (int j = 1; j <= spec.depth; ++j) {
            for (int i = 0; i + j <= spec.depth; ++i) {
                node_index_[{i, j}] = static_cast<int>(nodes_->size());
                nodes_->push_back(double_conv(j * ch[i] + ch[i + 1], ch[i]));
            }
        }
        head_ = torch::nn::Conv2d(torch::nn::Conv2dOptions(ch[0], spec.classes, 1));
        register_module("encoder", encoder_);
        register_module("nodes", nodes_);
        register_module("head", head_);
    }

protected:
    torch::Tensor run(const torch::Tensor& batch) override {
        const int depth = spec().depth;
        std::vector<std::vector<torch::Tensor>> grid(depth + 1);
        auto x = batch;
        for (int i = 0; i <= depth; ++i) {
            if (i > 0) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
            x = encoder_[i]->as<DoubleConvImpl>()->forward(x);
            grid[i].push_back(x);
        }
        for (int j = 1; j <= depth; ++j) {
            for (int i = 0; i + j <= depth; ++i) {
                std::vector<torch::Tensor> inputs(grid[i].begin(), grid[i].begin() + j);
                inputs.push_back(upsample_to(grid[i + 1][j - 1], grid[i][0].size(2), grid[i][0].size(3)));
                auto node = nodes_[node_index_.at({i, j})]->as<DoubleConvImpl>();
                grid[i].push_back(node->forward(torch::cat(inputs, 1)));
            }
        }
        return head_->forward(grid[0][depth]);
    }

private:
    torch::nn::ModuleList encoder_;
    torch::nn::ModuleList nodes_;
    std::map<std::pair<int, int>, int> node_index_;
    torch::nn::Conv2d head_{nullptr};
};

// Feature pyramid: lateral 1x1 projections, top-down nearest upsampling with
// addition, per-level 3x3 heads merged at half resolution.
class FPN : public SegmentationNetwork {
public:
    explicit FPN(const NetworkSpec& spec) : SegmentationNetwork(spec) {
        const auto ch = level_widths(spec);
        const int64_t pyramid = 2 * spec.base_width;
        const int64_t seg = spec.base_width;
        for (int i = 0; i <= spec.depth; ++i) encoder_->push_back(double_conv(i == 0 ? spec.in_channels : ch[i - 1], ch[i]));
        for (int i = 1; i <= spec.depth; ++i) {
            lateral_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(ch[i], pyramid, 1)));
            level_heads_->push_back(conv_bn_relu(pyramid, seg));
        }
        fuse_ = conv_bn_relu(seg + ch[0], seg);
        head_ = torch::nn::Conv2d(torch::nn::Conv2dOptions(seg, spec.classes, 1));
        register_module("encoder", encoder_);
        register_module("lateral", lateral_);
        register_module("level_heads", level_heads_);
        register_module("fuse", fuse_);
        register_module("head", head_);
    }

protected:
    torch::Tensor run(const torch::Tensor& batch) override {
        const int depth = spec().depth;
        std::vector<torch::Tensor> feats;
        auto x = batch;
        for (int i = 0; i <= depth; ++i) {
            if (i > 0) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
            x = encoder_[i]->as<DoubleConvImpl>()->forward(x);
            feats.push_back(x);
        }
        const int64_t half_h = feats[1].size(2);
        const int64_t half_w = feats[1].size(3);
        torch::Tensor top;
        torch::Tensor merged;
        for (int i = depth; i >= 1; --i) {
            auto p = lateral_[i - 1]->as<torch::nn::Conv2d>()->forward(feats[i]);
            if (top.defined()) {
                p = p + F::interpolate(top, F::InterpolateFuncOptions()
                                                .size(std::vector<int64_t>{p.size(2), p.size(3)})
                                                .mode(torch::kNearest));
            }
            top = p;
            auto s = upsample_to(level_heads_[i - 1]->as<ConvBnReluImpl>()->forward(p), half_h, half_w);
            merged = merged.defined() ? merged + s : s;
        }
        merged = upsample_to(merged, batch.size(2), batch.size(3));
        return head_->forward(fuse_->forward(torch::cat({merged, feats[0]}, 1)));
    }

private:
    torch::nn::ModuleList encoder_;
    torch::nn::ModuleList lateral_;
    torch::nn::ModuleList level_heads_;
    ConvBnRelu fuse_{nullptr};
    torch::nn::Conv2d head_{nullptr};
};

// Atrous spatial pyramid pooling with an image-level pooling branch. The
// pooling branch has no batch norm so a batch of one still trains.
class ASPPImpl : public torch::nn::Module {
public:
    ASPPImpl(int64_t in, int64_t out, const std::vector<int64_t>& rates) {
        branches_->push_back(conv_bn_relu(in, out, 1));
        for (auto r : rates) branches_->push_back(conv_bn_relu(in, out, 3, r));
        pool_ = torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)),
                                      torch::nn::ReLU(torch::nn::ReLUOptions(true)));
        project_ = conv_bn_relu(out * static_cast<int64_t>(rates.size() + 2), out, 1);
        register_module("branches", branches_);
        register_module("pool", pool_);
        register_module("project", project_);
    }

    torch::Tensor forward(const torch::Tensor& x) {
        std::vector<torch::Tensor> outs;
        for (const auto& b : *branches_) outs.push_back(b->as<ConvBnReluImpl>()->forward(x));
        auto pooled = pool_->forward(F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions(1)));
        outs.push_back(pooled.expand({-1, -1, x.size(2), x.size(3)}));
        return project_->forward(torch::cat(outs, 1));
    }

private:
    torch::nn::ModuleList branches_;
    torch::nn::Sequential pool_{nullptr};
    ConvBnRelu project_{nullptr};
};
TORCH_MODULE(ASPP);

// DeepLabv3 / v3+: at most two poolings, deeper levels use dilation instead
// of striding, ASPP on the deepest features. The plus variant adds a decoder
// that merges a half-resolution low-level feature map.
class DeepLab : public SegmentationNetwork {
public:
    DeepLab(const NetworkSpec& spec, bool with_decoder) : SegmentationNetwork(spec), with_decoder_(with_decoder) {
        pools_ = std::min(spec.depth, 2);
        std::vector<int64_t> ch;
        for (int i = 0; i <= spec.depth; ++i) ch.push_back(static_cast<int64_t>(spec.base_width) << std::min(i, 3));
        for (int i = 0; i <= spec.depth; ++i) {
            const int64_t dilation = i <= pools_ ? 1 : int64_t{1} << (i - pools_);
            encoder_->push_back(double_conv(i == 0 ? spec.in_channels : ch[i - 1], ch[i], dilation));
        }
        const int64_t width = 4 * spec.base_width;
        aspp_ = ASPP(ch[spec.depth], width, std::vector<int64_t>{2, 4, 6});
        register_module("encoder", encoder_);
        register_module("aspp", aspp_);
        if (with_decoder_) {
            low_level_ = std::max(pools_ - 1, 0);
            const int64_t reduced = spec.base_width;
            reduce_ = conv_bn_relu(ch[low_level_], reduced, 1);
            decoder_ = torch::nn::Sequential(conv_bn_relu(width + reduced, width), conv_bn_relu(width, width));
            register_module("reduce", reduce_);
            register_module("decoder", decoder_);
        } else {
            decoder_ = torch::nn::Sequential(conv_bn_relu(width, width));
            register_module("decoder", decoder_);
        }
        head_ = torch::nn::Conv2d(torch::nn::Conv2dOptions(width, spec.classes, 1));
        register_module("head", head_);
    }

protected:
    torch::Tensor run(const torch::Tensor& batch) override {
        std::vector<torch::Tensor> feats;
        auto x = batch;
        for (int i = 0; i <= spec().depth; ++i) {
            if (i > 0 && i <= pools_) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
            x = encoder_[i]->as<DoubleConvImpl>()->forward(x);
            feats.push_back(x);
        }
        x = aspp_->forward(x);
        if (with_decoder_) {
            const auto& low = feats[low_level_];
            x = upsample_to(x, low.size(2), low.size(3));
            x = decoder_->forward(torch::cat({x, reduce_->forward(low)}, 1));
        } else {
            x = decoder_->forward(x);
        }
        return upsample_to(head_->forward(x), batch.size(2), batch.size(3));
    }

private:
    bool with_decoder_;
    int pools_ = 0;
    int low_level_ = 0;
    torch::nn::ModuleList encoder_;
    ASPP aspp_{nullptr};
    ConvBnRelu reduce_{nullptr};
    torch::nn::Sequential decoder_{nullptr};
    torch::nn::Conv2d head_{nullptr};
};

std::mutex& seed_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

void NetworkSpec::validate() const {
    if (arch_id.empty()) throw ConfigError("arch_id must not be empty");
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1, got " + std::to_string(in_channels));
    if (classes < 2) throw ConfigError("classes must be >= 2, got " + std::to_string(classes));
    if (depth < 1) throw ConfigError("depth must be >= 1, got " + std::to_string(depth));
    if (depth > 8) throw ConfigError("depth must be <= 8, got " + std::to_string(depth));
    if (base_width < 1) throw ConfigError("base_width must be >= 1, got " + std::to_string(base_width));
}

void NetworkSpec::write(KeyValueDoc& doc, const std::string& prefix) const {
    doc.set(prefix + "arch_id", arch_id);
    doc.set(prefix + "in_channels", std::to_string(in_channels));
    doc.set(prefix + "classes", std::to_string(classes));
    doc.set(prefix + "depth", std::to_string(depth));
    doc.set(prefix + "base_width", std::to_string(base_width));
    doc.set(prefix + "seed", std::to_string(seed));
}

NetworkSpec NetworkSpec::read(const KeyValueDoc& doc, const std::string& prefix) {
    NetworkSpec spec;
    spec.arch_id = doc.require(prefix + "arch_id");
    spec.in_channels = doc.get_int(prefix + "in_channels", spec.in_channels);
    spec.classes = doc.get_int(prefix + "classes", spec.classes);
    spec.depth = doc.get_int(prefix + "depth", spec.depth);
    spec.base_width = doc.get_int(prefix + "base_width", spec.base_width);
    const auto seed = doc.get_string(prefix + "seed", "0");
    try {
        spec.seed = std::stoull(seed);
    } catch (const std::exception&) {
        throw ConfigError(doc.origin() + ": " + prefix + "seed: expected an unsigned integer, got '" + seed + "'");
    }
    return spec;
}

SegmentationNetwork::SegmentationNetwork(NetworkSpec spec) : spec_(std::move(spec)) { spec_.validate(); }

torch::Tensor SegmentationNetwork::forward(const torch::Tensor& batch) {
    if (batch.dim() != 4) throw ShapeError("expected a B×C×H×W batch, got " + std::to_string(batch.dim()) + " dims");
    if (batch.size(1) != spec_.in_channels) {
        throw ShapeError("batch has " + std::to_string(batch.size(1)) + " channels, network expects " +
                         std::to_string(spec_.in_channels));
    }
    const int divisor = spatial_divisor();
    if (batch.size(2) % divisor != 0) {
        throw ShapeError("height " + std::to_string(batch.size(2)) + " is not divisible by " + std::to_string(divisor));
    }
    if (batch.size(3) % divisor != 0) {
        throw ShapeError("width " + std::to_string(batch.size(3)) + " is not divisible by " + std::to_string(divisor));
    }
    return run(batch);
}

void SegmentationNetwork::describe(KeyValueDoc& doc) const { spec_.write(doc); }

std::int64_t SegmentationNetwork::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
}

void ArchRegistry::register_arch(const std::string& arch_id, NetworkBuilder builder) {
    if (arch_id.empty()) throw ConfigError("architecture id must not be empty");
    if (!builders_.emplace(arch_id, std::move(builder)).second) {
        throw ConfigError("architecture '" + arch_id + "' is already registered");
    }
}

bool ArchRegistry::contains(const std::string& arch_id) const { return builders_.count(arch_id) > 0; }

std::vector<std::string> ArchRegistry::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : builders_) out.push_back(id);
    return out;
}

NetworkPtr ArchRegistry::build(const NetworkSpec& spec) const {
    spec.validate();
    const auto it = builders_.find(spec.arch_id);
    if (it == builders_.end()) {
        std::string known;
        for (const auto& id : ids()) known += (known.empty() ? "" : ", ") + id;
        throw ConfigError("unknown architecture '" + spec.arch_id + "' (known: " + known + ")");
    }
    return it->second(spec);
}

void register_backbones(ArchRegistry& registry) {
    registry.register_arch("unet", [](const NetworkSpec& s) {
        return build_seeded(s.seed, [&] { return std::make_shared<UNet>(s); });
    });
    registry.register_arch("unetpp", [](const NetworkSpec& s) {
        return build_seeded(s.seed, [&] { return std::make_shared<UNetPlusPlus>(s); });
    });
    registry.register_arch("fpn", [](const NetworkSpec& s) {
        return build_seeded(s.seed, [&] { return std::make_shared<FPN>(s); });
    });
    registry.register_arch("deeplabv3", [](const NetworkSpec& s) {
        return build_seeded(s.seed, [&] { return std::make_shared<DeepLab>(s, false); });
    });
    registry.register_arch("deeplabv3plus", [](const NetworkSpec& s) {
        return build_seeded(s.seed, [&] { return std::make_shared<DeepLab>(s, true); });
    });
}

const ArchRegistry& default_registry() {
    static const ArchRegistry registry = [] {
        ArchRegistry r;
        register_backbones(r);
        r.register_arch("triunet", [](const NetworkSpec& s) { return build_triunet(TriUNetSpec::from_network_spec(s)); });
        return r;
    }();
    return registry;
}

NetworkPtr build_network(const NetworkSpec& spec) { return default_registry().build(spec); }

NetworkPtr build_seeded(std::uint64_t seed, const std::function<NetworkPtr()>& make) {
    std::lock_guard lock(seed_mutex());
    torch::manual_seed(seed);
    return make();
}

std::map<std::string, torch::Tensor> snapshot_state(const torch::nn::Module& module) {
    std::map<std::string, torch::Tensor> out;
    torch::NoGradGuard no_grad;
    for (const auto& p : module.named_parameters()) out.emplace(p.key(), p.value().detach().clone());
    for (const auto& b : module.named_buffers()) out.emplace(b.key(), b.value().detach().clone());
    return out;
}

}  // namespace divseg
