#include <string>

#include <torch/torch.h>

#include "testing.hpp"
#include "divseg/backbones.hpp"
#include "divseg/error.hpp"
#include "divseg/loss.hpp"

using namespace divseg;

namespace {

const std::vector<std::string> kSingleArchs = {"unet", "unetpp", "fpn", "deeplabv3", "deeplabv3plus"};

NetworkSpec small_spec(const std::string& arch, std::uint64_t seed = 0) {
    NetworkSpec s;
    s.arch_id = arch;
    s.base_width = 8;
    s.seed = seed;
    return s;
}

bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b) {
    const auto pa = a.named_parameters();
    const auto pb = b.named_parameters();
    if (pa.size() != pb.size()) return false;
    for (const auto& p : pa) {
        if (!torch::equal(p.value(), pb[p.key()])) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("registry basics") {
    ArchRegistry reg;
    reg.register_arch("unet", [](const NetworkSpec& s) { return build_network(s); });
    CHECK(reg.build(small_spec("unet"))->spec().arch_id == "unet");
    CHECK_THROWS_AS(reg.register_arch("unet", [](const NetworkSpec& s) { return build_network(s); }), ConfigError);

    reg.register_arch("fpn", [](const NetworkSpec& s) { return build_network(s); });
    CHECK(reg.ids() == std::vector<std::string>{"fpn", "unet"});
    CHECK_THROWS_AS(reg.build(small_spec("segformer")), ConfigError);

    for (const auto& id : kSingleArchs) CHECK(default_registry().contains(id));
    CHECK(default_registry().contains("triunet"));
}

TEST_CASE("spec validation") {
    auto s = small_spec("unet");
    s.classes = 1;
    CHECK_THROWS_AS(build_network(s), ConfigError);
    s = small_spec("unet");
    s.in_channels = 0;
    CHECK_THROWS_AS(build_network(s), ConfigError);
}

TEST_CASE("shape contract for every architecture") {
    torch::NoGradGuard no_grad;
    for (const auto& id : kSingleArchs) {
        CAPTURE(id);
        auto net = build_network(small_spec(id));
        net->eval();
        for (int size : {32, 64, 128}) {
            const auto out = net->forward(torch::rand({1, 3, size, size}));
            CHECK(out.sizes() == torch::IntArrayRef({1, 2, size, size}));
            CHECK(torch::isfinite(out).all().item<bool>());
        }
        const auto x = torch::rand({2, 3, 32, 64});
        CHECK(torch::equal(net->forward(x), net->forward(x)));
        CHECK(torch::isfinite(net->forward(torch::zeros({1, 3, 32, 32}))).all().item<bool>());
    }
}

TEST_CASE("default unet example") {
    NetworkSpec s;
    auto net = build_network(s);
    net->eval();
    torch::NoGradGuard no_grad;
    CHECK(net->forward(torch::rand({1, 3, 64, 64})).sizes() == torch::IntArrayRef({1, 2, 64, 64}));
}

TEST_CASE("initialisation is a function of the seed") {
    for (const auto& id : kSingleArchs) {
        CAPTURE(id);
        auto a = build_network(small_spec(id, 5));
        auto b = build_network(small_spec(id, 5));
        auto c = build_network(small_spec(id, 6));
        CHECK(same_parameters(*a, *b));
        CHECK_FALSE(same_parameters(*a, *c));
    }
}

TEST_CASE("forward rejects bad shapes") {
    auto net = build_network(small_spec("unet"));
    try {
        net->forward(torch::rand({1, 3, 40, 32}));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("height 40") != std::string::npos);
    }
    try {
        net->forward(torch::rand({1, 3, 32, 36}));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("width 36") != std::string::npos);
    }
    CHECK_THROWS_AS(net->forward(torch::rand({1, 1, 32, 32})), ShapeError);
    CHECK_THROWS_AS(net->forward(torch::rand({3, 32, 32})), ShapeError);
}

TEST_CASE("one gradient step touches every parameter group") {
    for (const auto& id : kSingleArchs) {
        CAPTURE(id);
        auto net = build_network(small_spec(id, 3));
        net->train();
        const auto before = snapshot_state(*net);
        torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(1e-3));
        const auto x = torch::rand({1, 3, 32, 32});
        auto labels = torch::zeros({1, 32, 32}, torch::kLong);
        labels.index_put_({0, torch::indexing::Slice(8, 20), torch::indexing::Slice(8, 24)}, 1);
        const auto loss = single_channel_dice_loss(torch::softmax(net->forward(x), 1), labels, DiceConfig{});
        CHECK(loss.item<double>() > 0.0);
        opt.zero_grad();
        loss.backward();
        opt.step();

        for (const auto& child : net->named_children()) {
            CAPTURE(child.key());
            bool changed = false;
            for (const auto& p : child.value()->named_parameters()) {
                const auto& old = before.at(child.key() + "." + p.key());
                if (!torch::equal(old, p.value())) changed = true;
            }
            if (!child.value()->parameters().empty()) CHECK(changed);
        }
    }
}
