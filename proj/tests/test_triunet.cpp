#include <filesystem>

#include <torch/torch.h>

#include "testing.hpp"
#include "divseg/checkpoint.hpp"
#include "divseg/error.hpp"
#include "divseg/triunet.hpp"

using namespace divseg;

namespace {

TriUNetSpec small_spec(std::uint64_t seed = 10) {
    NetworkSpec base;
    base.base_width = 4;
    base.depth = 3;
    base.seed = seed;
    return TriUNetSpec::from_network_spec(base);
}

torch::Tensor blob_labels(int size) {
    auto labels = torch::zeros({1, size, size}, torch::kLong);
    labels.index_put_({0, torch::indexing::Slice(size / 4, size / 2), torch::indexing::Slice(size / 4, 3 * size / 4)},
                      1);
    return labels;
}

double max_abs_delta(const torch::nn::Module& m, const std::map<std::string, torch::Tensor>& before,
                     const std::string& prefix) {
    double delta = 0.0;
    for (const auto& p : m.named_parameters()) {
        const auto d = (p.value() - before.at(prefix + p.key())).abs().max().item<double>();
        delta = std::max(delta, d);
    }
    return delta;
}

double eval_loss(TriUNet& net, const torch::Tensor& x, const torch::Tensor& labels) {
    torch::NoGradGuard no_grad;
    return single_channel_dice_loss(torch::softmax(net.forward(x), 1), labels, DiceConfig{}).item<double>();
}

}  // namespace

TEST_CASE("channel arithmetic is checked at build time") {
    auto spec = small_spec();
    spec.net_c.in_channels = 3;
    try {
        build_triunet(spec);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("= 4") != std::string::npos);
        CHECK(msg.find("got 3") != std::string::npos);
    }
    spec = small_spec();
    spec.net_b.in_channels = 1;
    CHECK_THROWS_AS(build_triunet(spec), ConfigError);

    auto three = small_spec();
    three.net_a.classes = 3;
    three.net_c.in_channels = 5;
    CHECK_NOTHROW(build_triunet(three));
}

TEST_CASE("seeds default to consecutive values") {
    const auto spec = small_spec(7);
    CHECK(spec.net_a.seed == 7);
    CHECK(spec.net_b.seed == 8);
    CHECK(spec.net_c.seed == 9);
    CHECK(spec.net_c.in_channels == 4);
}

TEST_CASE("forward shape and parameter count") {
    NetworkSpec base;
    base.base_width = 4;
    auto net = build_triunet(TriUNetSpec::from_network_spec(base));
    net->eval();
    torch::NoGradGuard no_grad;
    for (int size : {32, 64, 128}) {
        CHECK(net->forward(torch::rand({1, 3, size, size})).sizes() == torch::IntArrayRef({1, 2, size, size}));
    }
    CHECK(net->parameter_count() ==
          net->net_a().parameter_count() + net->net_b().parameter_count() + net->net_c().parameter_count());
    CHECK(default_registry().build([&] {
        auto s = base;
        s.arch_id = "triunet";
        return s;
    }())->spec().arch_id == "triunet");
}

TEST_CASE("parallel branches are not degenerate") {
    auto spec = small_spec();
    auto swapped = spec;
    std::swap(swapped.net_a.seed, swapped.net_b.seed);
    auto net = build_triunet(spec);
    auto other = build_triunet(swapped);
    net->eval();
    other->eval();
    torch::NoGradGuard no_grad;
    const auto x = torch::rand({1, 3, 32, 32});
    CHECK_FALSE(torch::equal(net->forward(x), other->forward(x)));

    auto same = spec;
    same.net_b.seed = same.net_a.seed;
    auto twin = build_triunet(same);
    twin->eval();
    const auto [v1, v2] = twin->branch_logits(x);
    CHECK(torch::equal(v1, v2));
}

TEST_CASE("parallel branch execution matches sequential") {
    auto net = build_triunet(small_spec());
    const auto x = torch::rand({2, 3, 32, 32});
    net->eval();
    torch::Tensor seq, par;
    {
        torch::NoGradGuard no_grad;
        seq = net->forward(x);
        net->set_parallel_branches(true);
        par = net->forward(x);
    }
    CHECK(torch::equal(seq, par));

    // Gradients flow through the threaded branch too.
    net->train();
    net->zero_grad();
    net->forward(x).sum().backward();
    bool any = false;
    for (const auto& p : net->net_b().parameters()) {
        if (p.grad().defined() && p.grad().abs().sum().item<double>() > 0.0) any = true;
    }
    CHECK(any);
}

TEST_CASE("one end-to-end step updates all three subnets") {
    auto net = build_triunet(small_spec());
    const auto x = torch::rand({1, 3, 32, 32});
    const auto labels = blob_labels(32);
    const auto before = snapshot_state(*net);

    net->train();
    double pre_loss;
    {
        torch::NoGradGuard no_grad;
        pre_loss = single_channel_dice_loss(torch::softmax(net->forward(x), 1), labels, DiceConfig{}).item<double>();
    }
    // The probe forward above only moved running statistics; restore them.
    {
        torch::NoGradGuard no_grad;
        for (auto& b : net->named_buffers()) b.value().copy_(before.at(b.key()));
    }

    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(1e-3));
    const auto step = end_to_end_step(*net, opt, x, labels, DiceConfig{});
    CHECK(step.loss > 0.0);
    CHECK(step.loss == doctest::Approx(pre_loss).epsilon(1e-12));

    CHECK(max_abs_delta(net->net_a(), before, "net_a.") > 0.0);
    CHECK(max_abs_delta(net->net_b(), before, "net_b.") > 0.0);
    CHECK(max_abs_delta(net->net_c(), before, "net_c.") > 0.0);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    auto net = build_triunet(small_spec());
    const auto before = snapshot_state(*net);
    torch::optim::SGD opt(net->parameters(), torch::optim::SGDOptions(0.0));
    end_to_end_step(*net, opt, torch::rand({1, 3, 32, 32}), blob_labels(32), DiceConfig{});
    for (const auto& p : net->named_parameters()) CHECK(torch::equal(p.value(), before.at(p.key())));
}

TEST_CASE("every subnet influences the loss") {
    auto net = build_triunet(small_spec());
    net->eval();
    const auto x = torch::rand({1, 3, 32, 32});
    const auto labels = blob_labels(32);
    const double base = eval_loss(*net, x, labels);
    for (auto* sub : {&net->net_a(), &net->net_b(), &net->net_c()}) {
        // Probe scalar parameters one at a time until one moves the loss.
        bool reached = false;
        for (auto& w : sub->parameters()) {
            {
                torch::NoGradGuard no_grad;
                w.view(-1)[0] += 0.5;
            }
            reached = eval_loss(*net, x, labels) != base;
            {
                torch::NoGradGuard no_grad;
                w.view(-1)[0] -= 0.5;
            }
            if (reached) break;
        }
        CHECK(reached);
    }
}

TEST_CASE("checkpoint round trip") {
    auto net = build_triunet(small_spec(3));
    net->eval();
    const auto dir = std::filesystem::temp_directory_path() / "divseg_test_triunet" / "ckpt";
    std::filesystem::remove_all(dir);
    CheckpointRecord record;
    record.arch_id = "triunet";
    record.epoch = 4;
    record.metrics["val_polyp_iou"] = 0.625;
    save_checkpoint(dir, *net, record);

    const auto loaded = load_checkpoint(dir);
    CHECK(loaded.record.epoch == 4);
    CHECK(loaded.record.metric("val_polyp_iou") == 0.625);
    auto* tri = dynamic_cast<TriUNet*>(loaded.network.get());
    REQUIRE(tri != nullptr);
    CHECK(tri->triunet_spec() == net->triunet_spec());

    torch::NoGradGuard no_grad;
    const auto x = torch::rand({1, 3, 32, 32});
    CHECK(torch::equal(net->forward(x), loaded.network->forward(x)));
}
