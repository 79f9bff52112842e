#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "testing.hpp"
#include "divseg/checkpoint.hpp"
#include "divseg/ensemble.hpp"
#include "divseg/error.hpp"
#include "divseg/predict.hpp"

using namespace divseg;

namespace fs = std::filesystem;

namespace {

ProbMap fg_probs(int h, int w, const std::vector<double>& fg) {
    std::vector<double> d(2 * fg.size());
    for (std::size_t i = 0; i < fg.size(); ++i) {
        d[i] = 1.0 - fg[i];
        d[fg.size() + i] = fg[i];
    }
    return ProbMap(2, h, w, std::move(d));
}

LabelMask pixel(int label) { return LabelMask(1, 1, 2, label); }

ProbMap random_probs(int k, int h, int w, std::mt19937& gen) {
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::vector<double> d(static_cast<std::size_t>(k) * h * w);
    for (auto& v : d) v = u(gen);
    return softmax_over_classes(LogitMap(k, h, w, d));
}

fs::path saved_member(const fs::path& dir, std::uint64_t seed) {
    NetworkSpec s;
    s.base_width = 4;
    s.depth = 3;
    s.seed = seed;
    auto net = build_network(s);
    net->eval();
    CheckpointRecord r;
    r.arch_id = s.arch_id;
    r.epoch = 1;
    save_checkpoint(dir, *net, r);
    return dir;
}

std::vector<ImageTensor> random_images(int n, std::mt19937& gen) {
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<ImageTensor> out;
    for (int i = 0; i < n; ++i) {
        ImageTensor img(20 + 3 * i, 27 - i, 3);
        for (auto& v : img.data()) v = u(gen);
        out.push_back(img);
    }
    return out;
}

}  // namespace

TEST_CASE("soft fusion examples") {
    const std::vector<ProbMap> three = {fg_probs(1, 1, {0.2}), fg_probs(1, 1, {0.9}), fg_probs(1, 1, {0.7})};
    CHECK(fuse_soft(three).at(0, 0) == 1);
    const std::vector<ProbMap> two = {fg_probs(1, 1, {0.4}), fg_probs(1, 1, {0.6})};
    CHECK(mean_probs(two).at(1, 0, 0) == 0.5);
    CHECK(fuse_soft(two).at(0, 0) == 1);
    const std::vector<ProbMap> low = {fg_probs(1, 1, {0.4}), fg_probs(1, 1, {0.5})};
    CHECK(fuse_soft(low).at(0, 0) == 0);
}

TEST_CASE("hard fusion examples") {
    std::vector<LabelMask> five = {pixel(1), pixel(0), pixel(1), pixel(0), pixel(1)};
    CHECK(fuse_hard(five).at(0, 0) == 1);
    std::vector<LabelMask> four = {pixel(1), pixel(0), pixel(0), pixel(1)};
    CHECK(fuse_hard(four).at(0, 0) == 1);
    std::vector<LabelMask> four_low = {pixel(1), pixel(0), pixel(0), pixel(0)};
    CHECK(fuse_hard(four_low).at(0, 0) == 0);
}

TEST_CASE("hard fusion is majority vote on every vote pattern") {
    for (int n : {3, 5}) {
        for (int pattern = 0; pattern < (1 << n); ++pattern) {
            std::vector<LabelMask> masks;
            int ones = 0;
            for (int m = 0; m < n; ++m) {
                const int bit = (pattern >> m) & 1;
                ones += bit;
                masks.push_back(pixel(bit));
            }
            CHECK(fuse_hard(masks).at(0, 0) == (ones > n - ones ? 1 : 0));
        }
    }
}

TEST_CASE("fusion does not depend on member order") {
    std::mt19937 gen(99);
    std::vector<ProbMap> maps;
    std::vector<ProbMap> maps3;
    std::vector<LabelMask> masks;
    for (int m = 0; m < 5; ++m) {
        maps.push_back(random_probs(2, 9, 7, gen));
        maps3.push_back(random_probs(3, 9, 7, gen));
        masks.push_back(argmax_mask(maps.back()));
    }
    const auto soft = fuse_soft(maps);
    const auto soft3 = fuse_soft(maps3);
    const auto mean = mean_probs(maps);
    const auto hard = fuse_hard(masks);
    std::vector<int> order(5);
    std::iota(order.begin(), order.end(), 0);
    for (int trial = 0; trial < 100; ++trial) {
        std::shuffle(order.begin(), order.end(), gen);
        std::vector<ProbMap> pm, pm3;
        std::vector<LabelMask> lm;
        for (int i : order) {
            pm.push_back(maps[i]);
            pm3.push_back(maps3[i]);
            lm.push_back(masks[i]);
        }
        CHECK(mean_probs(pm) == mean);
        CHECK(fuse_soft(pm) == soft);
        CHECK(fuse_soft(pm3) == soft3);
        CHECK(fuse_hard(lm) == hard);
    }
}

TEST_CASE("soft fusion of one-hot maps equals hard fusion") {
    std::mt19937 gen(4);
    for (int n = 1; n <= 6; ++n) {
        std::vector<ProbMap> maps;
        std::vector<LabelMask> masks;
        for (int m = 0; m < n; ++m) {
            masks.push_back(argmax_mask(random_probs(2, 8, 8, gen)));
            maps.push_back(ProbMap::one_hot(masks.back()));
        }
        CHECK(fuse_soft(maps) == fuse_hard(masks));
    }
}

TEST_CASE("single member soft fusion is argmax") {
    std::mt19937 gen(8);
    for (int k : {2, 3, 4}) {
        const std::vector<ProbMap> one = {random_probs(k, 10, 10, gen)};
        const auto fused = fuse_soft(one);
        CHECK(fused == argmax_mask(one.front()));
        for (auto v : fused.data()) CHECK((v >= 0 && v < k));
    }
}

TEST_CASE("fusion errors") {
    CHECK_THROWS_AS(fuse_soft(std::vector<ProbMap>{}), InvalidInput);
    CHECK_THROWS_AS(fuse_hard(std::vector<LabelMask>{}), InvalidInput);
    const std::vector<ProbMap> mismatch = {fg_probs(1, 2, {0.1, 0.2}), fg_probs(2, 1, {0.1, 0.2})};
    CHECK_THROWS_AS(fuse_soft(mismatch), ShapeError);
    const std::vector<LabelMask> shapes = {LabelMask(2, 2, 2, 0), LabelMask(2, 3, 2, 0)};
    CHECK_THROWS_AS(fuse_hard(shapes), ShapeError);
    const std::vector<LabelMask> three_class = {LabelMask(1, 1, 3, 2)};
    CHECK_THROWS_AS(fuse_hard(three_class), InvalidInput);
    CHECK(parse_fusion_mode("soft") == FusionMode::SoftMean);
    CHECK(parse_fusion_mode("hard") == FusionMode::HardVote);
    CHECK_THROWS_AS(parse_fusion_mode("median"), ConfigError);
}

TEST_CASE("ensemble spec file round trip") {
    const auto dir = fs::temp_directory_path() / "divseg_test_ensemble" / "spec";
    fs::create_directories(dir);
    EnsembleSpec spec;
    spec.members = {"a/best", "/abs/member"};
    spec.mode = FusionMode::HardVote;
    spec.working_size = 64;
    spec.save(dir / "ensemble.txt");
    const auto back = EnsembleSpec::load(dir / "ensemble.txt");
    CHECK(back.mode == FusionMode::HardVote);
    CHECK(back.working_size == 64);
    CHECK(back.threshold == 0.5);
    REQUIRE(back.members.size() == 2);
    CHECK(back.members[0] == dir / "a/best");
    CHECK(back.members[1] == fs::path("/abs/member"));
    CHECK_THROWS_AS(EnsembleSpec{}.validate(), ConfigError);
}

TEST_CASE("ensemble of saved checkpoints") {
    const auto root = fs::temp_directory_path() / "divseg_test_ensemble" / "members";
    fs::remove_all(root);
    const auto m1 = saved_member(root / "m1", 1);
    const auto m2 = saved_member(root / "m2", 2);
    std::mt19937 gen(12);
    const auto images = random_images(4, gen);

    SUBCASE("one member matches single-model predict") {
        EnsembleSpec spec;
        spec.members = {m1};
        spec.working_size = 32;
        const auto single = predict(load_checkpoint(m1), images, 32);
        CHECK((DivergentNets(spec).predict(images) == single));
        const auto first = predict(load_checkpoint(m1), std::span<const ImageTensor>(images.data(), 1), 32);
        CHECK(divergentnets_predict(images[0], spec) == first[0]);
    }
    SUBCASE("duplicated members leave soft output unchanged") {
        EnsembleSpec one;
        one.members = {m1};
        one.working_size = 32;
        EnsembleSpec dup = one;
        dup.members = {m1, m1, m1};
        CHECK((DivergentNets(one).predict(images) == DivergentNets(dup).predict(images)));
    }
    SUBCASE("outputs keep each image's size") {
        EnsembleSpec spec;
        spec.members = {m1, m2};
        spec.working_size = 32;
        const auto out = DivergentNets(spec).predict(images);
        REQUIRE(out.size() == images.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
            CHECK(out[i].height() == images[i].height());
            CHECK(out[i].width() == images[i].width());
        }
    }
    SUBCASE("a bad member is named") {
        EnsembleSpec spec;
        spec.members = {m1, root / "nope"};
        try {
            DivergentNets net(spec);
            FAIL("expected IoError");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find("nope") != std::string::npos);
        }
    }
    SUBCASE("class count mismatch") {
        NetworkSpec s;
        s.base_width = 4;
        s.depth = 3;
        s.classes = 3;
        auto net = build_network(s);
        CheckpointRecord r;
        r.arch_id = "unet";
        save_checkpoint(root / "k3", *net, r);
        EnsembleSpec spec;
        spec.members = {m1, root / "k3"};
        CHECK_THROWS_AS(DivergentNets{spec}, ConfigError);
    }
}
