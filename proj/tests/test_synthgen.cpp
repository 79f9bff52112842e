#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "testing.hpp"
#include "divseg/error.hpp"
#include "divseg/image_io.hpp"
#include "divseg/synthgen.hpp"

using namespace divseg;

namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "divseg_test_synthgen" / name;
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("all-negative configuration gives empty masks") {
    SynthConfig cfg;
    cfg.count = 12;
    cfg.image_size = 32;
    cfg.negative_fraction = 1.0;
    const auto dir = fresh_dir("negative");
    const auto manifest = generate(cfg, dir);
    REQUIRE(manifest.size() == 12u);
    for (const auto& e : manifest.entries()) {
        REQUIRE(e.mask.has_value());
        CHECK(read_mask(*e.mask).count(1) == 0u);
    }
}

TEST_CASE("same seed writes byte-identical files") {
    SynthConfig cfg;
    cfg.count = 10;
    cfg.image_size = 32;
    cfg.seed = 77;
    cfg.validation_count = 3;
    const auto a = fresh_dir("a");
    const auto b = fresh_dir("b");
    generate(cfg, a);
    generate(cfg, b);
    int files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        ++files;
        const auto rel = fs::relative(e.path(), a);
        CHECK(slurp(e.path()) == slurp(b / rel));
    }
    CHECK(files == 22);

    cfg.seed = 78;
    const auto c = fresh_dir("c");
    generate(cfg, c);
    CHECK(slurp(a / "images" / "00000.png") != slurp(c / "images" / "00000.png"));
}

TEST_CASE("negative fraction is exact") {
    SynthConfig cfg;
    cfg.count = 100;
    cfg.image_size = 24;
    cfg.negative_fraction = 0.3;
    cfg.seed = 3;
    const auto dir = fresh_dir("fraction");
    const auto manifest = generate(cfg, dir);
    int empty = 0;
    for (const auto& e : manifest.entries()) empty += read_mask(*e.mask).count(1) == 0;
    CHECK(empty == 30);
}

TEST_CASE("splits follow the configured counts") {
    SynthConfig cfg;
    cfg.count = 20;
    cfg.image_size = 16;
    cfg.validation_count = 5;
    cfg.test_count = 4;
    const auto dir = fresh_dir("splits");
    const auto manifest = generate(cfg, dir);
    CHECK(manifest.count(Split::Validation) == 5u);
    CHECK(manifest.count(Split::Test) == 4u);
    CHECK(manifest.count(Split::Train) == 11u);
    const auto back = DatasetManifest::load(dir / "manifest.tsv");
    CHECK(back.count(Split::Validation) == 5u);
}

TEST_CASE("foreground fraction of positives stays within geometric bounds") {
    SynthConfig cfg;
    cfg.count = 200;
    cfg.image_size = 64;
    cfg.seed = 11;
    const double lo = M_PI * std::pow(cfg.radius_min * (1.0 - kBlobWobble), 2);
    const double hi = cfg.blobs_max * M_PI * std::pow(cfg.radius_max * (1.0 + kBlobWobble), 2);
    for (int i = 0; i < cfg.count; ++i) {
        const auto s = render_sample(cfg, i, false);
        const double frac = static_cast<double>(s.mask.count(1)) / s.mask.size();
        CHECK(frac >= 0.8 * lo);
        CHECK(frac <= hi);
    }
}

TEST_CASE("mask is the blob support, not a threshold of the image") {
    SynthConfig cfg;
    cfg.image_size = 48;
    cfg.noise = 0.0;
    cfg.seed = 2;
    for (int i = 0; i < 20; ++i) {
        const auto s = render_sample(cfg, i, false);
        // Without noise the green channel jumps by the blob lift exactly across every mask edge.
        const double step = 0.15 * 0.8 / cfg.image_size;
        for (int y = 0; y < 48; ++y) {
            for (int x = 0; x + 1 < 48; ++x) {
                const int a = s.mask.at(y, x), b = s.mask.at(y, x + 1);
                const double d = s.image.at(1, y, x + 1) - s.image.at(1, y, x);
                if (a == b) {
                    CHECK(std::abs(d) <= step + 1e-6);
                } else {
                    CHECK(std::abs(std::abs(d) - 0.2) <= step + 1e-6);
                }
            }
        }
    }
    const auto dir = fresh_dir("geometry");
    cfg.count = 4;
    cfg.negative_fraction = 0.0;
    const auto manifest = generate(cfg, dir);
    for (int i = 0; i < 4; ++i) CHECK(read_mask(*manifest.entries()[i].mask) == render_sample(cfg, i, false).mask);
}

TEST_CASE("config validation") {
    SynthConfig cfg;
    cfg.radius_max = 0.6;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.negative_fraction = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.count = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    KeyValueDoc doc;
    SynthConfig custom;
    custom.count = 42;
    custom.noise = 0.125;
    custom.write(doc);
    const auto back = SynthConfig::from_doc(doc);
    CHECK(back.count == 42);
    CHECK(back.noise == 0.125);
}
