#include "divseg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "divseg/error.hpp"
#include "divseg/image_io.hpp"
#include "divseg/rng.hpp"

namespace divseg {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kNegativeStream = 0x6e6567;
constexpr std::uint64_t kSplitStream = 0x73706c;
constexpr std::uint64_t kImageStream = 0x696d67;

struct Blob {
    double cx, cy;  // pixels
    double a, b;    // semi-axes, pixels
    double theta;
    double wobble;
    int lobes;
    double phase;

    bool contains(double x, double y) const {
        const double dx = x - cx;
        const double dy = y - cy;
        const double u = dx * std::cos(theta) + dy * std::sin(theta);
        const double v = -dx * std::sin(theta) + dy * std::cos(theta);
        const double r = std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
        const double angle = std::atan2(v / b, u / a);
        return r <= 1.0 + wobble * std::sin(lobes * angle + phase);
    }
};

std::string stem_for(int index) {
    std::ostringstream s;
    s << std::setw(5) << std::setfill('0') << index;
    return s.str();
}

}  // namespace

void SynthConfig::validate() const {
    if (count < 1) throw ConfigError("synth count must be >= 1");
    if (image_size < 4) throw ConfigError("synth image_size must be >= 4");
    if (blobs_max < 1) throw ConfigError("synth blobs_max must be >= 1");
    if (!(radius_min > 0.0 && radius_min < 0.5) || !(radius_max > 0.0 && radius_max < 0.5)) {
        throw ConfigError("synth radius fractions must lie in (0, 0.5)");
    }
    if (radius_min > radius_max) throw ConfigError("synth radius_min exceeds radius_max");
    if (!(negative_fraction >= 0.0 && negative_fraction <= 1.0)) {
        throw ConfigError("synth negative_fraction must lie in [0,1]");
    }
    if (!(noise >= 0.0)) throw ConfigError("synth noise must be >= 0");
    if (validation_count < 0 || test_count < 0 || validation_count + test_count > count) {
        throw ConfigError("synth validation_count + test_count must not exceed count");
    }
}

SynthConfig SynthConfig::from_doc(const KeyValueDoc& doc) {
    SynthConfig cfg;
    cfg.count = doc.get_int("count", cfg.count);
    cfg.image_size = doc.get_int("image_size", cfg.image_size);
    cfg.seed = static_cast<std::uint64_t>(doc.get_int("seed", 0));
    cfg.blobs_max = doc.get_int("blobs_max", cfg.blobs_max);
    cfg.radius_min = doc.get_double("radius_min", cfg.radius_min);
    cfg.radius_max = doc.get_double("radius_max", cfg.radius_max);
    cfg.negative_fraction = doc.get_double("negative_fraction", cfg.negative_fraction);
    cfg.noise = doc.get_double("noise", cfg.noise);
    cfg.validation_count = doc.get_int("validation_count", cfg.validation_count);
    cfg.test_count = doc.get_int("test_count", cfg.test_count);
    cfg.validate();
    return cfg;
}

void SynthConfig::write(KeyValueDoc& doc) const {
    doc.set("count", std::to_string(count));
    doc.set("image_size", std::to_string(image_size));
    doc.set("seed", std::to_string(seed));
    doc.set("blobs_max", std::to_string(blobs_max));
    doc.set("radius_min", format_double(radius_min));
    doc.set("radius_max", format_double(radius_max));
    doc.set("negative_fraction", format_double(negative_fraction));
    doc.set("noise", format_double(noise));
    doc.set("validation_count", std::to_string(validation_count));
    doc.set("test_count", std::to_string(test_count));
}

int SynthConfig::negative_count() const { return static_cast<int>(std::llround(negative_fraction * count)); }

std::vector<bool> negative_assignment(const SynthConfig& cfg) {
    cfg.validate();
    std::vector<bool> negative(cfg.count, false);
    const auto order = seeded_permutation(cfg.count, cfg.seed ^ kNegativeStream);
    for (int i = 0; i < cfg.negative_count(); ++i) negative[order[i]] = true;
    return negative;
}

SynthSample render_sample(const SynthConfig& cfg, int index, bool negative) {
    const int s = cfg.image_size;
    Rng rng({cfg.seed, kImageStream, static_cast<std::uint64_t>(index)});

    const double level = rng.uniform(0.2, 0.45);
    const double gx = rng.uniform(-0.15, 0.15);
    const double gy = rng.uniform(-0.15, 0.15);
    const double tint[3] = {1.1, 0.8, 0.7};
    const double lift[3] = {0.35, 0.2, 0.1};

    std::vector<Blob> blobs;
    if (!negative) {
        const int n = rng.integer(1, cfg.blobs_max);
        for (int i = 0; i < n; ++i) {
            Blob b;
            b.cx = rng.uniform(0.15, 0.85) * s;
            b.cy = rng.uniform(0.15, 0.85) * s;
            b.a = rng.uniform(cfg.radius_min, cfg.radius_max) * s;
            b.b = rng.uniform(cfg.radius_min, cfg.radius_max) * s;
            b.theta = rng.uniform(0.0, M_PI);
            b.wobble = rng.uniform(0.0, kBlobWobble);
            b.lobes = rng.integer(2, 4);
            b.phase = rng.uniform(0.0, 2.0 * M_PI);
            blobs.push_back(b);
        }
    }

    LabelMask mask(s, s, 2, 0);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            for (const auto& b : blobs) {
                if (b.contains(x + 0.5, y + 0.5)) {
                    mask.set(y, x, 1);
                    break;
                }
            }
        }
    }
    if (!negative && mask.count(1) == 0) {
        // Degenerate tiny blob: keep the pixel under its centre.
        const int cx = std::clamp(static_cast<int>(blobs.front().cx), 0, s - 1);
        const int cy = std::clamp(static_cast<int>(blobs.front().cy), 0, s - 1);
        mask.set(cy, cx, 1);
    }

    ImageTensor image(s, s, 3);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            const double base = level + gx * ((x + 0.5) / s - 0.5) + gy * ((y + 0.5) / s - 0.5);
            const bool fg = mask.at(y, x) == 1;
            for (int c = 0; c < 3; ++c) {
                double v = base * tint[c] + (fg ? lift[c] : 0.0) + cfg.noise * rng.normal();
                image.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return {std::move(image), std::move(mask), negative};
}

DatasetManifest generate(const SynthConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (!ec) fs::create_directories(out_dir / "masks", ec);
    if (ec) throw IoError(out_dir.string(), "cannot create output directory: " + ec.message());

    const auto negative = negative_assignment(cfg);
    std::vector<Split> split(cfg.count, Split::Train);
    const auto order = seeded_permutation(cfg.count, cfg.seed ^ kSplitStream);
    for (int i = 0; i < cfg.validation_count + cfg.test_count; ++i) {
        split[order[i]] = i < cfg.validation_count ? Split::Validation : Split::Test;
    }

    std::vector<ManifestEntry> entries;
    for (int i = 0; i < cfg.count; ++i) {
        const auto sample = render_sample(cfg, i, negative[i]);
        const auto image_path = out_dir / "images" / (stem_for(i) + ".png");
        const auto mask_path = out_dir / "masks" / (stem_for(i) + ".png");
        write_image(image_path, sample.image);
        write_mask(mask_path, sample.mask);
        entries.push_back({image_path, mask_path, split[i]});
    }
    DatasetManifest manifest(std::move(entries));
    manifest.save(out_dir / "manifest.tsv");
    KeyValueDoc doc;
    cfg.write(doc);
    doc.save(out_dir / "synth.txt");
    return manifest;
}

}  // namespace divseg
