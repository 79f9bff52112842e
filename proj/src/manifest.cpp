#include "divseg/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "divseg/error.hpp"
#include "divseg/image_io.hpp"
#include "divseg/kv_config.hpp"
#include "divseg/rng.hpp"

namespace divseg {

namespace fs = std::filesystem;

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Validation: return "validation";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::Train;
    if (text == "validation" || text == "val") return Split::Validation;
    if (text == "test") return Split::Test;
    throw ConfigError("unknown split '" + text + "' (expected train, validation or test)");
}

DatasetManifest::DatasetManifest(std::vector<ManifestEntry> entries) : entries_(std::move(entries)) {}

std::vector<ManifestEntry> DatasetManifest::select(Split split) const {
    std::vector<ManifestEntry> out;
    std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(out),
                 [&](const ManifestEntry& e) { return e.split == split; });
    return out;
}

std::size_t DatasetManifest::count(Split split) const {
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [&](const ManifestEntry& e) { return e.split == split; }));
}

void DatasetManifest::validate(bool check_files) const {
    if (entries_.empty()) throw InvalidInput("manifest is empty");
    std::set<fs::path> seen;
    for (const auto& e : entries_) {
        if (!seen.insert(e.image.lexically_normal()).second) {
            throw InvalidInput("manifest lists image twice: " + e.image.string());
        }
        if (!check_files) continue;
        if (!fs::is_regular_file(e.image)) throw IoError(e.image.string(), "image listed in manifest does not exist");
        if (e.mask && !fs::is_regular_file(*e.mask)) {
            throw IoError(e.mask->string(), "mask listed in manifest does not exist");
        }
    }
}

void DatasetManifest::save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    const auto base = path.parent_path().empty() ? fs::current_path() : fs::absolute(path.parent_path());
    auto rel = [&](const fs::path& p) {
        if (p.is_relative()) return fs::absolute(p).lexically_relative(base).generic_string();
        const auto r = p.lexically_relative(base);
        return r.empty() ? p.generic_string() : r.generic_string();
    };
    for (const auto& e : entries_) {
        out << to_string(e.split) << '\t' << rel(e.image) << '\t' << (e.mask ? rel(*e.mask) : "-") << '\n';
    }
    if (!out) throw IoError(path.string(), "write failed");
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open manifest");
    const auto base = path.parent_path();
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (fields.size() != 3) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) +
                              ": expected split<TAB>image<TAB>mask-or-dash");
        }
        ManifestEntry e;
        e.split = parse_split(fields[0]);
        const fs::path image(fields[1]);
        e.image = image.is_relative() ? base / image : image;
        if (fields[2] != "-") {
            const fs::path mask(fields[2]);
            e.mask = mask.is_relative() ? base / mask : mask;
        }
        entries.push_back(std::move(e));
    }
    DatasetManifest manifest(std::move(entries));
    manifest.validate();
    return manifest;
}

SplitRules SplitRules::parse(const std::string& text) {
    SplitRules rules;
    if (text == "directories") {
        rules.mode = Mode::Directories;
        return rules;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError("split rule '" + text + "' not understood");
    const auto kind = text.substr(0, eq);
    const auto value = text.substr(eq + 1);
    if (kind == "all") {
        rules.mode = Mode::All;
        rules.all_split = parse_split(value);
        return rules;
    }
    if (kind == "fractions") {
        std::vector<std::string> parts;
        std::stringstream ss(value);
        std::string part;
        while (std::getline(ss, part, ',')) parts.push_back(part);
        if (parts.size() < 2 || parts.size() > 3) {
            throw ConfigError("split rule 'fractions=' needs validation,test[,seed]");
        }
        rules.mode = Mode::Fractions;
        rules.validation_fraction = parse_double(parts[0], "validation fraction");
        rules.test_fraction = parse_double(parts[1], "test fraction");
        if (parts.size() == 3) rules.seed = static_cast<std::uint64_t>(parse_int(parts[2], "split seed"));
        if (rules.validation_fraction < 0 || rules.test_fraction < 0 ||
            rules.validation_fraction + rules.test_fraction > 1.0) {
            throw ConfigError("split fractions must be non-negative and sum to at most 1");
        }
        return rules;
    }
    throw ConfigError("split rule '" + text + "' not understood");
}

namespace {

std::vector<ManifestEntry> scan_flat(const fs::path& root, Split split, bool allow_unmasked) {
    const auto images_dir = root / "images";
    const auto masks_dir = root / "masks";
    if (!fs::is_directory(images_dir)) throw IoError(images_dir.string(), "images directory not found");

    std::map<std::string, fs::path> masks;
    if (fs::is_directory(masks_dir)) {
        for (const auto& entry : fs::directory_iterator(masks_dir)) {
            if (entry.is_regular_file() && is_image_file(entry.path())) masks[entry.path().stem().string()] = entry.path();
        }
    }
    std::vector<fs::path> images;
    for (const auto& entry : fs::directory_iterator(images_dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) images.push_back(entry.path());
    }
    std::sort(images.begin(), images.end(), [](const fs::path& a, const fs::path& b) {
        return a.filename().string() < b.filename().string();
    });

    std::vector<ManifestEntry> out;
    for (const auto& img : images) {
        ManifestEntry e{img, std::nullopt, split};
        const auto it = masks.find(img.stem().string());
        if (it != masks.end()) {
            e.mask = it->second;
        } else if (!allow_unmasked) {
            throw IoError(img.string(), "no mask found for image (expected under " + masks_dir.string() + ")");
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

DatasetManifest build_manifest(const fs::path& root, const SplitRules& rules) {
    if (!fs::is_directory(root)) throw IoError(root.string(), "dataset root does not exist");
    std::vector<ManifestEntry> entries;
    switch (rules.mode) {
        case SplitRules::Mode::All:
            entries = scan_flat(root, rules.all_split, rules.allow_unmasked);
            break;
        case SplitRules::Mode::Directories:
            for (auto split : {Split::Train, Split::Validation, Split::Test}) {
                const auto dir = root / to_string(split);
                if (!fs::is_directory(dir)) continue;
                auto part = scan_flat(dir, split, rules.allow_unmasked);
                entries.insert(entries.end(), part.begin(), part.end());
            }
            break;
        case SplitRules::Mode::Fractions: {
            entries = scan_flat(root, Split::Train, rules.allow_unmasked);
            const auto n = entries.size();
            auto order = seeded_permutation(n, rules.seed);
            const auto n_val = static_cast<std::size_t>(std::llround(rules.validation_fraction * n));
            const auto n_test = std::min(n - n_val, static_cast<std::size_t>(std::llround(rules.test_fraction * n)));
            for (std::size_t i = 0; i < n; ++i) {
                auto& e = entries[order[i]];
                e.split = i < n_val ? Split::Validation : (i < n_val + n_test ? Split::Test : Split::Train);
            }
            break;
        }
    }
    DatasetManifest manifest(std::move(entries));
    manifest.validate();
    return manifest;
}

Sample load_sample(const ManifestEntry& entry) {
    Sample s;
    s.name = entry.image.stem().string();
    s.image = read_image(entry.image);
    if (entry.mask) {
        s.mask = read_mask(*entry.mask);
        if (s.mask.height() != s.image.height() || s.mask.width() != s.image.width()) {
            throw ShapeError("mask " + entry.mask->string() + " is " + std::to_string(s.mask.height()) + "x" +
                             std::to_string(s.mask.width()) + " but image is " + std::to_string(s.image.height()) +
                             "x" + std::to_string(s.image.width()));
        }
    } else {
        s.mask = LabelMask(s.image.height(), s.image.width(), 2, 0);
    }
    return s;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, Split split) {
    std::vector<Sample> out;
    for (const auto& e : manifest.select(split)) out.push_back(load_sample(e));
    return out;
}

}  // namespace divseg
