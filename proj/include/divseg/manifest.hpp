#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "divseg/core.hpp"

namespace divseg {

enum class Split { Train, Validation, Test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
    std::filesystem::path image;
    std::optional<std::filesystem::path> mask;  // none: negative sample, all background
    Split split = Split::Train;

    bool operator==(const ManifestEntry&) const = default;
};

/// Dataset listing. On disk: one line per entry,
/// `split<TAB>image_path<TAB>mask_path_or_dash`, paths relative to the
/// manifest's own directory unless absolute.
class DatasetManifest {
public:
    DatasetManifest() = default;
    explicit DatasetManifest(std::vector<ManifestEntry> entries);

    const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
    std::vector<ManifestEntry> select(Split split) const;
    std::size_t count(Split split) const;
    std::size_t size() const noexcept { return entries_.size(); }

    // Unique image paths; with check_files, every referenced file exists.
    void validate(bool check_files = true) const;

    void save(const std::filesystem::path& path) const;
    static DatasetManifest load(const std::filesystem::path& path);

private:
    std::vector<ManifestEntry> entries_;
};

/// How build_manifest assigns splits.
struct SplitRules {
    enum class Mode {
        All,          // every entry goes to `all_split`
        Fractions,    // seeded shuffle, then validation/test fractions, rest train
        Directories,  // root/{train,validation,test}/ each laid out like a flat root
    };
    Mode mode = Mode::All;
    Split all_split = Split::Train;
    double validation_fraction = 0.0;
    double test_fraction = 0.0;
    std::uint64_t seed = 0;
    // When false, an image without a mask file is an error instead of a negative.
    bool allow_unmasked = true;

    // "all=train", "fractions=0.15,0.15[,seed]" or "directories".
    static SplitRules parse(const std::string& text);
};

// Flat layout: root/images/<stem>.<ext> with optional root/masks/<stem>.<ext>.
// Entries are sorted by image filename.
DatasetManifest build_manifest(const std::filesystem::path& root, const SplitRules& rules);

struct Sample {
    std::string name;  // image filename stem
    ImageTensor image;
    LabelMask mask;
};

Sample load_sample(const ManifestEntry& entry);
std::vector<Sample> load_samples(const DatasetManifest& manifest, Split split);

}  // namespace divseg
