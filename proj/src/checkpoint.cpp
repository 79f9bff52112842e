#include "divseg/checkpoint.hpp"

#include <fstream>

#include "divseg/error.hpp"
#include "divseg/triunet.hpp"

namespace divseg {

namespace fs = std::filesystem;

double CheckpointRecord::metric(const std::string& name) const {
    const auto it = metrics.find(name);
    if (it == metrics.end()) throw ConfigError("checkpoint has no metric '" + name + "'");
    return it->second;
}

void save_checkpoint(const fs::path& dir, SegmentationNetwork& net, const CheckpointRecord& record) {
    fs::create_directories(dir);
    KeyValueDoc meta;
    net.describe(meta);
    meta.set("epoch", std::to_string(record.epoch));
    for (const auto& [name, value] : record.metrics) meta.set("metric." + name, format_double(value));
    meta.set("weights", kCheckpointWeightsFile);

    const auto weights = dir / kCheckpointWeightsFile;
    try {
        torch::serialize::OutputArchive archive;
        net.save(archive);
        archive.save_to(weights.string());
    } catch (const c10::Error& e) {
        throw IoError(weights.string(), std::string("cannot write weights: ") + e.what_without_backtrace());
    }
    meta.save(dir / kCheckpointMetaFile);
}

fs::path resolve_checkpoint_dir(const fs::path& path) {
    if (fs::is_regular_file(path / kCheckpointMetaFile)) return path;
    const auto marker = path / "best";
    if (fs::is_regular_file(marker)) {
        std::ifstream in(marker);
        std::string name;
        std::getline(in, name);
        if (!name.empty() && fs::is_regular_file(path / name / kCheckpointMetaFile)) return path / name;
    }
    if (!fs::exists(path)) throw IoError(path.string(), "checkpoint does not exist");
    throw IoError(path.string(), std::string("not a checkpoint directory (no ") + kCheckpointMetaFile + " or best marker)");
}

LoadedCheckpoint load_checkpoint(const fs::path& path, const ArchRegistry& registry) {
    const auto dir = resolve_checkpoint_dir(path);
    const auto meta = KeyValueDoc::load(dir / kCheckpointMetaFile);

    CheckpointRecord record;
    record.arch_id = meta.require("arch_id");
    record.epoch = meta.get_int("epoch", 0);
    record.location = dir;
    for (const auto& [key, value] : meta.entries()) {
        if (key.rfind("metric.", 0) == 0) record.metrics[key.substr(7)] = parse_double(value, key);
    }

    NetworkPtr net;
    if (record.arch_id == "triunet") {
        net = build_triunet(read_triunet_spec(meta), registry);
    } else {
        net = registry.build(NetworkSpec::read(meta));
    }

    const auto weights = dir / meta.get_string("weights", kCheckpointWeightsFile);
    try {
        torch::serialize::InputArchive archive;
        archive.load_from(weights.string());
        net->load(archive);
    } catch (const c10::Error& e) {
        throw IoError(weights.string(), std::string("cannot load weights: ") + e.what_without_backtrace());
    }
    net->eval();
    return {net, record};
}

}  // namespace divseg
