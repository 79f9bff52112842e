#include "divseg/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "divseg/error.hpp"
#include "divseg/loss.hpp"
#include "divseg/metrics.hpp"
#include "divseg/predict.hpp"
#include "divseg/rng.hpp"
#include "divseg/triunet.hpp"

namespace divseg {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (working_size < 1) throw ConfigError("working_size must be >= 1");
    if (!(lr_initial > 0.0) || !(lr_reduced > 0.0)) throw ConfigError("learning rates must be > 0");
    if (lr_switch_epoch < 0 || lr_switch_epoch > epochs) {
        throw ConfigError("lr_switch_epoch must lie in [0, epochs], got " + std::to_string(lr_switch_epoch));
    }
    if (target_class < 0) throw ConfigError("target_class must be >= 0");
    if (!(dice_smoothing >= 0.0)) throw ConfigError("dice_smoothing must be >= 0");
}

TrainConfig TrainConfig::from_doc(const KeyValueDoc& doc) {
    TrainConfig cfg;
    cfg.epochs = doc.get_int("epochs", cfg.epochs);
    cfg.batch_size = doc.get_int("batch_size", cfg.batch_size);
    cfg.working_size = doc.get_int("working_size", cfg.working_size);
    cfg.lr_initial = doc.get_double("lr_initial", cfg.lr_initial);
    cfg.lr_reduced = doc.get_double("lr_reduced", cfg.lr_reduced);
    cfg.lr_switch_epoch = doc.get_int("lr_switch_epoch", cfg.lr_switch_epoch);
    cfg.seed = static_cast<std::uint64_t>(doc.get_int("seed", 0));
    cfg.target_class = doc.get_int("target_class", cfg.target_class);
    cfg.dice_smoothing = doc.get_double("dice_smoothing", cfg.dice_smoothing);
    cfg.selection_metric = doc.get_string("selection_metric", cfg.selection_metric);
    const auto keep = doc.get_string("keep_checkpoints", "all");
    if (keep == "all") {
        cfg.keep = KeepCheckpoints::All;
    } else if (keep == "best") {
        cfg.keep = KeepCheckpoints::Best;
    } else {
        throw ConfigError("keep_checkpoints must be 'all' or 'best', got '" + keep + "'");
    }
    cfg.validate();
    return cfg;
}

void TrainConfig::write(KeyValueDoc& doc) const {
    doc.set("epochs", std::to_string(epochs));
    doc.set("batch_size", std::to_string(batch_size));
    doc.set("working_size", std::to_string(working_size));
    doc.set("lr_initial", format_double(lr_initial));
    doc.set("lr_reduced", format_double(lr_reduced));
    doc.set("lr_switch_epoch", std::to_string(lr_switch_epoch));
    doc.set("seed", std::to_string(seed));
    doc.set("target_class", std::to_string(target_class));
    doc.set("dice_smoothing", format_double(dice_smoothing));
    doc.set("selection_metric", selection_metric);
    doc.set("keep_checkpoints", keep == KeepCheckpoints::All ? "all" : "best");
}

double lr_at_epoch(int epoch, const TrainConfig& cfg) {
    if (epoch < 1 || epoch > cfg.epochs) {
        throw InvalidInput("epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(cfg.epochs) + "]");
    }
    return epoch <= cfg.lr_switch_epoch ? cfg.lr_initial : cfg.lr_reduced;
}

std::map<std::string, double> validation_metrics(SegmentationNetwork& net, std::span<const Sample> samples,
                                                 const TrainConfig& cfg) {
    if (samples.empty()) throw InvalidInput("validation set is empty");
    const int classes = net.spec().classes;
    DiceConfig dice{cfg.target_class, cfg.dice_smoothing};
    MetricsAccumulator acc(classes, cfg.target_class);
    DiceTerms pooled;
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < samples.size(); start += kChunk) {
        const auto end = std::min(samples.size(), start + kChunk);
        std::vector<ImageTensor> images;
        for (std::size_t i = start; i < end; ++i) images.push_back(samples[i].image);
        const auto probs = predict_probs(net, images, cfg.working_size);
        for (std::size_t i = start; i < end; ++i) {
            const auto& p = probs[i - start];
            const auto gt = LabelMask(samples[i].mask.height(), samples[i].mask.width(), classes,
                                      std::vector<std::int32_t>(samples[i].mask.data().begin(),
                                                                samples[i].mask.data().end()));
            acc.add(samples[i].name, argmax_mask(p), gt);
            const auto t = dice_terms(p, gt, dice);
            pooled.intersection += t.intersection;
            pooled.pred_sum += t.pred_sum;
            pooled.gt_sum += t.gt_sum;
        }
    }
    const auto report = acc.report();
    const auto& polyp = report.per_class[cfg.target_class];
    return {{"val_polyp_iou", polyp.iou}, {"val_polyp_f1", polyp.f1}, {"val_dice_score", pooled.score(dice.smoothing)}};
}

const CheckpointRecord& select_best(const std::vector<CheckpointRecord>& records, const std::string& metric) {
    if (records.empty()) throw InvalidInput("no checkpoint records to select from");
    const CheckpointRecord* best = &records.front();
    for (const auto& r : records) {
        if (r.metric(metric) > best->metric(metric)) best = &r;
    }
    return *best;
}

namespace {

void restore_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state) {
    torch::NoGradGuard no_grad;
    for (auto& p : module.named_parameters()) p.value().copy_(state.at(p.key()));
    for (auto& b : module.named_buffers()) b.value().copy_(state.at(b.key()));
}

std::string epoch_dir_name(int epoch) {
    std::ostringstream name;
    name << "epoch_" << std::setw(4) << std::setfill('0') << epoch;
    return name.str();
}

void write_records(const fs::path& path, const std::vector<EpochSummary>& epochs,
                   const std::vector<CheckpointRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << "epoch\tlr\ttrain_loss";
    if (!records.empty()) {
        for (const auto& [name, _] : records.front().metrics) out << '\t' << name;
    }
    out << "\tcheckpoint\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
        out << epochs[i].epoch << '\t' << format_double(epochs[i].lr) << '\t' << format_double(epochs[i].train_loss);
        for (const auto& [_, value] : records[i].metrics) out << '\t' << format_double(value);
        out << '\t' << (records[i].location.empty() ? "-" : records[i].location.filename().string()) << '\n';
    }
}

void write_marker(const fs::path& path, const std::string& name) {
    std::ofstream out(path);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << name << '\n';
}

}  // namespace

TrainResult train(SegmentationNetwork& net, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& validation_set, const TrainConfig& cfg,
                  const AugmentationSpec& augmentation, const TrainOptions& options) {
    cfg.validate();
    augmentation.validate();
    if (train_set.empty()) throw InvalidInput("training split is empty");
    if (validation_set.empty()) throw InvalidInput("validation split is empty");
    const int classes = net.spec().classes;
    const DiceConfig dice{cfg.target_class, cfg.dice_smoothing};
    dice.validate(classes);

    if (options.out_dir) fs::create_directories(*options.out_dir);

    torch::optim::Adam optimizer(net.parameters(), torch::optim::AdamOptions(lr_at_epoch(1, cfg)));
    TrainResult result;
    std::map<std::string, torch::Tensor> best_state;
    std::optional<std::size_t> best_index;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = lr_at_epoch(epoch, cfg);
        for (auto& group : optimizer.param_groups()) {
            static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
        }

        Rng shuffle_rng({cfg.seed, static_cast<std::uint64_t>(epoch)});
        const auto order = permutation(train_set.size(), shuffle_rng);

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<ImageTensor> images;
            std::vector<LabelMask> masks;
            for (std::size_t i = start; i < end; ++i) {
                const auto index = order[i];
                const auto& sample = train_set[index];
                Rng rng({cfg.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(index)});
                auto [image, mask] = augment(sample.image, sample.mask, augmentation, rng);
                images.push_back(resize_image(image, cfg.working_size, cfg.working_size));
                masks.push_back(resize_mask_nearest(mask, cfg.working_size, cfg.working_size));
            }
            try {
                const auto step = end_to_end_step(net, optimizer, images_to_batch(images), masks_to_labels(masks), dice);
                loss_sum += step.loss;
            } catch (const TrainingError& e) {
                throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batches + 1));
            }
            ++batches;
        }

        EpochSummary summary;
        summary.epoch = epoch;
        summary.lr = lr;
        summary.train_loss = loss_sum / batches;
        summary.validation = validation_metrics(net, validation_set, cfg);
        if (!summary.validation.count(cfg.selection_metric)) {
            throw ConfigError("unknown selection metric '" + cfg.selection_metric + "'");
        }

        CheckpointRecord record;
        record.arch_id = net.spec().arch_id;
        record.epoch = epoch;
        record.metrics = summary.validation;

        const bool improved =
            !best_index || record.metric(cfg.selection_metric) > result.records[*best_index].metric(cfg.selection_metric);

        if (options.out_dir && (cfg.keep == KeepCheckpoints::All || improved)) {
            record.location = *options.out_dir / epoch_dir_name(epoch);
            save_checkpoint(record.location, net, record);
        }
        if (improved) {
            if (options.out_dir && cfg.keep == KeepCheckpoints::Best && best_index) {
                fs::remove_all(result.records[*best_index].location);
                result.records[*best_index].location.clear();
            }
            best_index = result.records.size();
            best_state = snapshot_state(net);
            if (options.out_dir) write_marker(*options.out_dir / "best", epoch_dir_name(epoch));
        }
        result.records.push_back(record);
        result.epochs.push_back(summary);
        if (options.out_dir) write_records(*options.out_dir / "records.tsv", result.epochs, result.records);
        if (options.on_epoch) options.on_epoch(summary);
    }

    result.best = select_best(result.records, cfg.selection_metric);
    restore_state(net, best_state);
    net.eval();
    return result;
}

TrainResult train(SegmentationNetwork& net, const DatasetManifest& manifest, const TrainConfig& cfg,
                  const AugmentationSpec& augmentation, const TrainOptions& options) {
    if (manifest.count(Split::Train) == 0) throw InvalidInput("manifest has no train entries");
    if (manifest.count(Split::Validation) == 0) throw InvalidInput("manifest has no validation entries");
    return train(net, load_samples(manifest, Split::Train), load_samples(manifest, Split::Validation), cfg,
                 augmentation, options);
}

}  // namespace divseg
