// divseg command-line front end: synth, manifest, train, predict,
// ensemble-predict and evaluate.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "divseg/augment.hpp"
#include "divseg/checkpoint.hpp"
#include "divseg/ensemble.hpp"
#include "divseg/error.hpp"
#include "divseg/image_io.hpp"
#include "divseg/kv_config.hpp"
#include "divseg/manifest.hpp"
#include "divseg/metrics.hpp"
#include "divseg/predict.hpp"
#include "divseg/synthgen.hpp"
#include "divseg/train.hpp"
#include "divseg/triunet.hpp"

namespace fs = std::filesystem;
using namespace divseg;

namespace {

constexpr const char* kOutEnv = "DIVSEG_OUT";

fs::path output_dir(const std::string& given, const std::string& fallback_name) {
    if (!given.empty()) return given;
    if (const char* root = std::getenv(kOutEnv); root && *root) return fs::path(root) / fallback_name;
    throw InvalidInput("--out not given and " + std::string(kOutEnv) + " is not set");
}

KeyValueDoc load_config(const std::string& path) {
    if (path.empty()) return {};
    if (!fs::is_regular_file(path)) throw IoError(path, "config file not found");
    return KeyValueDoc::load(path);
}

struct InputImage {
    std::string name;
    fs::path path;
};

// A directory of images, or a manifest file restricted to one split.
std::vector<InputImage> list_inputs(const fs::path& input, const std::string& split) {
    std::vector<InputImage> out;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input)) {
            if (e.is_regular_file() && is_image_file(e.path())) out.push_back({e.path().stem().string(), e.path()});
        }
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    } else if (fs::is_regular_file(input)) {
        for (const auto& e : DatasetManifest::load(input).select(parse_split(split))) {
            out.push_back({e.image.stem().string(), e.image});
        }
    } else {
        throw IoError(input.string(), "input not found");
    }
    if (out.empty()) throw InvalidInput("no input images in " + input.string());
    return out;
}

void write_predictions(const std::vector<InputImage>& inputs, const std::vector<ImageTensor>& images,
                       const std::vector<LabelMask>& masks, const fs::path& out, const std::string& overlay) {
    fs::create_directories(out);
    if (!overlay.empty()) fs::create_directories(overlay);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        write_mask(out / (inputs[i].name + ".png"), masks[i]);
        if (!overlay.empty()) write_image(fs::path(overlay) / (inputs[i].name + ".png"), overlay_mask(images[i], masks[i]));
    }
}

std::vector<ImageTensor> read_images(const std::vector<InputImage>& inputs) {
    std::vector<ImageTensor> images;
    images.reserve(inputs.size());
    for (const auto& in : inputs) images.push_back(read_image(in.path));
    return images;
}

// --- synth ---------------------------------------------------------------

struct SynthArgs {
    std::string config, out;
    std::optional<int> count, size, validation, test;
    std::optional<std::uint64_t> seed;
    std::optional<double> negative_fraction, noise;
};

int run_synth(const SynthArgs& a) {
    auto doc = load_config(a.config);
    if (a.count) doc.set("count", std::to_string(*a.count));
    if (a.size) doc.set("image_size", std::to_string(*a.size));
    if (a.validation) doc.set("validation_count", std::to_string(*a.validation));
    if (a.test) doc.set("test_count", std::to_string(*a.test));
    if (a.seed) doc.set("seed", std::to_string(*a.seed));
    if (a.negative_fraction) doc.set("negative_fraction", format_double(*a.negative_fraction));
    if (a.noise) doc.set("noise", format_double(*a.noise));
    const auto cfg = SynthConfig::from_doc(doc);
    const auto out = output_dir(a.out, "synth");
    const auto manifest = generate(cfg, out);
    std::cout << "wrote " << manifest.size() << " samples to " << out.string() << " (train "
              << manifest.count(Split::Train) << ", validation " << manifest.count(Split::Validation) << ", test "
              << manifest.count(Split::Test) << ")\n";
    return 0;
}

// --- manifest ------------------------------------------------------------

struct ManifestArgs {
    std::string root, rule = "all=train", out;
    bool strict = false;
};

int run_manifest(const ManifestArgs& a) {
    auto rules = SplitRules::parse(a.rule);
    rules.allow_unmasked = !a.strict;
    const auto manifest = build_manifest(a.root, rules);
    const fs::path out = a.out.empty() ? fs::path(a.root) / "manifest.tsv" : fs::path(a.out);
    manifest.save(out);
    std::cout << "wrote " << out.string() << " with " << manifest.size() << " entries\n";
    return 0;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
    std::string arch = "unet", manifest, config, out;
    std::optional<int> epochs, batch_size, working_size, depth, base_width, lr_switch_epoch;
    std::optional<std::uint64_t> seed;
    std::optional<double> lr;
    std::optional<std::string> keep;
    bool no_augment = false;
    bool quiet = false;
};

int run_train(const TrainArgs& a) {
    auto doc = load_config(a.config);
    if (a.epochs) {
        doc.set("epochs", std::to_string(*a.epochs));
        // A short run without an explicit switch epoch trains at the initial rate throughout.
        if (!doc.contains("lr_switch_epoch") && !a.lr_switch_epoch) {
            doc.set("lr_switch_epoch", std::to_string(std::min(*a.epochs, TrainConfig{}.lr_switch_epoch)));
        }
    }
    if (a.lr_switch_epoch) doc.set("lr_switch_epoch", std::to_string(*a.lr_switch_epoch));
    if (a.batch_size) doc.set("batch_size", std::to_string(*a.batch_size));
    if (a.working_size) doc.set("working_size", std::to_string(*a.working_size));
    if (a.seed) doc.set("seed", std::to_string(*a.seed));
    if (a.lr) doc.set("lr_initial", format_double(*a.lr));
    if (a.keep) doc.set("keep_checkpoints", *a.keep);
    const auto cfg = TrainConfig::from_doc(doc);

    NetworkSpec spec;
    spec.arch_id = a.arch;
    spec.depth = a.depth.value_or(doc.get_int("depth", spec.depth));
    spec.base_width = a.base_width.value_or(doc.get_int("base_width", spec.base_width));
    spec.seed = cfg.seed;
    auto net = default_registry().build(spec);

    bool has_aug = false;
    for (const auto& [key, _] : doc.entries()) has_aug |= key.rfind("aug.", 0) == 0;
    const auto augmentation =
        a.no_augment ? AugmentationSpec{} : (has_aug ? AugmentationSpec::from_doc(doc) : AugmentationSpec::standard());

    const auto manifest = DatasetManifest::load(a.manifest);
    const auto out = output_dir(a.out, "train-" + a.arch);
    fs::create_directories(out);
    KeyValueDoc used;
    cfg.write(used);
    spec.write(used, "net.");
    augmentation.write(used);
    used.save(out / "train.txt");

    TrainOptions options;
    options.out_dir = out;
    if (!a.quiet) {
        options.on_epoch = [](const EpochSummary& s) {
            std::cout << "epoch " << s.epoch << " lr " << s.lr << " loss " << s.train_loss;
            for (const auto& [name, value] : s.validation) std::cout << ' ' << name << ' ' << value;
            std::cout << std::endl;
        };
    }
    const auto result = train(*net, manifest, cfg, augmentation, options);
    std::cout << "best epoch " << result.best.epoch << " " << cfg.selection_metric << " "
              << format_double(result.best.metric(cfg.selection_metric)) << " at " << result.best.location.string()
              << "\n";
    return 0;
}

// --- predict -------------------------------------------------------------

struct PredictArgs {
    std::string checkpoint, input, split = "test", out, overlay;
    int working_size = 256;
};

int run_predict(const PredictArgs& a) {
    const auto checkpoint = load_checkpoint(a.checkpoint);
    const auto inputs = list_inputs(a.input, a.split);
    const auto images = read_images(inputs);
    const auto masks = predict(checkpoint, images, a.working_size);
    const auto out = output_dir(a.out, "predict");
    write_predictions(inputs, images, masks, out, a.overlay);
    std::cout << "wrote " << masks.size() << " masks to " << out.string() << "\n";
    return 0;
}

// --- ensemble-predict ----------------------------------------------------

struct EnsembleArgs {
    std::vector<std::string> members;
    std::string spec, mode, input, split = "test", out, overlay, save_spec;
    std::optional<int> working_size;
};

int run_ensemble(const EnsembleArgs& a) {
    EnsembleSpec spec;
    if (!a.spec.empty()) spec = EnsembleSpec::load(a.spec);
    for (const auto& m : a.members) spec.members.emplace_back(m);
    if (!a.mode.empty()) spec.mode = parse_fusion_mode(a.mode);
    if (a.working_size) spec.working_size = *a.working_size;
    spec.validate();
    if (!a.save_spec.empty()) spec.save(a.save_spec);

    const DivergentNets ensemble(spec);
    const auto inputs = list_inputs(a.input, a.split);
    const auto images = read_images(inputs);
    const auto masks = ensemble.predict(images);
    const auto out = output_dir(a.out, "ensemble");
    write_predictions(inputs, images, masks, out, a.overlay);
    std::cout << "wrote " << masks.size() << " masks to " << out.string() << " (" << spec.members.size()
              << " members, " << to_string(spec.mode) << " fusion)\n";
    return 0;
}

// --- evaluate ------------------------------------------------------------

struct EvaluateArgs {
    std::string pred, gt, split = "test", report;
    int classes = 2;
    int polyp_class = 1;
};

int run_evaluate(const EvaluateArgs& a) {
    MetricsReport report;
    if (fs::is_regular_file(a.gt)) {
        // Ground truth from a manifest split; predictions matched by image stem.
        std::vector<std::string> names;
        std::vector<LabelMask> preds, gts;
        for (const auto& e : DatasetManifest::load(a.gt).select(parse_split(a.split))) {
            const auto sample = load_sample(e);
            const auto pred_path = fs::path(a.pred) / (sample.name + ".png");
            if (!fs::exists(pred_path)) throw IoError(pred_path.string(), "no prediction for " + sample.name);
            names.push_back(sample.name);
            preds.push_back(read_mask(pred_path, a.classes));
            gts.push_back(sample.mask);
        }
        if (names.empty()) throw InvalidInput("split '" + a.split + "' of " + a.gt + " is empty");
        report = evaluate_masks(names, preds, gts, a.classes, a.polyp_class);
    } else {
        report = evaluate_dataset(a.pred, a.gt, a.classes, a.polyp_class);
    }
    std::cout << report.table();
    if (!a.report.empty()) {
        report.save(a.report);
        std::cout << "report written to " << a.report << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"divseg: polyp segmentation with TriUNet and DivergentNets ensembles"};
    app.require_subcommand(1);
    app.footer("Explicit flags override values read from --config files.\n"
               "When --out is omitted, output goes under $DIVSEG_OUT.\n"
               "Exit codes: 0 success, 1 bad input or usage, 2 internal failure.");

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic polyp-like dataset");
    synth_cmd->add_option("--config", synth.config, "Key-value config file")->check(CLI::ExistingFile);
    synth_cmd->add_option("--out", synth.out, "Output directory");
    synth_cmd->add_option("--count", synth.count, "Number of images");
    synth_cmd->add_option("--size", synth.size, "Image side length in pixels");
    synth_cmd->add_option("--seed", synth.seed, "Random seed");
    synth_cmd->add_option("--negative-fraction", synth.negative_fraction, "Fraction of images without polyps");
    synth_cmd->add_option("--noise", synth.noise, "Texture noise standard deviation");
    synth_cmd->add_option("--validation-count", synth.validation, "Images assigned to the validation split");
    synth_cmd->add_option("--test-count", synth.test, "Images assigned to the test split");

    ManifestArgs manifest;
    auto* manifest_cmd = app.add_subcommand("manifest", "Build a dataset manifest from images/ and masks/");
    manifest_cmd->add_option("--root", manifest.root, "Dataset root")->required()->check(CLI::ExistingDirectory);
    manifest_cmd->add_option("--rule", manifest.rule, "all=<split> | fractions=<val>,<test>[,<seed>] | directories");
    manifest_cmd->add_option("--out", manifest.out, "Manifest path (default <root>/manifest.tsv)");
    manifest_cmd->add_flag("--strict", manifest.strict, "Treat images without masks as errors");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train one network and keep checkpoints");
    train_cmd->add_option("--arch", tr.arch, "unet, unetpp, fpn, deeplabv3, deeplabv3plus or triunet");
    train_cmd->add_option("--manifest", tr.manifest, "Dataset manifest")->required();
    train_cmd->add_option("--config", tr.config, "Key-value run config");
    train_cmd->add_option("--out", tr.out, "Output directory for checkpoints");
    train_cmd->add_option("--epochs", tr.epochs, "Number of epochs")->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch-size", tr.batch_size, "Batch size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--working-size", tr.working_size, "Square training resolution")->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", tr.lr, "Initial learning rate");
    train_cmd->add_option("--lr-switch-epoch", tr.lr_switch_epoch, "Last epoch at the initial learning rate");
    train_cmd->add_option("--seed", tr.seed, "Random seed");
    train_cmd->add_option("--depth", tr.depth, "Encoder levels");
    train_cmd->add_option("--base-width", tr.base_width, "Channels at the first level");
    train_cmd->add_option("--keep", tr.keep, "Checkpoints to keep: all or best");
    train_cmd->add_flag("--no-augment", tr.no_augment, "Disable augmentation");
    train_cmd->add_flag("--quiet", tr.quiet, "Do not print per-epoch progress");

    PredictArgs pr;
    auto* predict_cmd = app.add_subcommand("predict", "Predict masks with one checkpoint");
    predict_cmd->add_option("--checkpoint", pr.checkpoint, "Checkpoint or training output directory")->required();
    predict_cmd->add_option("--input", pr.input, "Image directory or manifest")->required();
    predict_cmd->add_option("--split", pr.split, "Manifest split to predict");
    predict_cmd->add_option("--out", pr.out, "Output mask directory");
    predict_cmd->add_option("--overlay", pr.overlay, "Also write overlay images here");
    predict_cmd->add_option("--working-size", pr.working_size, "Network input resolution")->check(CLI::PositiveNumber);

    EnsembleArgs en;
    auto* ensemble_cmd = app.add_subcommand("ensemble-predict", "Predict masks with a DivergentNets ensemble");
    ensemble_cmd->add_option("--members", en.members, "Member checkpoints")->delimiter(',');
    ensemble_cmd->add_option("--spec", en.spec, "Ensemble spec file");
    ensemble_cmd->add_option("--mode", en.mode, "Fusion mode: soft or hard");
    ensemble_cmd->add_option("--input", en.input, "Image directory or manifest")->required();
    ensemble_cmd->add_option("--split", en.split, "Manifest split to predict");
    ensemble_cmd->add_option("--out", en.out, "Output mask directory");
    ensemble_cmd->add_option("--overlay", en.overlay, "Also write overlay images here");
    ensemble_cmd->add_option("--working-size", en.working_size, "Network input resolution")->check(CLI::PositiveNumber);
    ensemble_cmd->add_option("--save-spec", en.save_spec, "Write the resulting ensemble spec file");

    EvaluateArgs ev;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predicted masks against ground truth");
    evaluate_cmd->add_option("--pred", ev.pred, "Predicted mask directory")->required()->check(CLI::ExistingDirectory);
    evaluate_cmd->add_option("--gt", ev.gt, "Ground-truth mask directory or manifest")->required()->check(CLI::ExistingPath);
    evaluate_cmd->add_option("--split", ev.split, "Manifest split when --gt is a manifest");
    evaluate_cmd->add_option("--classes", ev.classes, "Number of classes");
    evaluate_cmd->add_option("--polyp-class", ev.polyp_class, "Class scored by the challenge metric");
    evaluate_cmd->add_option("--report", ev.report, "Report file (a .csv of per-image scores is written beside it)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth_cmd) return run_synth(synth);
        if (*manifest_cmd) return run_manifest(manifest);
        if (*train_cmd) return run_train(tr);
        if (*predict_cmd) return run_predict(pr);
        if (*ensemble_cmd) return run_ensemble(en);
        if (*evaluate_cmd) return run_evaluate(ev);
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
