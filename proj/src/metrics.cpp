#include "divseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "divseg/error.hpp"
#include "divseg/image_io.hpp"

namespace divseg {

namespace fs = std::filesystem;

ConfusionCounts::ConfusionCounts(int classes)
    : classes_(classes), cells_(static_cast<std::size_t>(std::max(classes, 0)) * std::max(classes, 0), 0) {
    if (classes < 2) throw InvalidInput("confusion needs at least two classes");
}

void ConfusionCounts::add(int gt, int pred, std::uint64_t n) {
    if (gt < 0 || gt >= classes_ || pred < 0 || pred >= classes_) {
        throw InvalidInput("class index outside {0.." + std::to_string(classes_ - 1) + "}");
    }
    cells_[static_cast<std::size_t>(gt) * classes_ + pred] += n;
}

std::uint64_t ConfusionCounts::tp(int c) const { return cell(c, c); }

std::uint64_t ConfusionCounts::fp(int c) const {
    std::uint64_t n = 0;
    for (int g = 0; g < classes_; ++g) {
        if (g != c) n += cell(g, c);
    }
    return n;
}

std::uint64_t ConfusionCounts::fn(int c) const {
    std::uint64_t n = 0;
    for (int p = 0; p < classes_; ++p) {
        if (p != c) n += cell(c, p);
    }
    return n;
}

std::uint64_t ConfusionCounts::tn(int c) const { return total() - tp(c) - fp(c) - fn(c); }

std::uint64_t ConfusionCounts::total() const {
    std::uint64_t n = 0;
    for (auto v : cells_) n += v;
    return n;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
    if (other.classes_ != classes_) throw InvalidInput("cannot pool confusion counts with different class counts");
    for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i] += other.cells_[i];
    return *this;
}

ConfusionCounts confusion(const LabelMask& pred, const LabelMask& gt, int classes) {
    if (pred.height() != gt.height() || pred.width() != gt.width()) {
        throw ShapeError("prediction " + std::to_string(pred.height()) + "x" + std::to_string(pred.width()) +
                         " does not match ground truth " + std::to_string(gt.height()) + "x" +
                         std::to_string(gt.width()));
    }
    ConfusionCounts counts(classes);
    const auto p = pred.data();
    const auto g = gt.data();
    for (std::size_t i = 0; i < p.size(); ++i) counts.add(g[i], p[i]);
    return counts;
}

ClassMetrics per_class_metrics(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
    if (tp + fp + fn == 0) return {1.0, 1.0, 1.0, 1.0, 1.0};
    const auto t = static_cast<double>(tp);
    const auto p = static_cast<double>(fp);
    const auto n = static_cast<double>(fn);
    ClassMetrics m;
    m.iou = t / (t + p + n);
    m.precision = tp + fp > 0 ? t / (t + p) : 0.0;
    m.recall = tp + fn > 0 ? t / (t + n) : 0.0;
    m.f1 = 2.0 * t / (2.0 * t + p + n);
    m.f2 = 5.0 * t / (5.0 * t + 4.0 * n + p);
    return m;
}

ClassMetrics per_class_metrics(const ConfusionCounts& counts, int c) {
    if (c < 0 || c >= counts.classes()) throw InvalidInput("class " + std::to_string(c) + " out of range");
    return per_class_metrics(counts.tp(c), counts.fp(c), counts.fn(c));
}

AllClassMetrics all_class_metrics(const ConfusionCounts& counts) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (int c = 0; c < counts.classes(); ++c) {
        tp += counts.tp(c);
        fp += counts.fp(c);
        fn += counts.fn(c);
    }
    const auto m = per_class_metrics(tp, fp, fn);
    return {m.iou, m.f1, m.recall, m.precision};
}

ChallengeScore challenge_score(std::span<const ImageScore> images) {
    if (images.empty()) throw InvalidInput("challenge score needs at least one image");
    double sum = 0.0;
    for (const auto& s : images) sum += s.score();
    const double mean = sum / static_cast<double>(images.size());
    double var = 0.0;
    for (const auto& s : images) var += (s.score() - mean) * (s.score() - mean);
    return {mean, std::sqrt(var / static_cast<double>(images.size()))};
}

ImageScore image_score(const std::string& name, const LabelMask& pred, const LabelMask& gt, int polyp_class) {
    const auto counts = confusion(pred, gt, std::max({pred.classes(), gt.classes(), 2}));
    const auto m = per_class_metrics(counts, polyp_class);
    return {name, m.f1, m.f2, m.precision, m.recall};
}

KeyValueDoc MetricsReport::to_doc() const {
    KeyValueDoc doc;
    doc.set("classes", std::to_string(classes));
    doc.set("polyp_class", std::to_string(polyp_class));
    doc.set("images", std::to_string(images.size()));
    for (int c = 0; c < static_cast<int>(per_class.size()); ++c) {
        const auto prefix = "class." + std::to_string(c) + ".";
        const auto& m = per_class[c];
        doc.set(prefix + "iou", format_double(m.iou));
        doc.set(prefix + "f1", format_double(m.f1));
        doc.set(prefix + "f2", format_double(m.f2));
        doc.set(prefix + "precision", format_double(m.precision));
        doc.set(prefix + "recall", format_double(m.recall));
    }
    doc.set("all.iou", format_double(all.iou));
    doc.set("all.f1", format_double(all.f1));
    doc.set("all.recall", format_double(all.recall));
    doc.set("all.precision", format_double(all.precision));
    doc.set("challenge.score_mean", format_double(challenge.mean));
    doc.set("challenge.score_sd", format_double(challenge.sd));
    return doc;
}

std::string MetricsReport::images_csv() const {
    std::ostringstream out;
    out << "image,f1,f2,ppv,recall,score\n";
    for (const auto& s : images) {
        out << s.image << ',' << format_double(s.f1) << ',' << format_double(s.f2) << ',' << format_double(s.ppv)
            << ',' << format_double(s.recall) << ',' << format_double(s.score()) << '\n';
    }
    return out.str();
}

std::string MetricsReport::table() const {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << std::left << std::setw(12) << "scope" << std::right << std::setw(10) << "iou" << std::setw(10) << "f1"
        << std::setw(10) << "recall" << std::setw(10) << "precision" << std::setw(10) << "f2" << '\n';
    for (int c = 0; c < static_cast<int>(per_class.size()); ++c) {
        const auto& m = per_class[c];
        const std::string name = c == polyp_class ? "polyp" : (c == 0 ? "background" : "class." + std::to_string(c));
        out << std::left << std::setw(12) << name << std::right << std::setw(10) << m.iou << std::setw(10) << m.f1
            << std::setw(10) << m.recall << std::setw(10) << m.precision << std::setw(10) << m.f2 << '\n';
    }
    out << std::left << std::setw(12) << "all" << std::right << std::setw(10) << all.iou << std::setw(10) << all.f1
        << std::setw(10) << all.recall << std::setw(10) << all.precision << std::setw(10) << "-" << '\n';
    out << "challenge.score_mean " << challenge.mean << "  challenge.score_sd " << challenge.sd << "  images "
        << images.size() << '\n';
    return out.str();
}

void MetricsReport::save(const fs::path& report_path) const {
    to_doc().save(report_path);
    auto csv_path = report_path;
    csv_path.replace_extension(".csv");
    std::ofstream csv(csv_path);
    if (!csv) throw IoError(csv_path.string(), "cannot open for writing");
    csv << images_csv();
}

MetricsAccumulator::MetricsAccumulator(int classes, int polyp_class)
    : classes_(classes), polyp_class_(polyp_class), pooled_(classes) {
    if (polyp_class < 0 || polyp_class >= classes) throw InvalidInput("polyp class out of range");
}

void MetricsAccumulator::add(const std::string& name, const LabelMask& pred, const LabelMask& gt) {
    const auto counts = confusion(pred, gt, classes_);
    pooled_ += counts;
    const auto m = per_class_metrics(counts, polyp_class_);
    images_.push_back({name, m.f1, m.f2, m.precision, m.recall});
}

MetricsReport MetricsAccumulator::report() const {
    if (images_.empty()) throw InvalidInput("no images to evaluate");
    MetricsReport r;
    r.classes = classes_;
    r.polyp_class = polyp_class_;
    r.counts = pooled_;
    for (int c = 0; c < classes_; ++c) r.per_class.push_back(per_class_metrics(pooled_, c));
    r.all = all_class_metrics(pooled_);
    r.images = images_;
    r.challenge = challenge_score(images_);
    return r;
}

MetricsReport evaluate_masks(std::span<const std::string> names, std::span<const LabelMask> preds,
                             std::span<const LabelMask> gts, int classes, int polyp_class) {
    if (names.size() != preds.size() || preds.size() != gts.size()) {
        throw InvalidInput("names, predictions and ground truths differ in count");
    }
    MetricsAccumulator acc(classes, polyp_class);
    for (std::size_t i = 0; i < preds.size(); ++i) acc.add(names[i], preds[i], gts[i]);
    return acc.report();
}

namespace {

std::map<std::string, fs::path> masks_by_stem(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError(dir.string(), "not a directory");
    std::map<std::string, fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) out[entry.path().stem().string()] = entry.path();
    }
    if (out.empty()) throw IoError(dir.string(), "directory holds no mask files");
    return out;
}

}  // namespace

MetricsReport evaluate_dataset(const fs::path& pred_dir, const fs::path& gt_dir, int classes, int polyp_class) {
    if (classes != 2) throw InvalidInput("mask files are binary; evaluation from files supports 2 classes");
    const auto preds = masks_by_stem(pred_dir);
    const auto gts = masks_by_stem(gt_dir);

    std::string missing;
    for (const auto& [stem, _] : gts) {
        if (!preds.count(stem)) missing += (missing.empty() ? "" : ", ") + stem;
    }
    std::string extra;
    for (const auto& [stem, _] : preds) {
        if (!gts.count(stem)) extra += (extra.empty() ? "" : ", ") + stem;
    }
    if (!missing.empty() || !extra.empty()) {
        std::string msg = "unmatched mask files;";
        if (!missing.empty()) msg += " no prediction for: " + missing + ";";
        if (!extra.empty()) msg += " no ground truth for: " + extra + ";";
        throw InvalidInput(msg);
    }

    MetricsAccumulator acc(classes, polyp_class);
    for (const auto& [stem, gt_path] : gts) {
        auto pred = read_mask(preds.at(stem), classes);
        auto gt = read_mask(gt_path, classes);
        acc.add(stem, pred, gt);
    }
    return acc.report();
}

}  // namespace divseg
