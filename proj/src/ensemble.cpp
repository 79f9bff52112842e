#include "divseg/ensemble.hpp"

#include <algorithm>

#include "divseg/error.hpp"
#include "divseg/kv_config.hpp"
#include "divseg/predict.hpp"

namespace divseg {

namespace fs = std::filesystem;

std::string to_string(FusionMode mode) { return mode == FusionMode::SoftMean ? "soft" : "hard"; }

FusionMode parse_fusion_mode(const std::string& text) {
    if (text == "soft" || text == "soft-mean") return FusionMode::SoftMean;
    if (text == "hard" || text == "hard-vote") return FusionMode::HardVote;
    throw ConfigError("unknown fusion mode '" + text + "' (expected soft or hard)");
}

void EnsembleSpec::validate() const {
    if (members.empty()) throw ConfigError("ensemble needs at least one member");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("ensemble threshold must lie in (0,1)");
    if (working_size < 1) throw ConfigError("ensemble working size must be >= 1");
}

void EnsembleSpec::save(const fs::path& path) const {
    validate();
    KeyValueDoc doc;
    doc.set("mode", to_string(mode));
    doc.set("threshold", format_double(threshold));
    doc.set("working_size", std::to_string(working_size));
    for (const auto& m : members) doc.add("member", m.string());
    doc.save(path);
}

EnsembleSpec EnsembleSpec::load(const fs::path& path) {
    const auto doc = KeyValueDoc::load(path);
    EnsembleSpec spec;
    spec.mode = parse_fusion_mode(doc.get_string("mode", "soft"));
    spec.threshold = doc.get_double("threshold", spec.threshold);
    spec.working_size = doc.get_int("working_size", spec.working_size);
    for (const auto& m : doc.get_all("member")) {
        fs::path p(m);
        spec.members.push_back(p.is_relative() ? path.parent_path() / p : p);
    }
    spec.validate();
    return spec;
}

ProbMap mean_probs(std::span<const ProbMap> maps) {
    if (maps.empty()) throw InvalidInput("cannot fuse an empty list of maps");
    const auto& first = maps.front();
    for (const auto& m : maps) {
        if (m.classes() != first.classes() || m.height() != first.height() || m.width() != first.width()) {
            throw ShapeError("ensemble maps disagree in shape");
        }
    }
    const std::size_t n = first.data().size();
    std::vector<double> out(n);
    std::vector<double> values(maps.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t m = 0; m < maps.size(); ++m) values[m] = maps[m].data()[i];
        // Summing in sorted order makes the mean independent of member order.
        std::sort(values.begin(), values.end());
        double sum = 0.0;
        for (double v : values) sum += v;
        out[i] = sum / static_cast<double>(maps.size());
    }
    return ProbMap(first.classes(), first.height(), first.width(), std::move(out));
}

LabelMask threshold_mean(const ProbMap& mean, double threshold) {
    if (mean.classes() != 2) return argmax_mask(mean);
    const std::size_t n = mean.pixels();
    const auto fg = mean.data().subspan(n, n);
    std::vector<std::int32_t> labels(n);
    for (std::size_t p = 0; p < n; ++p) labels[p] = fg[p] >= threshold ? 1 : 0;
    return LabelMask(mean.height(), mean.width(), 2, std::move(labels));
}

LabelMask fuse_soft(std::span<const ProbMap> maps, double threshold) {
    return threshold_mean(mean_probs(maps), threshold);
}

LabelMask fuse_hard(std::span<const LabelMask> masks) {
    if (masks.empty()) throw InvalidInput("cannot fuse an empty list of masks");
    const auto& first = masks.front();
    std::vector<int> votes(first.size(), 0);
    for (const auto& m : masks) {
        if (m.height() != first.height() || m.width() != first.width()) {
            throw ShapeError("ensemble masks disagree in shape");
        }
        const auto d = m.data();
        for (std::size_t p = 0; p < d.size(); ++p) {
            if (d[p] != 0 && d[p] != 1) throw InvalidInput("hard-vote fusion requires binary masks");
            votes[p] += d[p];
        }
    }
    const int members = static_cast<int>(masks.size());
    std::vector<std::int32_t> labels(votes.size());
    for (std::size_t p = 0; p < votes.size(); ++p) labels[p] = 2 * votes[p] >= members ? 1 : 0;
    return LabelMask(first.height(), first.width(), 2, std::move(labels));
}

DivergentNets::DivergentNets(EnsembleSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    for (const auto& member : spec_.members) {
        try {
            members_.push_back(load_checkpoint(member));
        } catch (const UserError& e) {
            throw IoError(member.string(), std::string("cannot load ensemble member: ") + e.what());
        }
        const auto& first = members_.front().network->spec();
        const auto& cur = members_.back().network->spec();
        if (cur.classes != first.classes) {
            throw ConfigError("ensemble member " + member.string() + " has " + std::to_string(cur.classes) +
                              " classes, first member has " + std::to_string(first.classes));
        }
        if (cur.in_channels != first.in_channels) {
            throw ConfigError("ensemble member " + member.string() + " takes " + std::to_string(cur.in_channels) +
                              " input channels, first member takes " + std::to_string(first.in_channels));
        }
    }
    if (spec_.mode == FusionMode::HardVote && members_.front().network->spec().classes != 2) {
        throw ConfigError("hard-vote fusion requires binary members");
    }
}

std::vector<LabelMask> DivergentNets::predict(std::span<const ImageTensor> images) const {
    const int in_channels = members_.front().network->spec().in_channels;
    for (const auto& img : images) {
        if (img.channels() != in_channels) {
            throw ShapeError("image has " + std::to_string(img.channels()) + " channels, ensemble expects " +
                             std::to_string(in_channels));
        }
    }
    constexpr std::size_t kChunk = 32;
    std::vector<LabelMask> out;
    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
        std::vector<std::vector<ProbMap>> per_member;
        for (const auto& m : members_) {
            per_member.push_back(predict_working_probs(*m.network, chunk, spec_.working_size));
        }
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            std::vector<ProbMap> maps;
            for (const auto& pm : per_member) maps.push_back(pm[i]);
            const int h = chunk[i].height();
            const int w = chunk[i].width();
            if (spec_.mode == FusionMode::SoftMean) {
                out.push_back(threshold_mean(resize_probmap(mean_probs(maps), h, w), spec_.threshold));
            } else {
                std::vector<LabelMask> masks;
                for (const auto& p : maps) masks.push_back(argmax_mask(p));
                out.push_back(resize_mask_nearest(fuse_hard(masks), h, w));
            }
        }
    }
    return out;
}

LabelMask DivergentNets::predict(const ImageTensor& image) const {
    return predict(std::span<const ImageTensor>(&image, 1)).front();
}

LabelMask divergentnets_predict(const ImageTensor& image, const EnsembleSpec& spec) {
    return DivergentNets(spec).predict(image);
}

}  // namespace divseg
