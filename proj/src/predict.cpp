#include "divseg/predict.hpp"

#include <algorithm>
#include <cstring>

#include "divseg/error.hpp"

namespace divseg {

torch::Tensor images_to_batch(std::span<const ImageTensor> images) {
    if (images.empty()) throw InvalidInput("empty image batch");
    const auto& first = images.front();
    auto batch = torch::empty({static_cast<int64_t>(images.size()), first.channels(), first.height(), first.width()},
                              torch::kFloat32);
    const auto per_image = static_cast<std::size_t>(first.channels()) * first.height() * first.width();
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& img = images[i];
        if (img.channels() != first.channels() || img.height() != first.height() || img.width() != first.width()) {
            throw ShapeError("images in a batch must share size and channel count");
        }
        std::memcpy(batch.data_ptr<float>() + i * per_image, img.data().data(), per_image * sizeof(float));
    }
    return batch;
}

torch::Tensor masks_to_labels(std::span<const LabelMask> masks) {
    if (masks.empty()) throw InvalidInput("empty mask batch");
    const auto& first = masks.front();
    auto labels = torch::empty({static_cast<int64_t>(masks.size()), first.height(), first.width()}, torch::kInt64);
    auto* out = labels.data_ptr<int64_t>();
    for (const auto& m : masks) {
        if (m.height() != first.height() || m.width() != first.width()) {
            throw ShapeError("masks in a batch must share size");
        }
        out = std::copy(m.data().begin(), m.data().end(), out);
    }
    return labels;
}

LogitMap logits_from_batch(const torch::Tensor& logits, int64_t index) {
    const auto one = logits[index].to(torch::kFloat64).contiguous();
    const auto* p = one.data_ptr<double>();
    std::vector<double> data(p, p + one.numel());
    return LogitMap(static_cast<int>(one.size(0)), static_cast<int>(one.size(1)), static_cast<int>(one.size(2)),
                    std::move(data));
}

std::vector<ProbMap> predict_working_probs(SegmentationNetwork& net, std::span<const ImageTensor> images,
                                           int working_size, int batch_size) {
    if (working_size < 1) throw InvalidInput("working size must be >= 1");
    batch_size = std::max(batch_size, 1);
    torch::NoGradGuard no_grad;
    net.eval();
    std::vector<ProbMap> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const auto end = std::min(images.size(), start + batch_size);
        std::vector<ImageTensor> resized;
        for (std::size_t i = start; i < end; ++i) {
            images[i].validate();
            resized.push_back(resize_image(images[i], working_size, working_size));
        }
        const auto logits = net.forward(images_to_batch(resized));
        for (int64_t i = 0; i < logits.size(0); ++i) out.push_back(softmax_over_classes(logits_from_batch(logits, i)));
    }
    return out;
}

std::vector<ProbMap> predict_probs(SegmentationNetwork& net, std::span<const ImageTensor> images, int working_size,
                                   int batch_size) {
    auto probs = predict_working_probs(net, images, working_size, batch_size);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        probs[i] = resize_probmap(probs[i], images[i].height(), images[i].width());
    }
    return probs;
}

std::vector<LabelMask> predict(SegmentationNetwork& net, std::span<const ImageTensor> images, int working_size,
                               int batch_size) {
    std::vector<LabelMask> masks;
    for (const auto& p : predict_probs(net, images, working_size, batch_size)) masks.push_back(argmax_mask(p));
    return masks;
}

std::vector<LabelMask> predict(const LoadedCheckpoint& checkpoint, std::span<const ImageTensor> images,
                               int working_size, int batch_size) {
    const auto& spec = checkpoint.network->spec();
    for (const auto& img : images) {
        if (img.channels() != spec.in_channels) {
            throw ShapeError("image has " + std::to_string(img.channels()) + " channels, checkpoint expects " +
                             std::to_string(spec.in_channels));
        }
    }
    return predict(*checkpoint.network, images, working_size, batch_size);
}

}  // namespace divseg
