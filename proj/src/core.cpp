#include "divseg/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "divseg/error.hpp"

namespace divseg {
namespace {

void check_dims(int height, int width, const char* what) {
    if (height < 1 || width < 1) {
        throw InvalidInput(std::string(what) + " dimensions must be >= 1, got " +
                           std::to_string(height) + "x" + std::to_string(width));
    }
}

// Half-pixel-centre sampling, clamped at the borders.
struct Tap {
    int lo;
    int hi;
    double frac;
};

std::vector<Tap> bilinear_taps(int src, int dst) {
    std::vector<Tap> taps(dst);
    const double scale = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        double pos = (i + 0.5) * scale - 0.5;
        pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
        const int lo = static_cast<int>(std::floor(pos));
        const int hi = std::min(lo + 1, src - 1);
        taps[i] = {lo, hi, pos - lo};
    }
    return taps;
}

template <typename T>
void resample_plane(const T* src, int sh, int sw, T* dst, int dh, int dw) {
    const auto ys = bilinear_taps(sh, dh);
    const auto xs = bilinear_taps(sw, dw);
    for (int y = 0; y < dh; ++y) {
        const T* r0 = src + static_cast<std::size_t>(ys[y].lo) * sw;
        const T* r1 = src + static_cast<std::size_t>(ys[y].hi) * sw;
        const double fy = ys[y].frac;
        for (int x = 0; x < dw; ++x) {
            const double fx = xs[x].frac;
            const double top = r0[xs[x].lo] * (1.0 - fx) + r0[xs[x].hi] * fx;
            const double bot = r1[xs[x].lo] * (1.0 - fx) + r1[xs[x].hi] * fx;
            dst[static_cast<std::size_t>(y) * dw + x] = static_cast<T>(top * (1.0 - fy) + bot * fy);
        }
    }
}

int nearest_index(int i, int src, int dst) {
    const auto idx = static_cast<int>(std::floor((i + 0.5) * src / dst));
    return std::min(idx, src - 1);
}

}  // namespace

ImageTensor::ImageTensor(int height, int width, int channels)
    : ImageTensor(height, width, channels,
                  std::vector<float>(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0) *
                                     std::max(channels, 0))) {}

ImageTensor::ImageTensor(int height, int width, int channels, std::vector<float> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_dims(height, width, "image");
    if (channels < 1) throw InvalidInput("image channels must be >= 1");
    if (data_.size() != static_cast<std::size_t>(height) * width * channels) {
        throw InvalidInput("image data size does not match " + std::to_string(channels) + "x" +
                           std::to_string(height) + "x" + std::to_string(width));
    }
}

void ImageTensor::validate() const {
    for (float v : data_) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw InvalidInput("image value " + std::to_string(v) + " outside [0,1]");
        }
    }
}

LabelMask::LabelMask(int height, int width, int classes, std::int32_t fill)
    : LabelMask(height, width, classes,
                std::vector<std::int32_t>(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0),
                                          fill)) {}

LabelMask::LabelMask(int height, int width, int classes, std::vector<std::int32_t> data)
    : height_(height), width_(width), classes_(classes), data_(std::move(data)) {
    check_dims(height, width, "mask");
    if (classes < 2) throw InvalidInput("mask class count must be >= 2, got " + std::to_string(classes));
    if (data_.size() != static_cast<std::size_t>(height) * width) {
        throw InvalidInput("mask data size does not match " + std::to_string(height) + "x" +
                           std::to_string(width));
    }
    for (auto v : data_) {
        if (v < 0 || v >= classes) {
            throw InvalidInput("mask label " + std::to_string(v) + " outside {0.." +
                               std::to_string(classes - 1) + "}");
        }
    }
}

void LabelMask::set(int y, int x, std::int32_t label) {
    if (label < 0 || label >= classes_) throw InvalidInput("mask label " + std::to_string(label) + " out of range");
    data_[static_cast<std::size_t>(y) * width_ + x] = label;
}

std::size_t LabelMask::count(std::int32_t label) const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), label));
}

ClassMap::ClassMap(int classes, int height, int width, std::vector<double> data)
    : classes_(classes), height_(height), width_(width), data_(std::move(data)) {
    check_dims(height, width, "class map");
    if (classes < 1) throw InvalidInput("class map needs at least one class");
    if (data_.size() != static_cast<std::size_t>(classes) * height * width) {
        throw InvalidInput("class map data size does not match " + std::to_string(classes) + "x" +
                           std::to_string(height) + "x" + std::to_string(width));
    }
}

LogitMap::LogitMap(int classes, int height, int width, std::vector<double> data)
    : ClassMap(classes, height, width, std::move(data)) {
    for (double v : data_) {
        if (!std::isfinite(v)) throw InvalidInput("non-finite logit");
    }
}

ProbMap::ProbMap(int classes, int height, int width, std::vector<double> data)
    : ClassMap(classes, height, width, std::move(data)) {
    const std::size_t n = pixels();
    for (std::size_t p = 0; p < n; ++p) {
        double sum = 0.0;
        for (int k = 0; k < classes_; ++k) {
            const double v = data_[k * n + p];
            if (!std::isfinite(v) || v < -kSumTolerance || v > 1.0 + kSumTolerance) {
                throw InvalidInput("probability " + std::to_string(v) + " outside [0,1]");
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > kSumTolerance) {
            throw InvalidInput("pixel probabilities sum to " + std::to_string(sum));
        }
    }
}

ProbMap ProbMap::one_hot(const LabelMask& mask) {
    const std::size_t n = static_cast<std::size_t>(mask.height()) * mask.width();
    std::vector<double> data(n * mask.classes(), 0.0);
    const auto labels = mask.data();
    for (std::size_t p = 0; p < n; ++p) data[labels[p] * n + p] = 1.0;
    return ProbMap(mask.classes(), mask.height(), mask.width(), std::move(data));
}

ProbMap softmax_over_classes(const LogitMap& logits) {
    const int k = logits.classes();
    const std::size_t n = logits.pixels();
    const auto in = logits.data();
    std::vector<double> out(in.size());
    for (std::size_t p = 0; p < n; ++p) {
        double peak = in[p];
        for (int c = 1; c < k; ++c) peak = std::max(peak, in[c * n + p]);
        double sum = 0.0;
        for (int c = 0; c < k; ++c) {
            out[c * n + p] = std::exp(in[c * n + p] - peak);
            sum += out[c * n + p];
        }
        for (int c = 0; c < k; ++c) out[c * n + p] /= sum;
    }
    return ProbMap(k, logits.height(), logits.width(), std::move(out));
}

LabelMask argmax_mask(const ProbMap& probs) {
    const int k = probs.classes();
    const std::size_t n = probs.pixels();
    const auto in = probs.data();
    std::vector<std::int32_t> labels(n);
    for (std::size_t p = 0; p < n; ++p) {
        int best = 0;
        for (int c = 1; c < k; ++c) {
            if (in[c * n + p] > in[best * n + p]) best = c;
        }
        labels[p] = best;
    }
    return LabelMask(probs.height(), probs.width(), std::max(k, 2), std::move(labels));
}

ImageTensor resize_image(const ImageTensor& img, int height, int width) {
    check_dims(height, width, "resize target");
    if (height == img.height() && width == img.width()) return img;
    ImageTensor out(height, width, img.channels());
    const std::size_t src_plane = static_cast<std::size_t>(img.height()) * img.width();
    const std::size_t dst_plane = static_cast<std::size_t>(height) * width;
    for (int c = 0; c < img.channels(); ++c) {
        resample_plane(img.data().data() + c * src_plane, img.height(), img.width(),
                       out.data().data() + c * dst_plane, height, width);
    }
    return out;
}

ProbMap resize_probmap(const ProbMap& probs, int height, int width) {
    check_dims(height, width, "resize target");
    if (height == probs.height() && width == probs.width()) return probs;
    const int k = probs.classes();
    const std::size_t src_plane = probs.pixels();
    const std::size_t dst_plane = static_cast<std::size_t>(height) * width;
    std::vector<double> out(dst_plane * k);
    for (int c = 0; c < k; ++c) {
        resample_plane(probs.data().data() + c * src_plane, probs.height(), probs.width(),
                       out.data() + c * dst_plane, height, width);
    }
    for (std::size_t p = 0; p < dst_plane; ++p) {
        double sum = 0.0;
        for (int c = 0; c < k; ++c) sum += out[c * dst_plane + p];
        for (int c = 0; c < k; ++c) out[c * dst_plane + p] /= sum;
    }
    return ProbMap(k, height, width, std::move(out));
}

LabelMask resize_mask_nearest(const LabelMask& mask, int height, int width) {
    check_dims(height, width, "resize target");
    if (height == mask.height() && width == mask.width()) return mask;
    std::vector<std::int32_t> out(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        const int sy = nearest_index(y, mask.height(), height);
        for (int x = 0; x < width; ++x) {
            out[static_cast<std::size_t>(y) * width + x] = mask.at(sy, nearest_index(x, mask.width(), width));
        }
    }
    return LabelMask(height, width, mask.classes(), std::move(out));
}

}  // namespace divseg
