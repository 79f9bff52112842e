#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace divseg {

/// Floating-point image with values in [0,1], stored planar (channel, row, column).
class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int height, int width, int channels = 3);
    ImageTensor(int height, int width, int channels, std::vector<float> data);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::span<const float> data() const noexcept { return data_; }
    std::span<float> data() noexcept { return data_; }

    float at(int c, int y, int x) const { return data_[index(c, y, x)]; }
    float& at(int c, int y, int x) { return data_[index(c, y, x)]; }

    // Throws InvalidInput on non-finite or out-of-range values.
    void validate() const;

    bool operator==(const ImageTensor&) const = default;

private:
    std::size_t index(int c, int y, int x) const noexcept {
        return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

/// Per-pixel class indices in {0..classes-1}.
class LabelMask {
public:
    LabelMask() = default;
    LabelMask(int height, int width, int classes = 2, std::int32_t fill = 0);
    LabelMask(int height, int width, int classes, std::vector<std::int32_t> data);

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int classes() const noexcept { return classes_; }
    std::size_t size() const noexcept { return data_.size(); }
    std::span<const std::int32_t> data() const noexcept { return data_; }

    std::int32_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
    void set(int y, int x, std::int32_t label);

    std::size_t count(std::int32_t label) const;

    bool operator==(const LabelMask&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    int classes_ = 0;
    std::vector<std::int32_t> data_;
};

/// Shared storage for K×H×W class-major score maps.
class ClassMap {
public:
    int classes() const noexcept { return classes_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t pixels() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    std::span<const double> data() const noexcept { return data_; }

    double at(int k, int y, int x) const { return data_[index(k, y, x)]; }

    bool operator==(const ClassMap&) const = default;

protected:
    ClassMap() = default;
    ClassMap(int classes, int height, int width, std::vector<double> data);

    std::size_t index(int k, int y, int x) const noexcept {
        return (static_cast<std::size_t>(k) * height_ + y) * width_ + x;
    }

    int classes_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

/// Unnormalized network scores. All values finite.
class LogitMap : public ClassMap {
public:
    LogitMap() = default;
    LogitMap(int classes, int height, int width, std::vector<double> data);
};

/// Per-pixel class distributions; each pixel's K values sum to 1 within 1e-6.
class ProbMap : public ClassMap {
public:
    static constexpr double kSumTolerance = 1e-6;

    ProbMap() = default;
    ProbMap(int classes, int height, int width, std::vector<double> data);

    // Builds a one-hot map from a hard mask.
    static ProbMap one_hot(const LabelMask& mask);
};

ProbMap softmax_over_classes(const LogitMap& logits);

// Ties go to the lowest class index.
LabelMask argmax_mask(const ProbMap& probs);

ImageTensor resize_image(const ImageTensor& img, int height, int width);

// Bilinear per channel, then renormalized per pixel.
ProbMap resize_probmap(const ProbMap& probs, int height, int width);

// Source index for destination index i is floor((i + 0.5) * src / dst).
LabelMask resize_mask_nearest(const LabelMask& mask, int height, int width);

}  // namespace divseg
