#include "divseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "divseg/error.hpp"

namespace divseg {
namespace {

using Params = std::map<std::string, double>;

// Default parameters per op; the key set is also the accepted key set.
const std::map<std::string, Params>& op_defaults() {
    static const std::map<std::string, Params> defaults = {
        {"horizontal_flip", {}},
        {"shift_scale_rotate", {{"shift", 0.0625}, {"scale", 0.1}, {"rotate", 15.0}}},
        {"perspective", {{"scale", 0.05}}},
        {"resize", {}},
        {"brightness_contrast", {{"brightness", 0.2}, {"contrast", 0.2}}},
        {"random_brightness", {{"limit", 0.2}}},
        {"random_contrast", {{"limit", 0.2}}},
        {"random_gamma", {{"min", 0.8}, {"max", 1.2}}},
        {"gaussian_noise", {{"sigma_min", 0.01}, {"sigma_max", 0.05}}},
        {"blur", {{"max_kernel", 5.0}}},
        {"motion_blur", {{"max_kernel", 5.0}}},
        {"sharpen", {{"alpha_min", 0.2}, {"alpha_max", 0.5}}},
        {"clahe", {{"clip_limit", 4.0}, {"tile", 8.0}}},
        {"hue_saturation", {{"hue", 10.0}, {"saturation", 0.2}, {"value", 0.1}}},
    };
    return defaults;
}

cv::Mat to_mat(const ImageTensor& img) {
    cv::Mat m(img.height(), img.width(), CV_32FC(img.channels()));
    for (int y = 0; y < img.height(); ++y) {
        auto* row = m.ptr<float>(y);
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < img.channels(); ++c) row[x * img.channels() + c] = img.at(c, y, x);
        }
    }
    return m;
}

ImageTensor from_mat(const cv::Mat& m) {
    ImageTensor img(m.rows, m.cols, m.channels());
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<float>(y);
        for (int x = 0; x < m.cols; ++x) {
            for (int c = 0; c < m.channels(); ++c) {
                const float v = row[x * m.channels() + c];
                img.at(c, y, x) = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
            }
        }
    }
    return img;
}

cv::Mat mask_to_mat(const LabelMask& mask) {
    cv::Mat m(mask.height(), mask.width(), CV_8UC1);
    for (int y = 0; y < mask.height(); ++y) {
        auto* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.width(); ++x) row[x] = static_cast<std::uint8_t>(mask.at(y, x));
    }
    return m;
}

LabelMask mask_from_mat(const cv::Mat& m, int classes) {
    std::vector<std::int32_t> labels(static_cast<std::size_t>(m.rows) * m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < m.cols; ++x) labels[static_cast<std::size_t>(y) * m.cols + x] = row[x];
    }
    return LabelMask(m.rows, m.cols, classes, std::move(labels));
}

struct Pair {
    cv::Mat image;  // CV_32FC(channels), values nominally in [0,1]
    cv::Mat mask;   // CV_8UC1
};

void warp_affine(Pair& p, const cv::Mat& m) {
    cv::Mat img, mask;
    cv::warpAffine(p.image, img, m, p.image.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
    cv::warpAffine(p.mask, mask, m, p.mask.size(), cv::INTER_NEAREST, cv::BORDER_REFLECT_101);
    p.image = img;
    p.mask = mask;
}

void clip(cv::Mat& img) {
    cv::min(img, 1.0, img);
    cv::max(img, 0.0, img);
}

int odd_kernel(Rng& rng, double max_kernel) {
    const int hi = std::max(3, static_cast<int>(max_kernel));
    int k = rng.integer(1, (hi - 1) / 2) * 2 + 1;
    return k;
}

// Runs on a 3-channel RGB float image; grayscale images go through a
// temporary RGB copy.
template <typename Fn>
void with_rgb(cv::Mat& img, Fn&& fn) {
    if (img.channels() == 3) {
        fn(img);
        return;
    }
    if (img.channels() != 1) return;
    cv::Mat rgb;
    cv::cvtColor(img, rgb, cv::COLOR_GRAY2RGB);
    fn(rgb);
    cv::cvtColor(rgb, img, cv::COLOR_RGB2GRAY);
}

void apply(const AugmentOp& op, Pair& p, Rng& rng) {
    const int w = p.image.cols;
    const int h = p.image.rows;
    const auto& name = op.name;

    if (name == "horizontal_flip") {
        cv::flip(p.image, p.image, 1);
        cv::flip(p.mask, p.mask, 1);
    } else if (name == "shift_scale_rotate") {
        const double shift = op.param("shift", 0.0625);
        const double scale = 1.0 + rng.uniform(-op.param("scale", 0.1), op.param("scale", 0.1));
        const double angle = rng.uniform(-op.param("rotate", 15.0), op.param("rotate", 15.0));
        const double dx = rng.uniform(-shift, shift) * w;
        const double dy = rng.uniform(-shift, shift) * h;
        cv::Mat m = cv::getRotationMatrix2D(cv::Point2f((w - 1) * 0.5f, (h - 1) * 0.5f), angle, scale);
        m.at<double>(0, 2) += dx;
        m.at<double>(1, 2) += dy;
        warp_affine(p, m);
    } else if (name == "perspective") {
        const double s = op.param("scale", 0.05);
        const cv::Point2f src[4] = {{0, 0}, {float(w - 1), 0}, {float(w - 1), float(h - 1)}, {0, float(h - 1)}};
        cv::Point2f dst[4];
        const float sx[4] = {1, -1, -1, 1};
        const float sy[4] = {1, 1, -1, -1};
        for (int i = 0; i < 4; ++i) {
            dst[i] = {src[i].x + sx[i] * static_cast<float>(rng.uniform(0.0, s) * w),
                      src[i].y + sy[i] * static_cast<float>(rng.uniform(0.0, s) * h)};
        }
        const cv::Mat m = cv::getPerspectiveTransform(src, dst);
        cv::Mat img, mask;
        cv::warpPerspective(p.image, img, m, p.image.size(), cv::INTER_LINEAR, cv::BORDER_REFLECT_101);
        cv::warpPerspective(p.mask, mask, m, p.mask.size(), cv::INTER_NEAREST, cv::BORDER_REFLECT_101);
        p.image = img;
        p.mask = mask;
    } else if (name == "resize") {
        // The fixed working-size resize happens in the training loop.
    } else if (name == "brightness_contrast") {
        const double alpha = 1.0 + rng.uniform(-op.param("contrast", 0.2), op.param("contrast", 0.2));
        const double beta = rng.uniform(-op.param("brightness", 0.2), op.param("brightness", 0.2));
        p.image.convertTo(p.image, -1, alpha, beta);
    } else if (name == "random_brightness") {
        const double beta = rng.uniform(-op.param("limit", 0.2), op.param("limit", 0.2));
        p.image.convertTo(p.image, -1, 1.0, beta);
    } else if (name == "random_contrast") {
        const double alpha = 1.0 + rng.uniform(-op.param("limit", 0.2), op.param("limit", 0.2));
        const cv::Scalar mean = cv::mean(p.image);
        cv::Mat centred = p.image - mean;
        p.image = centred * alpha + mean;
    } else if (name == "random_gamma") {
        const double gamma = rng.uniform(op.param("min", 0.8), op.param("max", 1.2));
        clip(p.image);
        cv::pow(p.image, gamma, p.image);
    } else if (name == "gaussian_noise") {
        const double sigma = rng.uniform(op.param("sigma_min", 0.01), op.param("sigma_max", 0.05));
        auto* data = p.image.ptr<float>(0);
        const auto n = p.image.total() * p.image.channels();
        for (std::size_t i = 0; i < n; ++i) data[i] += static_cast<float>(sigma * rng.normal());
    } else if (name == "blur") {
        const int k = odd_kernel(rng, op.param("max_kernel", 5.0));
        cv::blur(p.image, p.image, cv::Size(k, k), cv::Point(-1, -1), cv::BORDER_REFLECT_101);
    } else if (name == "motion_blur") {
        const int k = odd_kernel(rng, op.param("max_kernel", 5.0));
        cv::Mat kernel = cv::Mat::zeros(k, k, CV_32F);
        switch (rng.integer(0, 3)) {
            case 0: kernel.row(k / 2).setTo(1.0f); break;
            case 1: kernel.col(k / 2).setTo(1.0f); break;
            case 2:
                for (int i = 0; i < k; ++i) kernel.at<float>(i, i) = 1.0f;
                break;
            default:
                for (int i = 0; i < k; ++i) kernel.at<float>(i, k - 1 - i) = 1.0f;
                break;
        }
        kernel /= static_cast<float>(k);
        cv::filter2D(p.image, p.image, -1, kernel, cv::Point(-1, -1), 0.0, cv::BORDER_REFLECT_101);
    } else if (name == "sharpen") {
        const float alpha = static_cast<float>(rng.uniform(op.param("alpha_min", 0.2), op.param("alpha_max", 0.5)));
        cv::Mat kernel = (cv::Mat_<float>(3, 3) << -1, -1, -1, -1, 9, -1, -1, -1, -1);
        cv::Mat identity = cv::Mat::zeros(3, 3, CV_32F);
        identity.at<float>(1, 1) = 1.0f;
        kernel = (1.0f - alpha) * identity + alpha * kernel;
        cv::filter2D(p.image, p.image, -1, kernel, cv::Point(-1, -1), 0.0, cv::BORDER_REFLECT_101);
    } else if (name == "clahe") {
        const double clip_limit = rng.uniform(1.0, std::max(1.0, op.param("clip_limit", 4.0)));
        const int tile = std::max(1, static_cast<int>(op.param("tile", 8.0)));
        clip(p.image);
        with_rgb(p.image, [&](cv::Mat& rgb) {
            cv::Mat u8, lab;
            rgb.convertTo(u8, CV_8U, 255.0);
            cv::cvtColor(u8, lab, cv::COLOR_RGB2Lab);
            std::vector<cv::Mat> planes;
            cv::split(lab, planes);
            auto clahe = cv::createCLAHE(clip_limit, cv::Size(tile, tile));
            clahe->apply(planes[0], planes[0]);
            cv::merge(planes, lab);
            cv::cvtColor(lab, u8, cv::COLOR_Lab2RGB);
            u8.convertTo(rgb, CV_32F, 1.0 / 255.0);
        });
    } else if (name == "hue_saturation") {
        const double hue = rng.uniform(-op.param("hue", 10.0), op.param("hue", 10.0));
        const double sat = 1.0 + rng.uniform(-op.param("saturation", 0.2), op.param("saturation", 0.2));
        const double val = 1.0 + rng.uniform(-op.param("value", 0.1), op.param("value", 0.1));
        clip(p.image);
        if (p.image.channels() == 3) {
            cv::Mat hsv;
            cv::cvtColor(p.image, hsv, cv::COLOR_RGB2HSV);
            for (int y = 0; y < hsv.rows; ++y) {
                auto* row = hsv.ptr<cv::Vec3f>(y);
                for (int x = 0; x < hsv.cols; ++x) {
                    float hv = row[x][0] + static_cast<float>(hue);
                    hv = std::fmod(hv + 360.0f, 360.0f);
                    row[x][0] = hv;
                    row[x][1] = std::clamp(row[x][1] * static_cast<float>(sat), 0.0f, 1.0f);
                    row[x][2] = std::clamp(row[x][2] * static_cast<float>(val), 0.0f, 1.0f);
                }
            }
            cv::cvtColor(hsv, p.image, cv::COLOR_HSV2RGB);
        } else {
            p.image *= val;
        }
    }
    clip(p.image);
}

}  // namespace

double AugmentOp::param(const std::string& key, double fallback) const {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

const std::vector<std::string>& known_augment_ops() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [name, _] : op_defaults()) out.push_back(name);
        return out;
    }();
    return names;
}

void AugmentationSpec::validate() const {
    for (const auto& op : ops) {
        const auto it = op_defaults().find(op.name);
        if (it == op_defaults().end()) throw ConfigError("unknown augmentation '" + op.name + "'");
        if (!(op.probability >= 0.0 && op.probability <= 1.0)) {
            throw ConfigError("augmentation '" + op.name + "' probability must lie in [0,1]");
        }
        for (const auto& [key, value] : op.params) {
            if (!it->second.count(key)) {
                throw ConfigError("augmentation '" + op.name + "' has no parameter '" + key + "'");
            }
            if (!std::isfinite(value)) throw ConfigError("augmentation parameter '" + key + "' must be finite");
        }
    }
}

AugmentationSpec AugmentationSpec::from_doc(const KeyValueDoc& doc) {
    AugmentationSpec spec;
    for (const auto& [key, value] : doc.entries()) {
        if (key.rfind("aug.", 0) != 0) continue;
        AugmentOp op;
        op.name = key.substr(4);
        std::istringstream in(value);
        std::string token;
        if (!(in >> token)) throw ConfigError(doc.origin() + ": " + key + ": missing probability");
        op.probability = parse_double(token, key);
        while (in >> token) {
            const auto eq = token.find('=');
            if (eq == std::string::npos) throw ConfigError(doc.origin() + ": " + key + ": expected param=value, got '" + token + "'");
            op.params[token.substr(0, eq)] = parse_double(token.substr(eq + 1), key + " " + token.substr(0, eq));
        }
        spec.ops.push_back(std::move(op));
    }
    spec.validate();
    return spec;
}

void AugmentationSpec::write(KeyValueDoc& doc) const {
    for (const auto& op : ops) {
        std::string value = format_double(op.probability);
        for (const auto& [k, v] : op.params) value += " " + k + "=" + format_double(v);
        doc.add("aug." + op.name, value);
    }
}

AugmentationSpec AugmentationSpec::standard() {
    AugmentationSpec spec;
    spec.ops = {{"horizontal_flip", 0.5, {}},
                {"shift_scale_rotate", 0.5, {}},
                {"brightness_contrast", 0.3, {}},
                {"gaussian_noise", 0.2, {}},
                {"blur", 0.1, {}}};
    return spec;
}

std::pair<ImageTensor, LabelMask> augment(const ImageTensor& image, const LabelMask& mask,
                                          const AugmentationSpec& spec, Rng& rng) {
    if (image.height() != mask.height() || image.width() != mask.width()) {
        throw ShapeError("image and mask differ in size");
    }
    if (mask.classes() > 256) throw InvalidInput("augmentation supports at most 256 classes");
    spec.validate();
    bool any = false;
    Pair p;
    for (const auto& op : spec.ops) {
        if (!rng.bernoulli(op.probability)) continue;
        if (!any) {
            p = {to_mat(image), mask_to_mat(mask)};
            any = true;
        }
        apply(op, p, rng);
    }
    if (!any) return {image, mask};
    return {from_mat(p.image), mask_from_mat(p.mask, mask.classes())};
}

}  // namespace divseg
