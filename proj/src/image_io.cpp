#include "divseg/image_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "divseg/error.hpp"

namespace divseg {
namespace {

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path.string(), "write failed");
}

std::string extension_of(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

}  // namespace

std::vector<std::uint8_t> encode_mask(const LabelMask& mask) {
    if (mask.classes() != 2) {
        throw InvalidInput("mask files hold binary masks only, got " + std::to_string(mask.classes()) + " classes");
    }
    cv::Mat m(mask.height(), mask.width(), CV_8UC1);
    for (int y = 0; y < mask.height(); ++y) {
        auto* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.width(); ++x) row[x] = mask.at(y, x) == 1 ? kMaskForeground : 0;
    }
    std::vector<std::uint8_t> bytes;
    if (!cv::imencode(".png", m, bytes)) throw InvalidInput("PNG encoding failed");
    return bytes;
}

LabelMask decode_mask(const std::vector<std::uint8_t>& bytes, int classes, const std::string& origin) {
    if (classes != 2) throw InvalidInput("mask files hold binary masks only");
    cv::Mat m;
    try {
        m = cv::imdecode(bytes, cv::IMREAD_GRAYSCALE);
    } catch (const cv::Exception& e) {
        throw IoError(origin, std::string("cannot decode mask: ") + e.what());
    }
    if (m.empty()) throw IoError(origin, "cannot decode mask as a grayscale image");
    std::vector<std::int32_t> labels(static_cast<std::size_t>(m.rows) * m.cols);
    for (int y = 0; y < m.rows; ++y) {
        const auto* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < m.cols; ++x) {
            labels[static_cast<std::size_t>(y) * m.cols + x] = row[x] >= kMaskThreshold ? 1 : 0;
        }
    }
    return LabelMask(m.rows, m.cols, 2, std::move(labels));
}

void write_mask(const std::filesystem::path& path, const LabelMask& mask) {
    write_bytes(path, encode_mask(mask));
}

LabelMask read_mask(const std::filesystem::path& path, int classes) {
    return decode_mask(read_bytes(path), classes, path.string());
}

ImageTensor read_image(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    cv::Mat bgr;
    try {
        bgr = cv::imdecode(bytes, cv::IMREAD_COLOR);
    } catch (const cv::Exception& e) {
        throw IoError(path.string(), std::string("cannot decode image: ") + e.what());
    }
    if (bgr.empty()) throw IoError(path.string(), "cannot decode image");
    ImageTensor img(bgr.rows, bgr.cols, 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][2 - c] / 255.0f;
        }
    }
    return img;
}

void write_image(const std::filesystem::path& path, const ImageTensor& img) {
    if (img.channels() != 3 && img.channels() != 1) {
        throw InvalidInput("can only write 1- or 3-channel images");
    }
    cv::Mat m(img.height(), img.width(), img.channels() == 3 ? CV_8UC3 : CV_8UC1);
    for (int y = 0; y < img.height(); ++y) {
        auto* row = m.ptr<std::uint8_t>(y);
        for (int x = 0; x < img.width(); ++x) {
            for (int c = 0; c < img.channels(); ++c) {
                // OpenCV stores BGR.
                const int dst = img.channels() == 3 ? 2 - c : 0;
                const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
                row[x * img.channels() + dst] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
        }
    }
    const std::string ext = extension_of(path).empty() ? ".png" : extension_of(path);
    std::vector<std::uint8_t> bytes;
    if (!cv::imencode(ext, m, bytes)) throw IoError(path.string(), "cannot encode image as " + ext);
    write_bytes(path, bytes);
}

ImageTensor overlay_mask(const ImageTensor& img, const LabelMask& mask, float alpha,
                         const std::array<float, 3>& rgb) {
    if (img.height() != mask.height() || img.width() != mask.width()) {
        throw ShapeError("overlay mask does not match image size");
    }
    ImageTensor out(img.height(), img.width(), 3);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const bool fg = mask.at(y, x) != 0;
            for (int c = 0; c < 3; ++c) {
                const float base = img.at(img.channels() == 3 ? c : 0, y, x);
                out.at(c, y, x) = fg ? (1.0f - alpha) * base + alpha * rgb[c] : base;
            }
        }
    }
    return out;
}

bool is_image_file(const std::filesystem::path& path) {
    static const std::array<std::string, 6> kExts = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
    const auto ext = extension_of(path);
    return std::find(kExts.begin(), kExts.end(), ext) != kExts.end();
}

}  // namespace divseg
