#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "divseg/core.hpp"

namespace divseg {

// Binary mask files: 8-bit single channel, background 0, foreground 255.
// On load any value >= 128 is foreground.
inline constexpr std::uint8_t kMaskForeground = 255;
inline constexpr std::uint8_t kMaskThreshold = 128;

std::vector<std::uint8_t> encode_mask(const LabelMask& mask);
LabelMask decode_mask(const std::vector<std::uint8_t>& bytes, int classes = 2,
                      const std::string& origin = "<memory>");

void write_mask(const std::filesystem::path& path, const LabelMask& mask);
LabelMask read_mask(const std::filesystem::path& path, int classes = 2);

// Images are read as 3-channel RGB scaled to [0,1]; written as 8-bit PNG/JPEG by extension.
ImageTensor read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const ImageTensor& img);

// Alpha-blends the foreground of `mask` onto `img` in the given RGB colour.
ImageTensor overlay_mask(const ImageTensor& img, const LabelMask& mask, float alpha = 0.4f,
                         const std::array<float, 3>& rgb = {0.0f, 1.0f, 0.0f});

bool is_image_file(const std::filesystem::path& path);

}  // namespace divseg
