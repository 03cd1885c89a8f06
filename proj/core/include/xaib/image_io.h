#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xaib/tensor.h"

namespace xaib {

// 8-bit interleaved image (RGB or RGBA), row-major.
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int h, int w, int c, std::uint8_t fill = 0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

  std::uint8_t* at(int y, int x) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels; }
  const std::uint8_t* at(int y, int x) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
  }
  bool operator==(const Image8&) const = default;
};

// Per-channel normalization: value = (pixel / 255 - mean[c]) / std[c].
struct Normalization {
  std::vector<float> mean{0.0f, 0.0f, 0.0f};
  std::vector<float> std{1.0f, 1.0f, 1.0f};
  bool operator==(const Normalization&) const = default;
};

// Decodes PNG or JPEG. Gray inputs are expanded to RGB; alpha is kept.
Image8 ReadImage(const std::filesystem::path& path);
std::vector<std::uint8_t> EncodePng(const Image8& image);
void WritePng(const std::filesystem::path& path, const Image8& image);

// (C,H,W) float tensor, bilinear-resized to height×width (no-op when sizes
// match), normalized per channel. Alpha is dropped.
Tensor ImageToTensor(const Image8& image, int height, int width, const Normalization& norm);
Tensor LoadImage(const std::filesystem::path& path, int height, int width,
                 const Normalization& norm);

}  // namespace xaib
