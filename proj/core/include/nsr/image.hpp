#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nsr/tensor.hpp"

namespace nsr {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels, maxval 255.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> samples;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t ch, std::uint8_t fill = 0)
      : width(w), height(h), channels(ch), samples(w * h * ch, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t ch = 0) { return samples[(y * width + x) * channels + ch]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t ch = 0) const {
    return samples[(y * width + x) * channels + ch];
  }
  bool operator==(const Image&) const = default;
};

enum class PnmEncoding { binary, ascii };

/// Parses P2/P3/P5/P6 with maxval 255. Throws BadMagicError, BadMaxvalError or
/// TruncatedError (all FormatError) for the respective defects.
Image decode_pnm(const std::string& bytes);
std::string encode_pnm(const Image& image, PnmEncoding encoding = PnmEncoding::binary);

Image read_pnm(const std::string& path);
void write_pnm(const Image& image, const std::string& path, PnmEncoding encoding = PnmEncoding::binary);

/// BT.601 luma, rounded half up. Grayscale input is returned unchanged.
Image to_luma(const Image& image);

/// (1, channels, h, w) tensor holding the raw 0..255 sample values.
Tensor<float> to_tensor(const Image& image);
/// Rounds and clamps to 0..255. Expects a (1, 1|3, h, w) tensor.
Image to_image(const Tensor<float>& t);

}  // namespace nsr
