#include "nsr/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace nsr {
namespace {

class PnmScanner {
 public:
  PnmScanner(const std::string& bytes, std::size_t start) : s_(bytes), pos_(start) {}

  // Next decimal token; '#' starts a comment that runs to the end of the line.
  unsigned long number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= s_.size()) throw TruncatedError(std::string("pnm: unexpected end of data reading ") + what);
    if (!std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      throw FormatError(std::string("pnm: expected a number for ") + what + " at byte " + std::to_string(pos_));
    }
    unsigned long v = 0;
    while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
      v = v * 10 + static_cast<unsigned long>(s_[pos_] - '0');
      if (v > (1ul << 30)) throw FormatError(std::string("pnm: value out of range for ") + what);
      ++pos_;
    }
    return v;
  }

  // A single whitespace byte separates the header from a binary raster.
  void single_whitespace() {
    if (pos_ >= s_.size()) throw TruncatedError("pnm: missing raster");
    if (!std::isspace(static_cast<unsigned char>(s_[pos_]))) throw FormatError("pnm: no whitespace before raster");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (c == '#') {
        while (pos_ < s_.size() && s_[pos_] != '\n' && s_[pos_] != '\r') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& s_;
  std::size_t pos_;
};

}  // namespace

Image decode_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' ||
      (bytes[1] != '2' && bytes[1] != '3' && bytes[1] != '5' && bytes[1] != '6')) {
    throw BadMagicError("pnm: unsupported magic (expected P2, P3, P5 or P6)");
  }
  const char kind = bytes[1];
  const bool binary = kind == '5' || kind == '6';
  const std::size_t channels = (kind == '3' || kind == '6') ? 3 : 1;
  PnmScanner sc(bytes, 2);
  const std::size_t width = sc.number("width");
  const std::size_t height = sc.number("height");
  const unsigned long maxval = sc.number("maxval");
  if (maxval != 255) throw BadMaxvalError("pnm: maxval " + std::to_string(maxval) + " is not 255");
  Image img(width, height, channels);
  const std::size_t count = img.samples.size();
  if (binary) {
    sc.single_whitespace();
    if (bytes.size() - sc.pos() < count) {
      throw TruncatedError("pnm: raster has " + std::to_string(bytes.size() - sc.pos()) + " of " +
                           std::to_string(count) + " bytes");
    }
    for (std::size_t i = 0; i < count; ++i) img.samples[i] = static_cast<std::uint8_t>(bytes[sc.pos() + i]);
    return img;
  }
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned long v = sc.number("sample");
    if (v > 255) throw FormatError("pnm: sample " + std::to_string(v) + " exceeds maxval");
    img.samples[i] = static_cast<std::uint8_t>(v);
  }
  return img;
}

std::string encode_pnm(const Image& image, PnmEncoding encoding) {
  if (image.channels != 1 && image.channels != 3) throw DimensionError("pnm: images need 1 or 3 channels");
  if (image.samples.size() != image.width * image.height * image.channels) {
    throw DimensionError("pnm: sample count does not match dimensions");
  }
  const bool gray = image.channels == 1;
  std::ostringstream out;
  if (encoding == PnmEncoding::binary) {
    out << (gray ? "P5" : "P6") << '\n' << image.width << ' ' << image.height << '\n' << 255 << '\n';
    out.write(reinterpret_cast<const char*>(image.samples.data()), static_cast<std::streamsize>(image.samples.size()));
    return out.str();
  }
  out << (gray ? "P2" : "P3") << '\n' << image.width << ' ' << image.height << '\n' << 255 << '\n';
  const std::size_t per_row = image.width * image.channels;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t i = 0; i < per_row; ++i) {
      out << static_cast<unsigned>(image.samples[y * per_row + i]) << (i + 1 == per_row ? '\n' : ' ');
    }
  }
  return out.str();
}

Image read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_pnm(ss.str());
}

void write_pnm(const Image& image, const std::string& path, PnmEncoding encoding) {
  const std::string bytes = encode_pnm(image, encoding);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path);
}

Image to_luma(const Image& image) {
  if (image.channels == 1) return image;
  if (image.channels != 3) throw DimensionError("to_luma: expected 3 channels");
  Image out(image.width, image.height, 1);
  for (std::size_t p = 0; p < image.width * image.height; ++p) {
    const double y = 0.299 * image.samples[3 * p] + 0.587 * image.samples[3 * p + 1] +
                     0.114 * image.samples[3 * p + 2];
    out.samples[p] = static_cast<std::uint8_t>(std::min(255.0, std::floor(y + 0.5)));
  }
  return out;
}

Tensor<float> to_tensor(const Image& image) {
  Tensor<float> t({1, image.channels, image.height, image.width});
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t ch = 0; ch < image.channels; ++ch) t(0, ch, y, x) = image.at(x, y, ch);
    }
  }
  return t;
}

Image to_image(const Tensor<float>& t) {
  if (t.n() != 1 || (t.c() != 1 && t.c() != 3)) throw DimensionError("to_image: expected (1, 1|3, h, w), got " + t.shape().str());
  Image img(t.w(), t.h(), t.c());
  for (std::size_t y = 0; y < t.h(); ++y) {
    for (std::size_t x = 0; x < t.w(); ++x) {
      for (std::size_t ch = 0; ch < t.c(); ++ch) {
        const double v = std::clamp(std::round(static_cast<double>(t(0, ch, y, x))), 0.0, 255.0);
        img.at(x, y, ch) = static_cast<std::uint8_t>(v);
      }
    }
  }
  return img;
}

}  // namespace nsr
