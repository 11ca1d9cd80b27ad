#pragma once

// RGB image buffers and the binary PPM (P6) / PGM (P5) interchange formats.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "stytr/error.hpp"
#include "stytr/tensor.hpp"

namespace stytr {

// H x W x 3 intensities in [0, 1], row-major with the channel fastest.
struct ImageBuffer {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  static constexpr std::size_t channels = 3;

  ImageBuffer() = default;
  ImageBuffer(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), values(h * w * channels, fill) {}
  ImageBuffer(std::size_t h, std::size_t w, std::vector<float> v)
      : height(h), width(w), values(std::move(v)) {
    if (values.size() != h * w * channels)
      throw DimensionError("image " + std::to_string(h) + "x" + std::to_string(w) + " needs " +
                           std::to_string(h * w * channels) + " values, got " + std::to_string(values.size()));
  }

  float& at(std::size_t r, std::size_t c, std::size_t k) {
    return values[(r * width + c) * channels + k];
  }
  float at(std::size_t r, std::size_t c, std::size_t k) const {
    return values[(r * width + c) * channels + k];
  }

  bool operator==(const ImageBuffer&) const = default;
};

inline std::uint8_t quantize_u8(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

// Netpbm header tokenizer: whitespace separated, '#' comments to end of line.
class NetpbmHeader {
 public:
  explicit NetpbmHeader(const std::vector<std::uint8_t>& bytes) : b_(bytes) {}

  std::size_t pos() const { return pos_; }

  void expect_magic(const char* magic) {
    if (b_.size() < 2 || b_[0] != magic[0] || b_[1] != magic[1]) {
      throw ParseError(std::string("expected magic '") + magic + "'", 0);
    }
    pos_ = 2;
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      value = value * 10 + (b_[pos_] - '0');
      if (value > (1u << 24)) throw ParseError(std::string(what) + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("expected ") + what, pos_);
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  void single_whitespace() {
    if (pos_ >= b_.size() || !is_space(b_[pos_])) {
      throw ParseError("expected whitespace before raster", pos_);
    }
    ++pos_;
  }

 private:
  static bool is_space(std::uint8_t c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
           c == '\f';
  }

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (is_space(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline ImageBuffer decode_ppm(const std::vector<std::uint8_t>& bytes) {
  detail::NetpbmHeader hdr(bytes);
  hdr.expect_magic("P6");
  const std::size_t w = hdr.number("width");
  const std::size_t h = hdr.number("height");
  const std::size_t maxval_at = hdr.pos();
  const std::size_t maxval = hdr.number("maxval");
  if (maxval != 255) {
    throw ParseError("unsupported maxval " + std::to_string(maxval) +
                         " (only 255)",
                     maxval_at);
  }
  if (w == 0 || h == 0) throw ParseError("empty image", maxval_at);
  hdr.single_whitespace();
  const std::size_t start = hdr.pos();
  const std::size_t need = w * h * 3;
  if (bytes.size() - start < need) {
    throw ParseError("truncated raster: need " + std::to_string(need) +
                         " bytes, have " + std::to_string(bytes.size() - start),
                     bytes.size());
  }
  ImageBuffer img(h, w);
  for (std::size_t i = 0; i < need; ++i) {
    img.values[i] = static_cast<float>(bytes[start + i]) / 255.0f;
  }
  return img;
}

inline std::vector<std::uint8_t> encode_ppm(const ImageBuffer& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + img.values.size());
  for (float v : img.values) bytes.push_back(quantize_u8(v));
  return bytes;
}

inline ImageBuffer read_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(detail::read_file_bytes(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

inline void write_ppm(const ImageBuffer& img, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_ppm(img));
}

// Single-channel 8-bit PGM (P5) from a row-major height x width raster.
inline void write_pgm(const std::vector<std::uint8_t>& gray, std::size_t height,
                      std::size_t width, const std::filesystem::path& path) {
  if (gray.size() != height * width) {
    throw DimensionError("write_pgm: raster size does not match dimensions");
  }
  const std::string header = "P5\n" + std::to_string(width) + " " +
                             std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), gray.begin(), gray.end());
  detail::write_file_bytes(path, bytes);
}

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;
};

inline GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  detail::NetpbmHeader hdr(bytes);
  hdr.expect_magic("P5");
  GrayImage g;
  g.width = hdr.number("width");
  g.height = hdr.number("height");
  const std::size_t maxval_at = hdr.pos();
  if (hdr.number("maxval") != 255) throw ParseError("unsupported maxval", maxval_at);
  hdr.single_whitespace();
  const std::size_t need = g.width * g.height;
  if (bytes.size() - hdr.pos() < need) throw ParseError("truncated raster", bytes.size());
  g.values.assign(bytes.begin() + static_cast<std::ptrdiff_t>(hdr.pos()),
                  bytes.begin() + static_cast<std::ptrdiff_t>(hdr.pos() + need));
  return g;
}

// Rounds every value through the 8-bit representation a PPM stores.
inline ImageBuffer quantized(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (auto& v : out.values) v = static_cast<float>(quantize_u8(v)) / 255.0f;
  return out;
}

inline ImageBuffer crop(const ImageBuffer& img, std::size_t top,
                        std::size_t left, std::size_t h, std::size_t w) {
  if (top + h > img.height || left + w > img.width) {
    throw DimensionError("crop " + std::to_string(h) + "x" + std::to_string(w) +
                         " at (" + std::to_string(top) + "," +
                         std::to_string(left) + ") exceeds image " +
                         std::to_string(img.height) + "x" +
                         std::to_string(img.width));
  }
  ImageBuffer out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t k = 0; k < 3; ++k) out.at(r, c, k) = img.at(top + r, left + c, k);
  return out;
}

// Largest centered crop whose sides are multiples of m.
inline ImageBuffer center_crop_to_multiple(const ImageBuffer& img,
                                           std::size_t m) {
  const std::size_t h = img.height / m * m;
  const std::size_t w = img.width / m * m;
  if (h == 0 || w == 0) {
    throw DimensionError("image " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + " is smaller than patch size " +
                         std::to_string(m));
  }
  return crop(img, (img.height - h) / 2, (img.width - w) / 2, h, w);
}

template <typename T>
Tensor<T> image_to_tensor(const ImageBuffer& img) {
  std::vector<T> data(img.values.begin(), img.values.end());
  return Tensor<T>(Shape{img.height, img.width, 3}, std::move(data));
}

template <typename T>
ImageBuffer tensor_to_image(const Tensor<T>& t) {
  if (t.ndim() != 3 || t.dim(2) != 3) {
    throw DimensionError("tensor_to_image: expected HxWx3, got " +
                         shape_str(t.shape()));
  }
  ImageBuffer img(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    img.values[i] = static_cast<float>(t[i]);
  }
  return img;
}

}  // namespace stytr
