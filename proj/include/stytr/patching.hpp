#pragma once

// Images <-> patch token sequences.

#include <cstddef>
#include <string>
#include <utility>

#include "stytr/image.hpp"
#include "stytr/ops.hpp"
#include "stytr/spatial.hpp"

namespace stytr {

// L x C tokens over an h_p x w_p patch grid, row-major grid order.
template <typename T>
struct PatchSequence {
  Tensor<T> tokens;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t patch = 8;

  std::size_t length() const { return grid_h * grid_w; }
  std::size_t channels() const { return tokens.dim(1); }

  // Same geometry, different tokens.
  PatchSequence with_tokens(Tensor<T> t) const {
    if (t.ndim() != 2 || t.dim(0) != length()) {
      throw DimensionError("token tensor " + shape_str(t.shape()) +
                           " does not match grid " + std::to_string(grid_h) +
                           "x" + std::to_string(grid_w));
    }
    return {std::move(t), grid_h, grid_w, patch};
  }

  // Tokens viewed as an h_p x w_p x C feature map.
  Tensor<T> as_map() const {
    return reshape(tokens, Shape{grid_h, grid_w, channels()});
  }
};

inline void require_divisible(std::size_t h, std::size_t w, std::size_t m) {
  if (m == 0 || h < m || w < m || h % m != 0 || w % m != 0) {
    throw DimensionError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " (H=" + std::to_string(h) + ", W=" + std::to_string(w) +
                         ") is not divisible by patch size m=" +
                         std::to_string(m));
  }
}

// Flattens non-overlapping m x m x 3 patches and projects them with
// weight [3m^2 x C] and bias [C].
template <typename T>
PatchSequence<T> embed(const Tensor<T>& image, const Tensor<T>& weight,
                       const Tensor<T>& bias, std::size_t m) {
  if (image.ndim() != 3 || image.dim(2) != 3) {
    throw DimensionError("embed: expected an HxWx3 image, got " +
                         shape_str(image.shape()));
  }
  require_divisible(image.dim(0), image.dim(1), m);
  if (weight.ndim() != 2 || weight.dim(0) != 3 * m * m) {
    throw DimensionError("embed: projection " + shape_str(weight.shape()) +
                         " does not accept " + std::to_string(3 * m * m) +
                         "-value patches");
  }
  auto rows = patchify(image, m);
  auto tokens = add_bias(matmul(rows, weight), bias);
  return {std::move(tokens), image.dim(0) / m, image.dim(1) / m, m};
}

template <typename T>
PatchSequence<T> embed(const ImageBuffer& image, const Tensor<T>& weight,
                       const Tensor<T>& bias, std::size_t m) {
  return embed(image_to_tensor<T>(image), weight, bias, m);
}

// Pixel size (H, W) of the image a sequence's grid covers.
template <typename T>
std::pair<std::size_t, std::size_t> unembed_shape(const PatchSequence<T>& seq) {
  return {seq.patch * seq.grid_h, seq.patch * seq.grid_w};
}

}  // namespace stytr
