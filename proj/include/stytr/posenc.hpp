#pragma once

// Positional encodings for patch sequences.
//
// * Sinusoidal 2D: the encoding of the patch at grid column x, row y is
//     [sin(w_0 x), cos(w_0 x), ..., sin(w_{K-1} x), cos(w_{K-1} x),
//      sin(w_0 y), cos(w_0 y), ..., sin(w_{K-1} y), cos(w_{K-1} y)]
//   with K = d/4 and w_k = 1 / 10000^(2k/K). The inner product of two such
//   codes is sum_k cos(w_k dx) + cos(w_k dy), a function of the offset only.
//
// * Content-aware (CAPE): the token field is average-pooled onto a fixed
//   n x n grid, mapped by a learned 1x1 convolution, then bilinearly
//   resampled (align corners) back to the token grid. The pooled grid has
//   the same size at every input resolution.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "stytr/config.hpp"
#include "stytr/patching.hpp"
#include "stytr/spatial.hpp"

namespace stytr {

inline double sinusoidal_frequency(std::size_t k, std::size_t d) {
  const double quarter = static_cast<double>(d / 4);
  return 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(k) / quarter);
}

template <typename T>
Tensor<T> sinusoidal_pe(std::size_t grid_h, std::size_t grid_w, std::size_t d) {
  if (d == 0 || d % 4 != 0) {
    throw DimensionError("sinusoidal_pe: dimension " + std::to_string(d) +
                         " is not divisible by 4");
  }
  const std::size_t quarter = d / 4;
  std::vector<double> freq(quarter);
  for (std::size_t k = 0; k < quarter; ++k) freq[k] = sinusoidal_frequency(k, d);
  std::vector<T> data(grid_h * grid_w * d);
  for (std::size_t y = 0; y < grid_h; ++y) {
    for (std::size_t x = 0; x < grid_w; ++x) {
      T* row = data.data() + (y * grid_w + x) * d;
      for (std::size_t k = 0; k < quarter; ++k) {
        const double ax = freq[k] * static_cast<double>(x);
        const double ay = freq[k] * static_cast<double>(y);
        row[2 * k] = static_cast<T>(std::sin(ax));
        row[2 * k + 1] = static_cast<T>(std::cos(ax));
        row[d / 2 + 2 * k] = static_cast<T>(std::sin(ay));
        row[d / 2 + 2 * k + 1] = static_cast<T>(std::cos(ay));
      }
    }
  }
  return Tensor<T>(Shape{grid_h * grid_w, d}, std::move(data));
}

// sum_k cos(w_k dx) + cos(w_k dy): the inner product the sinusoidal code
// induces between two patches at offset (dx, dy).
inline double sinusoidal_relation(double dx, double dy, std::size_t d) {
  double acc = 0.0;
  for (std::size_t k = 0; k < d / 4; ++k) {
    const double w = sinusoidal_frequency(k, d);
    acc += std::cos(w * dx) + std::cos(w * dy);
  }
  return acc;
}

// The unscaled attention score between two tokens and its expansion into
// content-content, content-position, position-content and
// position-position terms.
struct AttentionDecomposition {
  double score = 0.0;
  std::array<double, 4> terms{};

  double term_sum() const { return terms[0] + terms[1] + terms[2] + terms[3]; }
};

template <typename T>
AttentionDecomposition attention_decomposition_check(
    const Tensor<T>& e_i, const Tensor<T>& e_j, const Tensor<T>& p_i,
    const Tensor<T>& p_j, const Tensor<T>& w_q, const Tensor<T>& w_k) {
  const std::size_t c = e_i.numel();
  if (e_j.numel() != c || p_i.numel() != c || p_j.numel() != c ||
      w_q.ndim() != 2 || w_k.ndim() != 2 || w_q.dim(0) != c ||
      w_k.shape() != w_q.shape()) {
    throw DimensionError("attention_decomposition_check: nonconforming shapes (token " +
                         shape_str(e_i.shape()) + ", W_q " + shape_str(w_q.shape()) +
                         ", W_k " + shape_str(w_k.shape()) + ")");
  }
  const std::size_t d = w_q.dim(1);
  auto project = [c, d](const std::vector<double>& v, const Tensor<T>& w) {
    std::vector<double> out(d, 0.0);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < d; ++j)
        out[j] += v[i] * static_cast<double>(w[i * d + j]);
    return out;
  };
  auto to_vec = [](const Tensor<T>& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  const auto ei = to_vec(e_i), ej = to_vec(e_j), pi = to_vec(p_i), pj = to_vec(p_j);
  std::vector<double> qi(c), kj(c);
  for (std::size_t i = 0; i < c; ++i) {
    qi[i] = ei[i] + pi[i];
    kj[i] = ej[i] + pj[i];
  }
  AttentionDecomposition out;
  out.score = dot(project(qi, w_q), project(kj, w_k));
  const auto eq = project(ei, w_q), pq = project(pi, w_q);
  const auto ek = project(ej, w_k), pk = project(pj, w_k);
  out.terms = {dot(eq, ek), dot(eq, pk), dot(pq, ek), dot(pq, pk)};
  return out;
}

template <typename T>
struct CapeField {
  Tensor<T> pooled;    // n x n x C, after the 1x1 convolution
  Tensor<T> encoding;  // L x C
};

template <typename T>
CapeField<T> cape_field(const PatchSequence<T>& seq, const Tensor<T>& weight,
                        const Tensor<T>& bias, std::size_t n) {
  if (seq.grid_h < n || seq.grid_w < n) {
    throw DimensionError(
        "cape: patch grid " + std::to_string(seq.grid_h) + "x" +
        std::to_string(seq.grid_w) + " is smaller than the pooled grid n=" +
        std::to_string(n) + "; reduce cape_grid in the configuration");
  }
  auto pooled = conv2d_1x1(avgpool_adaptive(seq.as_map(), n, n), weight, bias);
  auto resized = resize_bilinear(pooled, seq.grid_h, seq.grid_w);
  auto encoding = reshape(resized, Shape{seq.length(), seq.channels()});
  return {std::move(pooled), std::move(encoding)};
}

template <typename T>
Tensor<T> cape(const PatchSequence<T>& seq, const Tensor<T>& weight,
               const Tensor<T>& bias, std::size_t n) {
  return cape_field(seq, weight, bias, n).encoding;
}

// One interpolation tap: pooled-grid cell (row, col) and its weight.
struct InterpolationTap {
  std::size_t row = 0, col = 0;
  double weight = 0.0;
};

// The four bilinear taps each token of an out_h x out_w grid draws from an
// n x n pooled grid, in token order.
inline std::vector<std::array<InterpolationTap, 4>> interpolation_weights(
    std::size_t out_h, std::size_t out_w, std::size_t n) {
  const auto rows = detail::align_corners_taps(n, out_h);
  const auto cols = detail::align_corners_taps(n, out_w);
  std::vector<std::array<InterpolationTap, 4>> out;
  out.reserve(out_h * out_w);
  for (const auto& r : rows) {
    for (const auto& c : cols) {
      out.push_back({InterpolationTap{r.lo, c.lo, r.w_lo * c.w_lo},
                     InterpolationTap{r.lo, c.hi, r.w_lo * c.w_hi},
                     InterpolationTap{r.hi, c.lo, r.w_hi * c.w_lo},
                     InterpolationTap{r.hi, c.hi, r.w_hi * c.w_hi}});
    }
  }
  return out;
}

// The additive code for `seq` under `mode`. CAPE uses the given 1x1
// convolution; the other modes ignore it.
template <typename T>
Tensor<T> positional_encoding(PeMode mode, const PatchSequence<T>& seq,
                              const Tensor<T>& cape_weight,
                              const Tensor<T>& cape_bias, std::size_t n) {
  switch (mode) {
    case PeMode::none:
      return Tensor<T>::zeros(Shape{seq.length(), seq.channels()});
    case PeMode::sinusoidal:
      return sinusoidal_pe<T>(seq.grid_h, seq.grid_w, seq.channels());
    case PeMode::cape:
      return cape(seq, cape_weight, cape_bias, n);
  }
  throw ConfigError("unhandled positional encoding mode");
}

template <typename T>
Tensor<T> positional_encoding(const std::string& mode, const PatchSequence<T>& seq,
                              const Tensor<T>& cape_weight,
                              const Tensor<T>& cape_bias, std::size_t n) {
  return positional_encoding(parse_pe_mode(mode), seq, cape_weight, cape_bias, n);
}

}  // namespace stytr
