#pragma once

// Pairwise token dot-product matrices of the sinusoidal code, its closed
// form, and CAPE on a sample content embedding, plus per-token norms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stytr/image.hpp"
#include "stytr/patching.hpp"
#include "stytr/posenc.hpp"
#include "stytr/random.hpp"
#include "stytr/samples.hpp"

namespace stytr {

struct PeComparison {
  std::size_t grid_h = 0, grid_w = 0, channels = 0;
  std::vector<double> sinusoidal_dot;   // L x L
  std::vector<double> closed_form_dot;  // L x L
  std::vector<double> cape_dot;         // L x L
  std::vector<double> sinusoidal_norm;  // grid_h x grid_w
  std::vector<double> cape_norm;        // grid_h x grid_w

  std::size_t tokens() const { return grid_h * grid_w; }

  double max_closed_form_error() const {
    double e = 0.0;
    for (std::size_t i = 0; i < sinusoidal_dot.size(); ++i)
      e = std::max(e, std::abs(sinusoidal_dot[i] - closed_form_dot[i]));
    return e;
  }
};

struct PeCompareWeights {
  Tensor<double> embed_weight, embed_bias, cape_weight, cape_bias;
  std::size_t cape_grid = 18;
  std::size_t patch = 8;

  // Glorot-initialized embedding and CAPE convolution.
  static PeCompareWeights random(std::size_t channels, std::size_t cape_grid,
                                 std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t pd = 3 * 8 * 8;
    PeCompareWeights w;
    w.embed_weight = xavier_uniform<double>({pd, channels}, pd, channels, rng, false);
    w.embed_bias = Tensor<double>::zeros({channels});
    w.cape_weight = xavier_uniform<double>({channels, channels}, channels, channels, rng, false);
    w.cape_bias = Tensor<double>::zeros({channels});
    w.cape_grid = cape_grid;
    return w;
  }
};

namespace detail {

inline std::vector<double> gram(const Tensor<double>& x) {
  const std::size_t l = x.dim(0), c = x.dim(1);
  std::vector<double> g(l * l, 0.0);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += x[i * c + k] * x[j * c + k];
      g[i * l + j] = s;
    }
  return g;
}

inline std::vector<double> row_norms(const Tensor<double>& x) {
  const std::size_t l = x.dim(0), c = x.dim(1);
  std::vector<double> n(l, 0.0);
  for (std::size_t i = 0; i < l; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += x[i * c + k] * x[i * c + k];
    n[i] = std::sqrt(s);
  }
  return n;
}

}  // namespace detail

inline PeComparison pe_compare(std::size_t grid_h, std::size_t grid_w,
                               const PeCompareWeights& w) {
  const std::size_t c = w.embed_weight.dim(1);
  PeComparison out;
  out.grid_h = grid_h;
  out.grid_w = grid_w;
  out.channels = c;
  const auto sin_pe = sinusoidal_pe<double>(grid_h, grid_w, c);
  out.sinusoidal_dot = detail::gram(sin_pe);
  out.sinusoidal_norm = detail::row_norms(sin_pe);
  const std::size_t l = grid_h * grid_w;
  out.closed_form_dot.resize(l * l);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      const double dx = static_cast<double>(j % grid_w) - static_cast<double>(i % grid_w);
      const double dy = static_cast<double>(j / grid_w) - static_cast<double>(i / grid_w);
      out.closed_form_dot[i * l + j] = sinusoidal_relation(dx, dy, c);
    }
  const auto image = image_to_tensor<double>(sample_content(grid_h * w.patch, grid_w * w.patch));
  const auto seq = embed(image, w.embed_weight, w.embed_bias, w.patch);
  const auto cape_pe = cape(seq, w.cape_weight, w.cape_bias, w.cape_grid);
  out.cape_dot = detail::gram(cape_pe);
  out.cape_norm = detail::row_norms(cape_pe);
  return out;
}

// Linear map of [lo, hi] onto 0..255; a degenerate range maps to 128.
inline std::vector<std::uint8_t> to_gray(const std::vector<double>& v, double lo, double hi) {
  std::vector<std::uint8_t> g(v.size(), 128);
  if (!(hi - lo > 1e-12)) return g;
  for (std::size_t i = 0; i < v.size(); ++i) g[i] = quantize_u8((v[i] - lo) / (hi - lo));
  return g;
}

inline std::vector<std::uint8_t> to_gray(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return to_gray(v, *lo, *hi);
}

// Writes the five heatmaps into `dir`. Sinusoidal and closed-form matrices
// share the fixed range [-C/2, C/2].
inline std::vector<std::filesystem::path> write_pe_comparison(
    const PeComparison& cmp, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t l = cmp.tokens();
  const double half = static_cast<double>(cmp.channels) / 2.0;
  std::vector<std::filesystem::path> paths = {
      dir / "sinusoidal_dot.pgm", dir / "closed_form_dot.pgm", dir / "cape_dot.pgm",
      dir / "sinusoidal_norm.pgm", dir / "cape_norm.pgm"};
  write_pgm(to_gray(cmp.sinusoidal_dot, -half, half), l, l, paths[0]);
  write_pgm(to_gray(cmp.closed_form_dot, -half, half), l, l, paths[1]);
  write_pgm(to_gray(cmp.cape_dot), l, l, paths[2]);
  write_pgm(to_gray(cmp.sinusoidal_norm), cmp.grid_h, cmp.grid_w, paths[3]);
  write_pgm(to_gray(cmp.cape_norm), cmp.grid_h, cmp.grid_w, paths[4]);
  return paths;
}

}  // namespace stytr
