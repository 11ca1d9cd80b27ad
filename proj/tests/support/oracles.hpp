#pragma once

// Test-side reference computations, written independently of the library:
// plain loops over flat row-major arrays, no autograd, double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "stytr/tensor.hpp"

namespace oracle {

template <typename T>
std::vector<double> values(const stytr::Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Multi-head attention with explicit per-head, per-row loops.
// q_in: Lq x C, kv_in: Lkv x C, projections C x C, output Lq x C.
inline std::vector<double> attention(const std::vector<double>& q_in,
                                     const std::vector<double>& kv_in, std::size_t lq,
                                     std::size_t lkv, std::size_t c, std::size_t heads,
                                     const std::vector<double>& wq, const std::vector<double>& wk,
                                     const std::vector<double>& wv, const std::vector<double>& wo) {
  const std::size_t dh = c / heads;
  auto project = [c](const std::vector<double>& x, std::size_t rows, const std::vector<double>& w) {
    std::vector<double> y(rows * c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += x[r * c + k] * w[k * c + j];
        y[r * c + j] = s;
      }
    return y;
  };
  const auto q = project(q_in, lq, wq);
  const auto k = project(kv_in, lkv, wk);
  const auto v = project(kv_in, lkv, wv);
  std::vector<double> concat(lq * c, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < lq; ++i) {
      std::vector<double> score(lkv);
      for (std::size_t j = 0; j < lkv; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d) s += q[i * c + h * dh + d] * k[j * c + h * dh + d];
        score[j] = s / std::sqrt(static_cast<double>(dh));
      }
      const double mx = *std::max_element(score.begin(), score.end());
      double z = 0.0;
      for (auto& s : score) z += (s = std::exp(s - mx));
      for (std::size_t d = 0; d < dh; ++d) {
        double acc = 0.0;
        for (std::size_t j = 0; j < lkv; ++j) acc += score[j] / z * v[j * c + h * dh + d];
        concat[i * c + h * dh + d] = acc;
      }
    }
  }
  return project(concat, lq, wo);
}

// sum_k cos(w_k dx) + cos(w_k dy), w_k = 10000^(-2k/(d/4)), k < d/4.
inline double sinusoidal_closed_form(double dx, double dy, std::size_t d) {
  const double quarter = static_cast<double>(d / 4);
  double s = 0.0;
  for (std::size_t k = 0; k < d / 4; ++k) {
    const double w = std::exp(-std::log(10000.0) * 2.0 * static_cast<double>(k) / quarter);
    s += std::cos(w * dx) + std::cos(w * dy);
  }
  return s;
}

// Per-channel mean and (population) standard deviation of an N x C array,
// two passes.
inline std::pair<std::vector<double>, std::vector<double>> channel_mean_std(
    const std::vector<double>& x, std::size_t c, double eps) {
  const std::size_t n = x.size() / c;
  std::vector<double> mean(c, 0.0), sd(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) mean[k] += x[i * c + k];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) sd[k] += (x[i * c + k] - mean[k]) * (x[i * c + k] - mean[k]);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n) + eps);
  return {mean, sd};
}

// Bilinear sample of an n x n x C grid at normalized coordinates
// (u, v) in [0,1]^2, where 0 and 1 land on the first and last grid nodes.
inline std::vector<double> bilinear(const std::vector<double>& grid, std::size_t n, std::size_t c,
                                    double u, double v) {
  const double y = u * static_cast<double>(n - 1), x = v * static_cast<double>(n - 1);
  const auto y0 = static_cast<std::size_t>(std::min(std::floor(y), static_cast<double>(n - 1)));
  const auto x0 = static_cast<std::size_t>(std::min(std::floor(x), static_cast<double>(n - 1)));
  const std::size_t y1 = std::min(y0 + 1, n - 1), x1 = std::min(x0 + 1, n - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  std::vector<double> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    out[k] = (1 - fy) * (1 - fx) * grid[(y0 * n + x0) * c + k] +
             (1 - fy) * fx * grid[(y0 * n + x1) * c + k] +
             fy * (1 - fx) * grid[(y1 * n + x0) * c + k] + fy * fx * grid[(y1 * n + x1) * c + k];
  }
  return out;
}

// Zero-padded 3x3 convolution, HWC input, weight [3][3][Cin][Cout].
inline std::vector<double> conv3x3(const std::vector<double>& x, std::size_t h, std::size_t w,
                                   std::size_t cin, const std::vector<double>& wt,
                                   const std::vector<double>& b, std::size_t cout) {
  std::vector<double> y(h * w * cout);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t q = 0; q < w; ++q)
      for (std::size_t o = 0; o < cout; ++o) {
        double s = b[o];
        for (int dr = -1; dr <= 1; ++dr)
          for (int dq = -1; dq <= 1; ++dq) {
            const long rr = static_cast<long>(r) + dr, qq = static_cast<long>(q) + dq;
            if (rr < 0 || qq < 0 || rr >= static_cast<long>(h) || qq >= static_cast<long>(w)) continue;
            for (std::size_t i = 0; i < cin; ++i)
              s += x[(static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(qq)) * cin + i] *
                   wt[((static_cast<std::size_t>(dr + 1) * 3 + static_cast<std::size_t>(dq + 1)) * cin + i) * cout + o];
          }
        y[(r * w + q) * cout + o] = s;
      }
  return y;
}

}  // namespace oracle
