#pragma once

// Central finite-difference checks of reverse-mode gradients.
//
// The error reported for a tensor is normwise over the checked entries:
//   ||g_autodiff - g_numeric|| / max(||g_autodiff||, ||g_numeric||)
// falling back to the absolute difference when both norms are below 1e-10
// (a gradient that is zero on both sides is a pass).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "stytr/random.hpp"
#include "stytr/tensor.hpp"

namespace stytr {

struct GradCheckResult {
  std::string name;
  double rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

inline double normwise_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale < 1e-10 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

// `loss` rebuilds the graph from current leaf values and returns a scalar.
// Checks at most `max_entries` entries of `leaf` (all when 0), sampled
// without replacement from `rng`.
template <typename T>
GradCheckResult check_gradient(const std::function<Tensor<T>()>& loss, Tensor<T> leaf,
                               std::string name, std::size_t max_entries, Rng& rng,
                               double h = 1e-5) {
  leaf.zero_grad();
  loss().backward();
  const auto analytic = leaf.grad();
  leaf.zero_grad();

  std::vector<std::size_t> idx(leaf.numel());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  if (max_entries != 0 && max_entries < idx.size()) {
    for (std::size_t i = 0; i < max_entries; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(max_entries);
  }

  std::vector<double> a, n;
  auto values = leaf.mutable_data();
  for (std::size_t i : idx) {
    const T saved = values[i];
    values[i] = saved + static_cast<T>(h);
    const double plus = static_cast<double>(loss().item());
    values[i] = saved - static_cast<T>(h);
    const double minus = static_cast<double>(loss().item());
    values[i] = saved;
    a.push_back(static_cast<double>(analytic[i]));
    n.push_back((plus - minus) / (2.0 * h));
  }
  GradCheckResult r;
  r.name = std::move(name);
  r.entries = idx.size();
  r.rel_error = normwise_error(a, n);
  for (std::size_t i = 0; i < a.size(); ++i) {
    r.max_abs_error = std::max(r.max_abs_error, std::abs(a[i] - n[i]));
  }
  return r;
}

}  // namespace stytr
