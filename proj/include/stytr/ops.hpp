#pragma once

// Differentiable tensor primitives: elementwise arithmetic, matrix product,
// reductions, shape manipulation, softmax and layer normalization.
//
// Broadcasting is limited to scalar constants and per-channel (last axis)
// vectors; everything else requires identical shapes.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "stytr/tensor.hpp"

namespace stytr {

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b,
                               const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a) + " vs " + shape_str(b));
  }
}

template <typename T>
void require_channel_vector(const Tensor<T>& x, const Tensor<T>& v,
                            const char* op) {
  if (x.ndim() == 0 || v.ndim() != 1 || v.dim(0) != x.shape().back()) {
    throw DimensionError(std::string(op) + ": channel vector " +
                         shape_str(v.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
  }
}

// Views an axis of `shape` as [outer, n, inner].
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis,
                            const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  auto xn = x.node();
  return make_result<T>(
      x.shape(), std::move(out), {xn}, [xn, deriv](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += self.grad[i] * deriv(xn->data[i], self.data[i]);
        }
      });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(
      a.shape(), std::move(out), {an, bn}, [an, bn](const Node<T>& self) {
        if (an->requires_grad) detail::accumulate<T>(*an, self.grad);
        if (bn->requires_grad) detail::accumulate<T>(*bn, self.grad);
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(
      a.shape(), std::move(out), {an, bn}, [an, bn](const Node<T>& self) {
        if (an->requires_grad) detail::accumulate<T>(*an, self.grad);
        if (bn->requires_grad) {
          auto& g = bn->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(
      a.shape(), std::move(out), {an, bn}, [an, bn](const Node<T>& self) {
        if (an->requires_grad) {
          auto& g = an->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * bn->data[i];
        }
        if (bn->requires_grad) {
          auto& g = bn->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * an->data[i];
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary(
      x, [factor](T v) { return v * factor; },
      [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return detail::unary(
      x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

// Square root. The derivative at exactly 0 is taken as 0 so distances
// between identical inputs stay differentiable.
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::sqrt(v); },
      [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary(
      x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

// x[..., c] + bias[c]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_channel_vector(x, bias, "add_bias");
  const std::size_t c = bias.numel();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % c];
  auto xn = x.node(), bn = bias.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {xn, bn}, [xn, bn, c](const Node<T>& self) {
        if (xn->requires_grad) detail::accumulate<T>(*xn, self.grad);
        if (bn->requires_grad) {
          auto& g = bn->grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i % c] += self.grad[i];
        }
      });
}

// x[..., c] * gain[c]
template <typename T>
Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& gain) {
  detail::require_channel_vector(x, gain, "mul_channel");
  const std::size_t c = gain.numel();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * gain[i % c];
  auto xn = x.node(), gn = gain.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {xn, gn}, [xn, gn, c](const Node<T>& self) {
        if (xn->requires_grad) {
          auto& g = xn->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * gn->data[i % c];
        }
        if (gn->requires_grad) {
          auto& g = gn->grad_buffer();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            g[i % c] += self.grad[i] * xn->data[i];
        }
      });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) +
                         " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ad[i * k + p];
      const T* brow = bd + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto an = a.node(), bn = b.node();
  return detail::make_result<T>(
      Shape{m, n}, std::move(out), {an, bn},
      [an, bn, m, k, n](const Node<T>& self) {
        const T* dy = self.grad.data();
        if (an->requires_grad) {
          // dA = dY * B^T
          auto& ga = an->grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const T* brow = bn->data.data() + p * n;
              const T* dyrow = dy + i * n;
              T acc = T(0);
              for (std::size_t j = 0; j < n; ++j) acc += dyrow[j] * brow[j];
              ga[i * k + p] += acc;
            }
          }
        }
        if (bn->requires_grad) {
          // dB = A^T * dY
          auto& gb = bn->grad_buffer();
          for (std::size_t i = 0; i < m; ++i) {
            const T* dyrow = dy + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const T av = an->data[i * k + p];
              T* gbrow = gb.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * dyrow[j];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.ndim() != 2) {
    throw DimensionError("transpose: expected a matrix, got " +
                         shape_str(x.shape()));
  }
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  auto xn = x.node();
  return detail::make_result<T>(
      Shape{c, r}, std::move(out), {xn}, [xn, r, c](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) +
                         " as " + shape_str(shape));
  }
  auto xn = x.node();
  return detail::make_result<T>(
      std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), {xn},
      [xn](const Node<T>& self) { detail::accumulate<T>(*xn, self.grad); });
}

// Concatenates along the last axis; leading axes must agree.
template <typename T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_lastdim: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape pl(p.shape().begin(), p.shape().end() - 1);
    if (p.ndim() == 0 || pl != lead) {
      throw DimensionError("concat_lastdim: incompatible shapes " +
                           shape_str(parts[0].shape()) + " and " +
                           shape_str(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<T> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = widths[k];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j)
        out[r * total + offset + j] = parts[k][r * w + j];
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_result<T>(
      std::move(shape), std::move(out), nodes,
      [nodes, widths, rows, total](const Node<T>& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
          const std::size_t w = widths[k];
          if (nodes[k]->requires_grad) {
            auto& g = nodes[k]->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < w; ++j)
                g[r * w + j] += self.grad[r * total + off + j];
          }
          off += w;
        }
      });
}

// Elements [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t end) {
  const auto s = detail::split_axis(x.shape(), axis, "slice");
  if (begin >= end || end > s.n) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for axis of size " +
                         std::to_string(s.n));
  }
  const std::size_t len = end - begin;
  std::vector<T> out(s.outer * len * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t q = 0; q < s.inner; ++q)
        out[(o * len + i) * s.inner + q] =
            x[(o * s.n + begin + i) * s.inner + q];
  Shape shape = x.shape();
  shape[axis] = len;
  auto xn = x.node();
  return detail::make_result<T>(
      std::move(shape), std::move(out), {xn},
      [xn, s, begin, len](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < len; ++i)
            for (std::size_t q = 0; q < s.inner; ++q)
              g[(o * s.n + begin + i) * s.inner + q] +=
                  self.grad[(o * len + i) * s.inner + q];
      });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  auto xn = x.node();
  return detail::make_result<T>(Shape{1}, std::vector<T>{acc}, {xn},
                                [xn](const Node<T>& self) {
                                  auto& g = xn->grad_buffer();
                                  for (auto& v : g) v += self.grad[0];
                                });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// Mean over one axis; that axis is removed from the result shape.
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis, "reduce_mean");
  std::vector<T> out(s.outer * s.inner, T(0));
  const T inv = T(1) / static_cast<T>(s.n);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t q = 0; q < s.inner; ++q)
        out[o * s.inner + q] += x[(o * s.n + i) * s.inner + q];
  for (auto& v : out) v *= inv;
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape.push_back(1);
  auto xn = x.node();
  return detail::make_result<T>(
      std::move(shape), std::move(out), {xn}, [xn, s, inv](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < s.n; ++i)
            for (std::size_t q = 0; q < s.inner; ++q)
              g[(o * s.n + i) * s.inner + q] += self.grad[o * s.inner + q] * inv;
      });
}

// Population variance over one axis; that axis is removed.
template <typename T>
Tensor<T> reduce_var(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis, "reduce_var");
  const T inv = T(1) / static_cast<T>(s.n);
  std::vector<T> mean(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t q = 0; q < s.inner; ++q)
        mean[o * s.inner + q] += x[(o * s.n + i) * s.inner + q];
  for (auto& v : mean) v *= inv;
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.n; ++i)
      for (std::size_t q = 0; q < s.inner; ++q) {
        const T d = x[(o * s.n + i) * s.inner + q] - mean[o * s.inner + q];
        out[o * s.inner + q] += d * d;
      }
  for (auto& v : out) v *= inv;
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape.push_back(1);
  auto xn = x.node();
  return detail::make_result<T>(
      std::move(shape), std::move(out), {xn},
      [xn, s, inv, mean = std::move(mean)](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < s.n; ++i)
            for (std::size_t q = 0; q < s.inner; ++q) {
              const std::size_t idx = (o * s.n + i) * s.inner + q;
              g[idx] += self.grad[o * s.inner + q] * T(2) * inv *
                        (xn->data[idx] - mean[o * s.inner + q]);
            }
      });
}

// Softmax over the last axis, stabilized by subtracting the row maximum.
// NaN inputs propagate to NaN outputs.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.ndim() == 0 || x.shape().back() == 0) {
    throw DimensionError("softmax_lastdim: empty last axis in " +
                         shape_str(x.shape()));
  }
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * c;
    T* o = out.data() + r * c;
    T mx = in[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    if (std::isnan(mx)) mx = T(0);
    T sum = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= sum;
  }
  auto xn = x.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {xn}, [xn, rows, c](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* y = self.data.data() + r * c;
          const T* dy = self.grad.data() + r * c;
          T dot = T(0);
          for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
          for (std::size_t j = 0; j < c; ++j) g[r * c + j] += y[j] * (dy[j] - dot);
        }
      });
}

// Normalizes each token over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  detail::require_channel_vector(x, gamma, "layer_norm");
  detail::require_channel_vector(x, beta, "layer_norm");
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data().data() + r * c;
    T mean = T(0);
    for (std::size_t j = 0; j < c; ++j) mean += in[j];
    mean /= static_cast<T>(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(c);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[r * c + j] = (in[j] - mean) * inv_std[r];
      out[r * c + j] = xhat[r * c + j] * gamma[j] + beta[j];
    }
  }
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return detail::make_result<T>(
      x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, rows, c, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](const Node<T>& self) {
        const T* dy = self.grad.data();
        if (gn->requires_grad) {
          auto& g = gn->grad_buffer();
          for (std::size_t i = 0; i < rows * c; ++i) g[i % c] += dy[i] * xhat[i];
        }
        if (bn->requires_grad) {
          auto& g = bn->grad_buffer();
          for (std::size_t i = 0; i < rows * c; ++i) g[i % c] += dy[i];
        }
        if (xn->requires_grad) {
          auto& g = xn->grad_buffer();
          std::vector<T> dxhat(c);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t j = 0; j < c; ++j) {
              dxhat[j] = dy[r * c + j] * gn->data[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[r * c + j];
            }
            mean_d /= static_cast<T>(c);
            mean_dx /= static_cast<T>(c);
            for (std::size_t j = 0; j < c; ++j) {
              g[r * c + j] +=
                  inv_std[r] * (dxhat[j] - mean_d - xhat[r * c + j] * mean_dx);
            }
          }
        }
      });
}

}  // namespace stytr
