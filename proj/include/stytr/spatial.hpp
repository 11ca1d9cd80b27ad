#pragma once

// Differentiable operations on channels-last feature maps [H x W x C].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "stytr/ops.hpp"

namespace stytr {

namespace detail {

template <typename T>
void require_hwc(const Tensor<T>& x, const char* op) {
  if (x.ndim() != 3) {
    throw DimensionError(std::string(op) + ": expected an HxWxC map, got " +
                         shape_str(x.shape()));
  }
}

// Source sample positions for an align-corners linear resize.
struct LinearTap {
  std::size_t lo = 0, hi = 0;
  double w_lo = 1.0, w_hi = 0.0;
};

inline std::vector<LinearTap> align_corners_taps(std::size_t in,
                                                 std::size_t out) {
  std::vector<LinearTap> taps(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double src =
        out == 1 ? 0.0
                 : static_cast<double>(i * (in - 1)) / static_cast<double>(out - 1);
    std::size_t lo = static_cast<std::size_t>(std::floor(src));
    lo = std::min(lo, in - 1);
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = src - static_cast<double>(lo);
    taps[i] = {lo, hi, 1.0 - frac, frac};
  }
  return taps;
}

// Start/end (exclusive) of adaptive pooling cell `i` of `out` over `in`.
inline std::pair<std::size_t, std::size_t> pool_cell(std::size_t i,
                                                     std::size_t in,
                                                     std::size_t out) {
  return {i * in / out, (i + 1) * in / out};
}

}  // namespace detail

// 1x1 convolution: per-pixel linear map with weight [Cin x Cout] and bias.
template <typename T>
Tensor<T> conv2d_1x1(const Tensor<T>& x, const Tensor<T>& weight,
                     const Tensor<T>& bias) {
  detail::require_hwc(x, "conv2d_1x1");
  if (weight.ndim() != 2 || weight.dim(0) != x.dim(2)) {
    throw DimensionError("conv2d_1x1: weight " + shape_str(weight.shape()) +
                         " does not accept input " + shape_str(x.shape()));
  }
  const std::size_t h = x.dim(0), w = x.dim(1), cout = weight.dim(1);
  auto flat = reshape(x, Shape{h * w, x.dim(2)});
  auto y = add_bias(matmul(flat, weight), bias);
  return reshape(y, Shape{h, w, cout});
}

// 3x3 convolution, stride 1, zero padding 1. Weight [3 x 3 x Cin x Cout].
template <typename T>
Tensor<T> conv2d_3x3_pad1(const Tensor<T>& x, const Tensor<T>& weight,
                          const Tensor<T>& bias) {
  detail::require_hwc(x, "conv2d_3x3_pad1");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  if (weight.ndim() != 4 || weight.dim(0) != 3 || weight.dim(1) != 3 ||
      weight.dim(2) != cin) {
    throw DimensionError("conv2d_3x3_pad1: weight " +
                         shape_str(weight.shape()) + " does not accept input " +
                         shape_str(x.shape()));
  }
  const std::size_t cout = weight.dim(3);
  if (bias.ndim() != 1 || bias.dim(0) != cout) {
    throw DimensionError("conv2d_3x3_pad1: bias " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(cout) +
                         " output channels");
  }
  std::vector<T> out(h * w * cout);
  const T* in = x.data().data();
  const T* wd = weight.data().data();
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      T* o = out.data() + (r * w + c) * cout;
      for (std::size_t k = 0; k < cout; ++k) o[k] = bias[k];
      for (std::size_t dr = 0; dr < 3; ++dr) {
        if (r + dr < 1 || r + dr - 1 >= h) continue;
        for (std::size_t dc = 0; dc < 3; ++dc) {
          if (c + dc < 1 || c + dc - 1 >= w) continue;
          const T* src = in + ((r + dr - 1) * w + (c + dc - 1)) * cin;
          const T* kern = wd + (dr * 3 + dc) * cin * cout;
          for (std::size_t i = 0; i < cin; ++i) {
            const T v = src[i];
            const T* krow = kern + i * cout;
            for (std::size_t k = 0; k < cout; ++k) o[k] += v * krow[k];
          }
        }
      }
    }
  }
  auto xn = x.node(), wn = weight.node(), bn = bias.node();
  return detail::make_result<T>(
      Shape{h, w, cout}, std::move(out), {xn, wn, bn},
      [xn, wn, bn, h, w, cin, cout](const Node<T>& self) {
        const T* dy = self.grad.data();
        if (bn->requires_grad) {
          auto& g = bn->grad_buffer();
          for (std::size_t p = 0; p < h * w; ++p)
            for (std::size_t k = 0; k < cout; ++k) g[k] += dy[p * cout + k];
        }
        T* gx = xn->requires_grad ? xn->grad_buffer().data() : nullptr;
        T* gw = wn->requires_grad ? wn->grad_buffer().data() : nullptr;
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < w; ++c) {
            const T* d = dy + (r * w + c) * cout;
            for (std::size_t dr = 0; dr < 3; ++dr) {
              if (r + dr < 1 || r + dr - 1 >= h) continue;
              for (std::size_t dc = 0; dc < 3; ++dc) {
                if (c + dc < 1 || c + dc - 1 >= w) continue;
                const std::size_t src = ((r + dr - 1) * w + (c + dc - 1)) * cin;
                const std::size_t kern = (dr * 3 + dc) * cin * cout;
                for (std::size_t i = 0; i < cin; ++i) {
                  const T* krow = wn->data.data() + kern + i * cout;
                  if (gx) {
                    T acc = T(0);
                    for (std::size_t k = 0; k < cout; ++k) acc += d[k] * krow[k];
                    gx[src + i] += acc;
                  }
                  if (gw) {
                    const T v = xn->data[src + i];
                    T* gwrow = gw + kern + i * cout;
                    for (std::size_t k = 0; k < cout; ++k) gwrow[k] += v * d[k];
                  }
                }
              }
            }
          }
        }
      });
}

// Adaptive average pooling onto an out_h x out_w grid. Cell (i, j) covers
// rows floor(i*H/out_h) .. floor((i+1)*H/out_h) (exclusive), likewise columns.
template <typename T>
Tensor<T> avgpool_adaptive(const Tensor<T>& x, std::size_t out_h,
                           std::size_t out_w) {
  detail::require_hwc(x, "avgpool_adaptive");
  const std::size_t h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  if (out_h == 0 || out_w == 0 || h < out_h || w < out_w) {
    throw DimensionError("avgpool_adaptive: input " + std::to_string(h) + "x" +
                         std::to_string(w) + " is smaller than output grid " +
                         std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  std::vector<T> out(out_h * out_w * ch, T(0));
  for (std::size_t i = 0; i < out_h; ++i) {
    const auto [r0, r1] = detail::pool_cell(i, h, out_h);
    for (std::size_t j = 0; j < out_w; ++j) {
      const auto [c0, c1] = detail::pool_cell(j, w, out_w);
      T* o = out.data() + (i * out_w + j) * ch;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c)
          for (std::size_t k = 0; k < ch; ++k) o[k] += x[(r * w + c) * ch + k];
      const T inv = T(1) / static_cast<T>((r1 - r0) * (c1 - c0));
      for (std::size_t k = 0; k < ch; ++k) o[k] *= inv;
    }
  }
  auto xn = x.node();
  return detail::make_result<T>(
      Shape{out_h, out_w, ch}, std::move(out), {xn},
      [xn, h, w, ch, out_h, out_w](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < out_h; ++i) {
          const auto [r0, r1] = detail::pool_cell(i, h, out_h);
          for (std::size_t j = 0; j < out_w; ++j) {
            const auto [c0, c1] = detail::pool_cell(j, w, out_w);
            const T inv = T(1) / static_cast<T>((r1 - r0) * (c1 - c0));
            const T* d = self.grad.data() + (i * out_w + j) * ch;
            for (std::size_t r = r0; r < r1; ++r)
              for (std::size_t c = c0; c < c1; ++c)
                for (std::size_t k = 0; k < ch; ++k)
                  g[(r * w + c) * ch + k] += d[k] * inv;
          }
        }
      });
}

// 2x2 max pooling, stride 2; a trailing odd row/column is dropped.
template <typename T>
Tensor<T> maxpool_2x2(const Tensor<T>& x) {
  detail::require_hwc(x, "maxpool_2x2");
  const std::size_t h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  if (h < 2 || w < 2) {
    throw DimensionError("maxpool_2x2: input " + shape_str(x.shape()) +
                         " is smaller than 2x2");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<T> out(oh * ow * ch);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j)
      for (std::size_t k = 0; k < ch; ++k) {
        std::size_t best = ((2 * i) * w + 2 * j) * ch + k;
        for (std::size_t dr = 0; dr < 2; ++dr)
          for (std::size_t dc = 0; dc < 2; ++dc) {
            const std::size_t idx = ((2 * i + dr) * w + 2 * j + dc) * ch + k;
            if (x[idx] > x[best]) best = idx;
          }
        out[(i * ow + j) * ch + k] = x[best];
        argmax[(i * ow + j) * ch + k] = best;
      }
  auto xn = x.node();
  return detail::make_result<T>(
      Shape{oh, ow, ch}, std::move(out), {xn},
      [xn, argmax = std::move(argmax)](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
      });
}

template <typename T>
Tensor<T> upsample_nearest_2x(const Tensor<T>& x) {
  detail::require_hwc(x, "upsample_nearest_2x");
  const std::size_t h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  const std::size_t oh = 2 * h, ow = 2 * w;
  std::vector<T> out(oh * ow * ch);
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c)
      for (std::size_t k = 0; k < ch; ++k)
        out[(r * ow + c) * ch + k] = x[((r / 2) * w + c / 2) * ch + k];
  auto xn = x.node();
  return detail::make_result<T>(
      Shape{oh, ow, ch}, std::move(out), {xn},
      [xn, w, ch, oh, ow](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t c = 0; c < ow; ++c)
            for (std::size_t k = 0; k < ch; ++k)
              g[((r / 2) * w + c / 2) * ch + k] += self.grad[(r * ow + c) * ch + k];
      });
}

// Bilinear resize with align-corners mapping: output row i samples source
// row i*(H-1)/(out_h-1), so corner samples coincide and resizing to the
// input size is the identity.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h,
                          std::size_t out_w) {
  detail::require_hwc(x, "resize_bilinear");
  const std::size_t h = x.dim(0), w = x.dim(1), ch = x.dim(2);
  if (out_h == 0 || out_w == 0 || h == 0 || w == 0) {
    throw DimensionError("resize_bilinear: empty grid");
  }
  const auto rows = detail::align_corners_taps(h, out_h);
  const auto cols = detail::align_corners_taps(w, out_w);
  std::vector<T> out(out_h * out_w * ch);
  for (std::size_t i = 0; i < out_h; ++i) {
    const auto& ry = rows[i];
    for (std::size_t j = 0; j < out_w; ++j) {
      const auto& cx = cols[j];
      const T w00 = static_cast<T>(ry.w_lo * cx.w_lo);
      const T w01 = static_cast<T>(ry.w_lo * cx.w_hi);
      const T w10 = static_cast<T>(ry.w_hi * cx.w_lo);
      const T w11 = static_cast<T>(ry.w_hi * cx.w_hi);
      const T* p00 = x.data().data() + (ry.lo * w + cx.lo) * ch;
      const T* p01 = x.data().data() + (ry.lo * w + cx.hi) * ch;
      const T* p10 = x.data().data() + (ry.hi * w + cx.lo) * ch;
      const T* p11 = x.data().data() + (ry.hi * w + cx.hi) * ch;
      T* o = out.data() + (i * out_w + j) * ch;
      for (std::size_t k = 0; k < ch; ++k)
        o[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
    }
  }
  auto xn = x.node();
  return detail::make_result<T>(
      Shape{out_h, out_w, ch}, std::move(out), {xn},
      [xn, w, ch, out_h, out_w, rows, cols](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < out_h; ++i) {
          const auto& ry = rows[i];
          for (std::size_t j = 0; j < out_w; ++j) {
            const auto& cx = cols[j];
            const T* d = self.grad.data() + (i * out_w + j) * ch;
            const T w00 = static_cast<T>(ry.w_lo * cx.w_lo);
            const T w01 = static_cast<T>(ry.w_lo * cx.w_hi);
            const T w10 = static_cast<T>(ry.w_hi * cx.w_lo);
            const T w11 = static_cast<T>(ry.w_hi * cx.w_hi);
            for (std::size_t k = 0; k < ch; ++k) {
              g[(ry.lo * w + cx.lo) * ch + k] += w00 * d[k];
              g[(ry.lo * w + cx.hi) * ch + k] += w01 * d[k];
              g[(ry.hi * w + cx.lo) * ch + k] += w10 * d[k];
              g[(ry.hi * w + cx.hi) * ch + k] += w11 * d[k];
            }
          }
        }
      });
}

// Rearranges an HxWx3 image into [L x 3m^2] rows of flattened m x m patches.
// Patches are in row-major grid order; inside a patch, pixels are row-major
// with the channel index fastest.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t m) {
  detail::require_hwc(image, "patchify");
  const std::size_t h = image.dim(0), w = image.dim(1), ch = image.dim(2);
  if (m == 0 || h % m != 0 || w % m != 0) {
    throw DimensionError("patchify: image " + std::to_string(h) + "x" +
                         std::to_string(w) + " is not divisible by patch size " +
                         std::to_string(m));
  }
  const std::size_t hp = h / m, wp = w / m, len = m * m * ch;
  std::vector<std::size_t> src(hp * wp * len);
  for (std::size_t pr = 0; pr < hp; ++pr)
    for (std::size_t pc = 0; pc < wp; ++pc)
      for (std::size_t y = 0; y < m; ++y)
        for (std::size_t x = 0; x < m; ++x)
          for (std::size_t k = 0; k < ch; ++k)
            src[(pr * wp + pc) * len + (y * m + x) * ch + k] =
                ((pr * m + y) * w + (pc * m + x)) * ch + k;
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = image[src[i]];
  auto xn = image.node();
  return detail::make_result<T>(
      Shape{hp * wp, len}, std::move(out), {xn},
      [xn, src = std::move(src)](const Node<T>& self) {
        auto& g = xn->grad_buffer();
        for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
      });
}

}  // namespace stytr
