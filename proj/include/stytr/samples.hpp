#pragma once

// Procedural sample images: the bundled training pair and inputs for the
// command-line harnesses. Pure functions of their size arguments.

#include <cmath>
#include <cstddef>

#include "stytr/image.hpp"

namespace stytr {

// Smooth sky-to-ground gradient with a disc and a bar: large-scale
// structure a content encoder should preserve.
inline ImageBuffer sample_content(std::size_t h, std::size_t w) {
  ImageBuffer img(h, w);
  const double cy = 0.4 * static_cast<double>(h), cx = 0.35 * static_cast<double>(w);
  const double radius = 0.22 * static_cast<double>(std::min(h, w));
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double v = static_cast<double>(r) / static_cast<double>(h);
      double rgb[3] = {0.25 + 0.3 * v, 0.45 + 0.2 * v, 0.85 - 0.5 * v};
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      if (dx * dx + dy * dy < radius * radius) {
        rgb[0] = 0.95; rgb[1] = 0.8; rgb[2] = 0.2;
      }
      if (r > 3 * h / 4 && c > w / 2 && c < 7 * w / 8) {
        rgb[0] = 0.3; rgb[1] = 0.2; rgb[2] = 0.1;
      }
      for (std::size_t k = 0; k < 3; ++k) img.at(r, c, k) = static_cast<float>(rgb[k]);
    }
  }
  return img;
}

// High-frequency diagonal stripes in a warm palette: a texture to transfer.
inline ImageBuffer sample_style(std::size_t h, std::size_t w) {
  ImageBuffer img(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double t = static_cast<double>(r + 2 * c);
      const double s = 0.5 + 0.5 * std::sin(t * 0.7);
      const double q = 0.5 + 0.5 * std::cos(static_cast<double>(r) * 0.45);
      img.at(r, c, 0) = static_cast<float>(0.55 + 0.4 * s);
      img.at(r, c, 1) = static_cast<float>(0.2 + 0.35 * q * s);
      img.at(r, c, 2) = static_cast<float>(0.1 + 0.25 * (1.0 - s));
    }
  }
  return img;
}

}  // namespace stytr
