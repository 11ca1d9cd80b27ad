#pragma once

// Perceptual content/style losses, identity losses and their weighted sum.
//
// Distances ||a - b|| are RMS-normalized by default (Euclidean distance over
// sqrt(element count)); LossOptions::raw_norms switches to plain Euclidean
// distances. Feature statistics are per channel over spatial positions.

#include <cstddef>
#include <string>
#include <vector>

#include "stytr/extractor.hpp"
#include "stytr/ops.hpp"

namespace stytr {

enum class SigmaMode { std_dev, variance };

struct LossOptions {
  bool raw_norms = false;
  SigmaMode sigma = SigmaMode::std_dev;
  double sigma_eps = 1e-5;  // added to the variance under the square root
};

struct LossWeights {
  double content = 10.0;
  double style = 7.0;
  double identity1 = 50.0;
  double identity2 = 1.0;
};

// Differentiable loss terms of one (content, style) pair.
template <typename T>
struct LossTerms {
  Tensor<T> content, style, identity1, identity2, total;
};

// Plain-number view of LossTerms, also used for batch means.
struct LossReport {
  double content = 0.0;
  double style = 0.0;
  double identity1 = 0.0;
  double identity2 = 0.0;
  double total = 0.0;

  template <typename T>
  static LossReport from(const LossTerms<T>& t) {
    return {static_cast<double>(t.content.item()), static_cast<double>(t.style.item()),
            static_cast<double>(t.identity1.item()),
            static_cast<double>(t.identity2.item()), static_cast<double>(t.total.item())};
  }
};

template <typename T>
Tensor<T> distance(const Tensor<T>& a, const Tensor<T>& b, const LossOptions& opts) {
  if (a.shape() != b.shape()) {
    throw DimensionError("distance: shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  auto sq = square(sub(a, b));
  return sqrt(opts.raw_norms ? sum_all(sq) : mean_all(sq));
}

template <typename T>
struct ChannelStats {
  Tensor<T> mean;   // [C]
  Tensor<T> sigma;  // [C]
};

template <typename T>
ChannelStats<T> channel_stats(const Tensor<T>& feature, const LossOptions& opts) {
  const std::size_t c = feature.shape().back();
  auto flat = reshape(feature, Shape{feature.numel() / c, c});
  auto var = reduce_var(flat, 0);
  auto sigma = opts.sigma == SigmaMode::std_dev
                   ? sqrt(add_scalar(var, static_cast<T>(opts.sigma_eps)))
                   : var;
  return {reduce_mean(flat, 0), sigma};
}

namespace detail {

template <typename T>
Tensor<T> mean_of(const std::vector<Tensor<T>>& terms) {
  Tensor<T> acc = terms.at(0);
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, T(1) / static_cast<T>(terms.size()));
}

inline void require_same_stage_count(std::size_t a, std::size_t b) {
  if (a != b) throw DimensionError("feature lists differ in stage count");
}

}  // namespace detail

// (1/N_l) sum_i ||phi_i(out) - phi_i(ref)||
template <typename T>
Tensor<T> content_loss_from_features(const std::vector<Tensor<T>>& out,
                                     const std::vector<Tensor<T>>& ref,
                                     const LossOptions& opts) {
  detail::require_same_stage_count(out.size(), ref.size());
  std::vector<Tensor<T>> terms;
  for (std::size_t i = 0; i < out.size(); ++i) terms.push_back(distance(out[i], ref[i], opts));
  return detail::mean_of(terms);
}

// (1/N_l) sum_i ||mu_i(out) - mu_i(ref)|| + ||sigma_i(out) - sigma_i(ref)||
template <typename T>
Tensor<T> style_loss_from_features(const std::vector<Tensor<T>>& out,
                                   const std::vector<Tensor<T>>& ref,
                                   const LossOptions& opts) {
  detail::require_same_stage_count(out.size(), ref.size());
  std::vector<Tensor<T>> terms;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto a = channel_stats(out[i], opts);
    const auto b = channel_stats(ref[i], opts);
    terms.push_back(add(distance(a.mean, b.mean, opts), distance(a.sigma, b.sigma, opts)));
  }
  return detail::mean_of(terms);
}

template <typename T>
Tensor<T> content_loss(const Tensor<T>& output, const Tensor<T>& content,
                       const FeatureExtractor<T>& phi, const LossOptions& opts = {}) {
  if (output.shape() != content.shape()) {
    throw DimensionError("content_loss: output " + shape_str(output.shape()) +
                         " and content " + shape_str(content.shape()) + " differ");
  }
  return content_loss_from_features(phi.features(output), phi.features(content), opts);
}

template <typename T>
Tensor<T> style_loss(const Tensor<T>& output, const Tensor<T>& style,
                     const FeatureExtractor<T>& phi, const LossOptions& opts = {}) {
  return style_loss_from_features(phi.features(output), phi.features(style), opts);
}

template <typename T>
struct IdentityLosses {
  Tensor<T> pixel;    // L_id1
  Tensor<T> feature;  // L_id2
};

template <typename T>
IdentityLosses<T> identity_losses(const Tensor<T>& content, const Tensor<T>& style,
                                  const Tensor<T>& content_id, const Tensor<T>& style_id,
                                  const FeatureExtractor<T>& phi,
                                  const LossOptions& opts = {}) {
  auto pixel = add(distance(content_id, content, opts), distance(style_id, style, opts));
  auto feature = add(
      content_loss_from_features(phi.features(content_id), phi.features(content), opts),
      content_loss_from_features(phi.features(style_id), phi.features(style), opts));
  return {pixel, feature};
}

template <typename T>
Tensor<T> weighted_total(const LossWeights& w, const Tensor<T>& content,
                         const Tensor<T>& style, const Tensor<T>& id1,
                         const Tensor<T>& id2) {
  auto total = add(scale(content, static_cast<T>(w.content)),
                   scale(style, static_cast<T>(w.style)));
  total = add(total, scale(id1, static_cast<T>(w.identity1)));
  return add(total, scale(id2, static_cast<T>(w.identity2)));
}

// All four terms for one pair plus the weighted total. `output` is
// stylize(content, style); `content_id` and `style_id` are
// stylize(content, content) and stylize(style, style).
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& output, const Tensor<T>& content,
                        const Tensor<T>& style, const Tensor<T>& content_id,
                        const Tensor<T>& style_id, const FeatureExtractor<T>& phi,
                        const LossWeights& weights, const LossOptions& opts = {}) {
  if (output.shape() != content.shape()) {
    throw DimensionError("total_loss: output " + shape_str(output.shape()) +
                         " and content " + shape_str(content.shape()) + " differ");
  }
  const auto f_out = phi.features(output);
  const auto f_content = phi.features(content);
  const auto f_style = phi.features(style);
  LossTerms<T> t;
  t.content = content_loss_from_features(f_out, f_content, opts);
  t.style = style_loss_from_features(f_out, f_style, opts);
  t.identity1 = add(distance(content_id, content, opts), distance(style_id, style, opts));
  t.identity2 = add(content_loss_from_features(phi.features(content_id), f_content, opts),
                    content_loss_from_features(phi.features(style_id), f_style, opts));
  t.total = weighted_total(weights, t.content, t.style, t.identity1, t.identity2);
  return t;
}

}  // namespace stytr
