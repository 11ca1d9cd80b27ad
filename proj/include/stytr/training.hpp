#pragma once

// Adam with linear warm-up, the per-batch training step, and seeded
// sampling of (content, style) crops from image directories.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stytr/extractor.hpp"
#include "stytr/image.hpp"
#include "stytr/losses.hpp"
#include "stytr/model.hpp"
#include "stytr/params.hpp"
#include "stytr/random.hpp"

namespace stytr {

// base_lr * min(t / warmup_steps, 1); warmup_steps == 0 disables warm-up.
inline double lr_schedule(std::size_t t, double base_lr, std::size_t warmup_steps) {
  if (warmup_steps == 0) return base_lr;
  const double ramp = static_cast<double>(t) / static_cast<double>(warmup_steps);
  return base_lr * std::min(ramp, 1.0);
}

// Default warm-up length: 1% of the run, at least 100 steps.
inline std::size_t default_warmup_steps(std::size_t total_iters) {
  return std::max<std::size_t>(total_iters / 100, 100);
}

struct AdamOptions {
  double base_lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 100;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::size_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  AdamState() = default;
  AdamState(const ParamStore<T>& params, AdamOptions opts) : options(opts) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_moment.emplace_back(params[i].numel(), T(0));
      second_moment.emplace_back(params[i].numel(), T(0));
    }
  }
};

// Throws NumericError naming the first parameter with a non-finite gradient.
template <typename T>
void require_finite_gradients(const ParamStore<T>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    for (T g : params[i].grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter '" + params.names()[i] +
                           "'; optimizer step aborted");
      }
    }
  }
}

template <typename T>
double gradient_norm(const ParamStore<T>& params) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    for (T g : params[i].grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

// One bias-corrected Adam update using the gradients stored on `params`,
// at learning rate lr_schedule(t). Parameters without a gradient are
// treated as having a zero gradient. Returns the learning rate used.
template <typename T>
double adam_step(ParamStore<T>& params, AdamState<T>& state, double grad_scale = 1.0) {
  require_finite_gradients(params);
  if (state.first_moment.size() != params.size()) {
    throw Error("adam_step: optimizer state does not match parameter set");
  }
  const auto& o = state.options;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double lr = lr_schedule(state.step, o.base_lr, o.warmup_steps);
  const double correction1 = 1.0 - std::pow(o.beta1, t);
  const double correction2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.requires_grad()) continue;
    const auto grad = p.grad();
    auto values = p.mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != values.size()) {
      throw Error("adam_step: moment size mismatch for '" + params.names()[i] + "'");
    }
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = static_cast<double>(grad[k]) * grad_scale;
      const double mk = o.beta1 * static_cast<double>(m[k]) + (1.0 - o.beta1) * g;
      const double vk = o.beta2 * static_cast<double>(v[k]) + (1.0 - o.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / correction1;
      const double v_hat = vk / correction2;
      values[k] = static_cast<T>(static_cast<double>(values[k]) -
                                 lr * m_hat / (std::sqrt(v_hat) + o.eps));
    }
  }
  return lr;
}

struct ImagePair {
  ImageBuffer content;
  ImageBuffer style;
};

struct StepOptions {
  LossWeights weights;
  LossOptions loss;
  double clip_norm = 0.0;  // 0 disables global gradient-norm clipping
};

struct StepResult {
  LossReport loss;  // batch mean
  double lr = 0.0;
  double grad_norm = 0.0;
};

// Forward/backward over a batch and one optimizer step. Per pair the
// network is run three times: stylize(c, s), stylize(c, c), stylize(s, s).
// The objective is the mean of the per-pair totals, summed in pair order.
template <typename T>
StepResult train_step(const std::vector<ImagePair>& batch, ParamStore<T>& params,
                      const TransformerConfig& cfg, AdamState<T>& state,
                      const FeatureExtractor<T>& phi, const StepOptions& opts) {
  if (batch.empty()) throw Error("train_step: empty batch");
  params.zero_grad();
  LossReport mean;
  Tensor<T> objective;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& pair : batch) {
    const auto content = image_to_tensor<T>(pair.content);
    const auto style = image_to_tensor<T>(pair.style);
    const auto output = stylize_tensor(content, style, params, cfg);
    const auto content_id = stylize_tensor(content, content, params, cfg);
    const auto style_id = stylize_tensor(style, style, params, cfg);
    const auto terms = total_loss(output, content, style, content_id, style_id, phi,
                                  opts.weights, opts.loss);
    const auto r = LossReport::from(terms);
    mean.content += r.content * inv;
    mean.style += r.style * inv;
    mean.identity1 += r.identity1 * inv;
    mean.identity2 += r.identity2 * inv;
    mean.total += r.total * inv;
    objective = objective.defined() ? add(objective, terms.total) : terms.total;
  }
  objective = scale(objective, static_cast<T>(inv));
  if (objective.requires_grad()) objective.backward();
  StepResult result;
  result.loss = mean;
  require_finite_gradients(params);
  result.grad_norm = gradient_norm(params);
  double grad_scale = 1.0;
  if (opts.clip_norm > 0.0 && result.grad_norm > opts.clip_norm) {
    grad_scale = opts.clip_norm / result.grad_norm;
  }
  result.lr = adam_step(params, state, grad_scale);
  return result;
}

// Sorted list of the .ppm files in `dir`.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no .ppm images in " + dir.string());
  return out;
}

struct CropChoice {
  std::size_t file = 0;
  std::size_t top = 0;
  std::size_t left = 0;

  bool operator==(const CropChoice&) const = default;
};

// Uniform file index, then uniform top and left offsets, from `rng`.
inline CropChoice draw_crop(const std::vector<ImageBuffer>& images, std::size_t crop_size,
                            Rng& rng) {
  if (images.empty()) throw DataError("no images to sample from");
  CropChoice c;
  c.file = static_cast<std::size_t>(rng.below(images.size()));
  const auto& img = images[c.file];
  if (img.height < crop_size || img.width < crop_size) {
    throw DataError("image " + std::to_string(c.file) + " (" + std::to_string(img.height) +
                    "x" + std::to_string(img.width) + ") is smaller than the crop size " +
                    std::to_string(crop_size));
  }
  c.top = static_cast<std::size_t>(rng.below(img.height - crop_size + 1));
  c.left = static_cast<std::size_t>(rng.below(img.width - crop_size + 1));
  return c;
}

struct SampledPair {
  ImagePair images;
  CropChoice content;
  CropChoice style;
};

// Draws the content crop, then the style crop.
inline SampledPair sample_pair(const std::vector<ImageBuffer>& contents,
                               const std::vector<ImageBuffer>& styles,
                               std::size_t crop_size, Rng& rng) {
  SampledPair out;
  out.content = draw_crop(contents, crop_size, rng);
  out.style = draw_crop(styles, crop_size, rng);
  out.images.content = crop(contents[out.content.file], out.content.top,
                            out.content.left, crop_size, crop_size);
  out.images.style =
      crop(styles[out.style.file], out.style.top, out.style.left, crop_size, crop_size);
  return out;
}

inline std::vector<ImageBuffer> load_image_dir(const std::filesystem::path& dir) {
  std::vector<ImageBuffer> out;
  for (const auto& p : list_images(dir)) out.push_back(read_ppm(p));
  return out;
}

}  // namespace stytr
