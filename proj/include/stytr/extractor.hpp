#pragma once

// Frozen convolutional feature extractor used by the perceptual losses.
//
// An extractor is an ordered list of stages; each stage is a short sequence
// of layers (conv3x3, conv1x1, relu, avgpool2, maxpool2) applied to the
// previous stage's output. Every stage output is one feature map phi_i.

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "stytr/error.hpp"
#include "stytr/ops.hpp"
#include "stytr/random.hpp"
#include "stytr/spatial.hpp"

namespace stytr {

enum class LayerKind { conv3x3, conv1x1, relu, avgpool2, maxpool2 };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::conv1x1: return "conv1x1";
    case LayerKind::relu: return "relu";
    case LayerKind::avgpool2: return "avgpool2";
    case LayerKind::maxpool2: return "maxpool2";
  }
  return "?";
}

inline LayerKind parse_layer_kind(std::string_view s) {
  for (auto k : {LayerKind::conv3x3, LayerKind::conv1x1, LayerKind::relu,
                 LayerKind::avgpool2, LayerKind::maxpool2}) {
    if (s == to_string(k)) return k;
  }
  throw LoadError("unknown extractor layer '" + std::string(s) + "'");
}

inline bool has_weights(LayerKind k) {
  return k == LayerKind::conv3x3 || k == LayerKind::conv1x1;
}

template <typename T>
struct ExtractorLayer {
  LayerKind kind = LayerKind::relu;
  Tensor<T> weight;  // conv layers only
  Tensor<T> bias;
};

template <typename T>
class FeatureExtractor {
 public:
  using Stage = std::vector<ExtractorLayer<T>>;

  explicit FeatureExtractor(std::vector<Stage> stages) : stages_(std::move(stages)) {
    if (stages_.size() < 2) {
      throw ConfigError("feature extractor needs at least 2 stages, got " +
                        std::to_string(stages_.size()));
    }
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      if (stages_[s].empty()) {
        throw ConfigError("extractor stage " + std::to_string(s) + " is empty");
      }
      for (auto& layer : stages_[s]) {
        if (!has_weights(layer.kind)) continue;
        if (!layer.weight.defined() || !layer.bias.defined()) {
          throw ConfigError("extractor stage " + std::to_string(s) + ": " +
                            to_string(layer.kind) + " without weights");
        }
        // Frozen: never part of a gradient graph.
        layer.weight = layer.weight.detach();
        layer.bias = layer.bias.detach();
      }
    }
  }

  std::size_t stage_count() const { return stages_.size(); }
  const std::vector<Stage>& stages() const { return stages_; }

  // phi_1 .. phi_N for an H x W x 3 image.
  std::vector<Tensor<T>> features(const Tensor<T>& image) const {
    std::vector<Tensor<T>> out;
    out.reserve(stages_.size());
    Tensor<T> x = image;
    for (const auto& stage : stages_) {
      for (const auto& layer : stage) x = apply(layer, x);
      out.push_back(x);
    }
    return out;
  }

 private:
  static Tensor<T> apply(const ExtractorLayer<T>& layer, const Tensor<T>& x) {
    switch (layer.kind) {
      case LayerKind::conv3x3: return conv2d_3x3_pad1(x, layer.weight, layer.bias);
      case LayerKind::conv1x1: return conv2d_1x1(x, layer.weight, layer.bias);
      case LayerKind::relu: return relu(x);
      case LayerKind::avgpool2:
        if (x.dim(0) < 2 || x.dim(1) < 2) {
          throw DimensionError("extractor: feature map " + shape_str(x.shape()) +
                               " is too small to downsample");
        }
        return avgpool_adaptive(x, x.dim(0) / 2, x.dim(1) / 2);
      case LayerKind::maxpool2: return maxpool_2x2(x);
    }
    throw Error("unhandled extractor layer");
  }

  std::vector<Stage> stages_;
};

// Deterministic stand-in for a pretrained network: `stages` stages of
// (3x3 conv, ReLU, 2x average downsample) with 16, 32, 48, 64, ... channels
// and Glorot-uniform kernels drawn from Rng(seed). Biases are zero.
template <typename T>
FeatureExtractor<T> builtin_extractor(std::uint64_t seed, std::size_t stages = 4) {
  Rng rng(seed);
  std::vector<typename FeatureExtractor<T>::Stage> out;
  std::size_t in = 3;
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t ch = 16 * (s + 1);
    ExtractorLayer<T> conv{LayerKind::conv3x3,
                           xavier_uniform<T>(Shape{3, 3, in, ch}, 9 * in, 9 * ch, rng, false),
                           Tensor<T>::zeros(Shape{ch})};
    out.push_back({conv, ExtractorLayer<T>{LayerKind::relu, {}, {}},
                   ExtractorLayer<T>{LayerKind::avgpool2, {}, {}}});
    in = ch;
  }
  return FeatureExtractor<T>(std::move(out));
}

}  // namespace stytr
