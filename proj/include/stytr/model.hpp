#pragma once

// The style transfer transformer: a content encoder (with positional
// encoding), a style encoder (without), a decoder whose two attention blocks
// both query the content stream against keys/values from the style stream,
// and a convolutional decoder that maps tokens back to pixels.
//
// All blocks are post-norm: LayerNorm(block(x) + x).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stytr/config.hpp"
#include "stytr/image.hpp"
#include "stytr/ops.hpp"
#include "stytr/params.hpp"
#include "stytr/patching.hpp"
#include "stytr/posenc.hpp"
#include "stytr/random.hpp"
#include "stytr/spatial.hpp"

namespace stytr {

enum class Init { xavier, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::zeros;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

// Every learnable tensor the configuration implies, in canonical order.
inline std::vector<ParamSpec> parameter_layout(const TransformerConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, f = cfg.ffn_hidden, p = cfg.patch_dim();
  std::vector<ParamSpec> out;
  auto matrix = [&](const std::string& name, std::size_t in, std::size_t o) {
    out.push_back({name, Shape{in, o}, Init::xavier, in, o});
  };
  auto vec = [&](const std::string& name, std::size_t n, Init init) {
    out.push_back({name, Shape{n}, init, 0, 0});
  };
  auto conv3 = [&](const std::string& prefix, std::size_t in, std::size_t o) {
    out.push_back({prefix + ".weight", Shape{3, 3, in, o}, Init::xavier, 9 * in, 9 * o});
    vec(prefix + ".bias", o, Init::zeros);
  };
  auto attention = [&](const std::string& prefix) {
    for (const char* m : {"wq", "wk", "wv", "wo"}) matrix(prefix + "." + m, c, c);
  };
  auto norm = [&](const std::string& prefix) {
    vec(prefix + ".gamma", c, Init::ones);
    vec(prefix + ".beta", c, Init::zeros);
  };
  auto ffn = [&](const std::string& prefix) {
    matrix(prefix + ".w1", c, f);
    vec(prefix + ".b1", f, Init::zeros);
    matrix(prefix + ".w2", f, c);
    vec(prefix + ".b2", c, Init::zeros);
  };

  matrix("embed.weight", p, c);
  vec("embed.bias", c, Init::zeros);
  if (cfg.separate_embeddings) {
    matrix("embed_style.weight", p, c);
    vec("embed_style.bias", c, Init::zeros);
  }
  matrix("cape.weight", c, c);
  vec("cape.bias", c, Init::zeros);
  for (const char* branch : {"enc_content", "enc_style"}) {
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
      const std::string pre = std::string(branch) + "." + std::to_string(i);
      attention(pre + ".attn");
      norm(pre + ".ln1");
      ffn(pre + ".ffn");
      norm(pre + ".ln2");
    }
  }
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const std::string pre = "dec." + std::to_string(i);
    attention(pre + ".attn1");
    norm(pre + ".ln1");
    attention(pre + ".attn2");
    norm(pre + ".ln2");
    ffn(pre + ".ffn");
    norm(pre + ".ln3");
  }
  conv3("cnn.0", c, c / 2);
  conv3("cnn.1", c / 2, c / 4);
  conv3("cnn.2", c / 4, c / 8);
  conv3("cnn.out", c / 8, 3);
  return out;
}

// Fresh parameters: Glorot-uniform matrices and kernels drawn in layout
// order from Rng(seed); biases and LayerNorm shifts 0, LayerNorm gains 1.
template <typename T>
ParamStore<T> init_params(const TransformerConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore<T> store;
  for (const auto& spec : parameter_layout(cfg)) {
    switch (spec.init) {
      case Init::xavier:
        store.add(spec.name, xavier_uniform<T>(spec.shape, spec.fan_in,
                                               spec.fan_out, rng));
        break;
      case Init::zeros:
        store.add(spec.name, Tensor<T>::zeros(spec.shape, true));
        break;
      case Init::ones:
        store.add(spec.name, Tensor<T>::full(spec.shape, T(1), true));
        break;
    }
  }
  return store;
}

// Throws LoadError naming the first tensor that is missing, misshapen or
// not part of the layout.
template <typename T>
void check_params(const TransformerConfig& cfg, const ParamStore<T>& store) {
  const auto layout = parameter_layout(cfg);
  for (const auto& spec : layout) {
    if (!store.contains(spec.name)) {
      throw LoadError("missing tensor '" + spec.name + "'");
    }
    const auto& t = store.at(spec.name);
    if (t.shape() != spec.shape) {
      throw LoadError("tensor '" + spec.name + "' has shape " +
                      shape_str(t.shape()) + ", configuration expects " +
                      shape_str(spec.shape));
    }
  }
  if (store.size() != layout.size()) {
    for (const auto& name : store.names()) {
      bool known = false;
      for (const auto& spec : layout) known = known || spec.name == name;
      if (!known) throw LoadError("unexpected tensor '" + name + "'");
    }
  }
}

template <typename T>
struct AttentionWeights {
  Tensor<T> wq, wk, wv, wo;

  static AttentionWeights from(const ParamStore<T>& s, const std::string& p) {
    return {s.at(p + ".wq"), s.at(p + ".wk"), s.at(p + ".wv"), s.at(p + ".wo")};
  }
};

template <typename T>
struct NormWeights {
  Tensor<T> gamma, beta;

  static NormWeights from(const ParamStore<T>& s, const std::string& p) {
    return {s.at(p + ".gamma"), s.at(p + ".beta")};
  }
};

template <typename T>
struct FeedForwardWeights {
  Tensor<T> w1, b1, w2, b2;

  static FeedForwardWeights from(const ParamStore<T>& s, const std::string& p) {
    return {s.at(p + ".w1"), s.at(p + ".b1"), s.at(p + ".w2"), s.at(p + ".b2")};
  }
};

template <typename T>
struct EncoderLayerWeights {
  AttentionWeights<T> attn;
  NormWeights<T> ln1;
  FeedForwardWeights<T> ffn;
  NormWeights<T> ln2;

  static EncoderLayerWeights from(const ParamStore<T>& s, const std::string& p) {
    return {AttentionWeights<T>::from(s, p + ".attn"), NormWeights<T>::from(s, p + ".ln1"),
            FeedForwardWeights<T>::from(s, p + ".ffn"), NormWeights<T>::from(s, p + ".ln2")};
  }
};

template <typename T>
struct DecoderLayerWeights {
  AttentionWeights<T> attn1;
  NormWeights<T> ln1;
  AttentionWeights<T> attn2;
  NormWeights<T> ln2;
  FeedForwardWeights<T> ffn;
  NormWeights<T> ln3;

  static DecoderLayerWeights from(const ParamStore<T>& s, const std::string& p) {
    return {AttentionWeights<T>::from(s, p + ".attn1"), NormWeights<T>::from(s, p + ".ln1"),
            AttentionWeights<T>::from(s, p + ".attn2"), NormWeights<T>::from(s, p + ".ln2"),
            FeedForwardWeights<T>::from(s, p + ".ffn"), NormWeights<T>::from(s, p + ".ln3")};
  }
};

constexpr double kLayerNormEps = 1e-5;

template <typename T>
Tensor<T> apply_norm(const Tensor<T>& x, const NormWeights<T>& w) {
  return layer_norm(x, w.gamma, w.beta, static_cast<T>(kLayerNormEps));
}

// max(0, x W1 + b1) W2 + b2, per token.
template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardWeights<T>& w) {
  auto hidden = relu(add_bias(matmul(x, w.w1), w.b1));
  return add_bias(matmul(hidden, w.w2), w.b2);
}

// Multi-head attention. Head h uses columns [h*d_head, (h+1)*d_head) of
// W_q, W_k, W_v; scores are scaled by 1/sqrt(d_head) and softmax-normalized
// over keys. When `attention` is given, the per-head L_q x L_kv weight
// matrices are appended to it.
template <typename T>
Tensor<T> mha(const Tensor<T>& q_in, const Tensor<T>& kv_in,
              const AttentionWeights<T>& w, std::size_t heads,
              std::vector<Tensor<T>>* attention = nullptr) {
  if (q_in.ndim() != 2 || kv_in.ndim() != 2 || q_in.dim(1) != kv_in.dim(1) ||
      w.wq.ndim() != 2 || w.wq.dim(0) != q_in.dim(1)) {
    throw DimensionError("mha: query " + shape_str(q_in.shape()) + " and key/value " +
                         shape_str(kv_in.shape()) + " do not match projection " +
                         shape_str(w.wq.shape()));
  }
  const std::size_t c = w.wq.dim(1);
  if (heads == 0 || c % heads != 0) {
    throw DimensionError("mha: " + std::to_string(c) +
                         " channels do not split into " + std::to_string(heads) +
                         " heads");
  }
  const std::size_t dh = c / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  auto q = matmul(q_in, w.wq);
  auto k = matmul(kv_in, w.wk);
  auto v = matmul(kv_in, w.wv);
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = slice(q, 1, h * dh, (h + 1) * dh);
    auto kh = slice(k, 1, h * dh, (h + 1) * dh);
    auto vh = slice(v, 1, h * dh, (h + 1) * dh);
    auto weights = softmax_lastdim(scale(matmul(qh, transpose(kh)), inv_sqrt));
    if (attention) attention->push_back(weights);
    outs.push_back(matmul(weights, vh));
  }
  return matmul(concat_lastdim(outs), w.wo);
}

// Self-attention block then feed-forward block, each with residual + LN.
template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& seq, const EncoderLayerWeights<T>& w,
                        std::size_t heads) {
  auto attended = apply_norm(add(mha(seq, seq, w.attn, heads), seq), w.ln1);
  return apply_norm(add(feed_forward(attended, w.ffn), attended), w.ln2);
}

template <typename T>
Tensor<T> run_encoder(Tensor<T> x, const ParamStore<T>& params,
                      const std::string& branch, const TransformerConfig& cfg) {
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    const auto w = EncoderLayerWeights<T>::from(params, branch + "." + std::to_string(i));
    x = encoder_layer(x, w, cfg.heads);
  }
  return x;
}

// Adds the positional code token-wise, then runs the content stack.
template <typename T>
Tensor<T> encode_content(const Tensor<T>& embedding, const Tensor<T>& pos,
                         const ParamStore<T>& params, const TransformerConfig& cfg) {
  return run_encoder(add(embedding, pos), params, "enc_content", cfg);
}

// Style stack; no positional code unless one is passed explicitly.
template <typename T>
Tensor<T> encode_style(const Tensor<T>& embedding, const ParamStore<T>& params,
                       const TransformerConfig& cfg,
                       const std::optional<Tensor<T>>& pos = std::nullopt) {
  return run_encoder(pos ? add(embedding, *pos) : embedding, params, "enc_style", cfg);
}

// x_hat = x + pos
// X''   = LN(MSA(x_hat, Y_s) + x_hat)
// X'    = LN(MSA(X'' + pos, Y_s) + X'')
// X     = LN(FFN(X') + X')
template <typename T>
Tensor<T> decoder_layer(const Tensor<T>& x, const Tensor<T>& style,
                        const Tensor<T>& pos, const DecoderLayerWeights<T>& w,
                        std::size_t heads,
                        std::vector<Tensor<T>>* attention = nullptr) {
  auto query = add(x, pos);
  auto first = apply_norm(add(mha(query, style, w.attn1, heads, attention), query), w.ln1);
  auto second = apply_norm(
      add(mha(add(first, pos), style, w.attn2, heads, attention), first), w.ln2);
  return apply_norm(add(feed_forward(second, w.ffn), second), w.ln3);
}

template <typename T>
Tensor<T> run_decoder(Tensor<T> x, const Tensor<T>& style, const Tensor<T>& pos,
                      const ParamStore<T>& params, const TransformerConfig& cfg) {
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const auto w = DecoderLayerWeights<T>::from(params, "dec." + std::to_string(i));
    x = decoder_layer(x, style, pos, w, cfg.heads);
  }
  return x;
}

// Three (3x3 conv, ReLU, 2x nearest upsample) stages halving the channel
// count each time, a 3x3 conv to RGB, then a clamp to [0, 1].
template <typename T>
Tensor<T> cnn_decode(const PatchSequence<T>& seq, const ParamStore<T>& params) {
  auto x = seq.as_map();
  for (const char* stage : {"cnn.0", "cnn.1", "cnn.2"}) {
    const std::string p(stage);
    x = upsample_nearest_2x(
        relu(conv2d_3x3_pad1(x, params.at(p + ".weight"), params.at(p + ".bias"))));
  }
  x = conv2d_3x3_pad1(x, params.at("cnn.out.weight"), params.at("cnn.out.bias"));
  return clamp(x, T(0), T(1));
}

// Knobs that may differ between calls sharing one set of weights.
struct StylizeOptions {
  std::optional<PeMode> pe_content;
};

// Content H x W x 3 and style images in, H x W x 3 stylized image out.
template <typename T>
Tensor<T> stylize_tensor(const Tensor<T>& content, const Tensor<T>& style,
                         const ParamStore<T>& params, const TransformerConfig& cfg,
                         const StylizeOptions& opts = {}) {
  const auto& ew = params.at("embed.weight");
  const auto& eb = params.at("embed.bias");
  const auto& cw = params.at("cape.weight");
  const auto& cb = params.at("cape.bias");
  auto content_seq = embed(content, ew, eb, cfg.patch);
  auto style_seq = cfg.separate_embeddings
                       ? embed(style, params.at("embed_style.weight"),
                               params.at("embed_style.bias"), cfg.patch)
                       : embed(style, ew, eb, cfg.patch);
  const PeMode content_mode = opts.pe_content.value_or(cfg.pe_content);
  auto pos = positional_encoding(content_mode, content_seq, cw, cb, cfg.cape_grid);
  std::optional<Tensor<T>> style_pos;
  if (cfg.pe_style != PeMode::none) {
    style_pos = positional_encoding(cfg.pe_style, style_seq, cw, cb, cfg.cape_grid);
  }
  auto encoded_content = encode_content(content_seq.tokens, pos, params, cfg);
  auto encoded_style = encode_style(style_seq.tokens, params, cfg, style_pos);
  auto decoded = run_decoder(encoded_content, encoded_style, pos, params, cfg);
  return cnn_decode(content_seq.with_tokens(decoded), params);
}

template <typename T>
ImageBuffer stylize(const ImageBuffer& content, const ImageBuffer& style,
                    const ParamStore<T>& params, const TransformerConfig& cfg,
                    const StylizeOptions& opts = {}) {
  return tensor_to_image(stylize_tensor(image_to_tensor<T>(content),
                                        image_to_tensor<T>(style), params, cfg, opts));
}

// A configuration together with the parameters it describes.
template <typename T>
struct Model {
  TransformerConfig config;
  ParamStore<T> params;

  static Model create(const TransformerConfig& cfg, std::uint64_t seed) {
    return {cfg, init_params<T>(cfg, seed)};
  }

  ImageBuffer stylize(const ImageBuffer& content, const ImageBuffer& style,
                      const StylizeOptions& opts = {}) const {
    return stytr::stylize(content, style, params, config, opts);
  }
};

}  // namespace stytr
