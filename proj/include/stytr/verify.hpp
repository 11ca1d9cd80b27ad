#pragma once

// Self-verification suites behind `stytr check`: analytic identities of the
// positional encodings, finite-difference gradient checks, permutation
// behaviour of the encoders, CAPE grid geometry and weight-file integrity.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stytr/extractor.hpp"
#include "stytr/gradcheck.hpp"
#include "stytr/losses.hpp"
#include "stytr/model.hpp"
#include "stytr/posenc.hpp"
#include "stytr/samples.hpp"
#include "stytr/weights_io.hpp"

namespace stytr {

struct SuiteResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;  // suite-specific worst observed error
  std::string detail;
};

namespace verify {

inline constexpr double kGradTolerance = 1e-4;

// Inputs with no entry within `margin` of zero, so ReLU/clamp/max kinks
// stay out of reach of the finite-difference step.
inline Tensor<double> leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                           double margin = 1e-3) {
  auto t = random_uniform<double>(std::move(shape), lo, hi, rng, true);
  for (auto& v : t.mutable_data()) {
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  }
  return t;
}

using Op = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Checks d/d(input_i) of sum(op(inputs) * R) for a fixed random R.
inline std::vector<GradCheckResult> check_op(const std::string& name, const Op& op,
                                             std::vector<Tensor<double>> inputs, Rng& rng) {
  const auto y0 = op(inputs);
  const auto proj = random_uniform<double>(y0.shape(), -1.0, 1.0, rng);
  const std::function<Tensor<double>()> loss = [&] { return sum_all(mul(op(inputs), proj)); };
  std::vector<GradCheckResult> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out.push_back(check_gradient<double>(loss, inputs[i], name + "[" + std::to_string(i) + "]",
                                         0, rng));
  }
  return out;
}

// One entry per (primitive, differentiable operand).
inline std::vector<GradCheckResult> primitive_gradient_checks(std::uint64_t seed = 11) {
  Rng rng(seed);
  std::vector<GradCheckResult> all;
  auto run = [&](const std::string& name, const Op& op, std::vector<Tensor<double>> in) {
    auto r = check_op(name, op, std::move(in), rng);
    all.insert(all.end(), r.begin(), r.end());
  };
  using V = std::vector<Tensor<double>>;
  run("add", [](const V& v) { return add(v[0], v[1]); }, {leaf({3, 4}, rng), leaf({3, 4}, rng)});
  run("sub", [](const V& v) { return sub(v[0], v[1]); }, {leaf({3, 4}, rng), leaf({3, 4}, rng)});
  run("mul", [](const V& v) { return mul(v[0], v[1]); }, {leaf({3, 4}, rng), leaf({3, 4}, rng)});
  run("scale", [](const V& v) { return scale(v[0], 1.7); }, {leaf({5}, rng)});
  run("add_scalar", [](const V& v) { return add_scalar(v[0], 0.3); }, {leaf({5}, rng)});
  run("relu", [](const V& v) { return relu(v[0]); }, {leaf({4, 5}, rng)});
  run("square", [](const V& v) { return square(v[0]); }, {leaf({6}, rng)});
  run("sqrt", [](const V& v) { return sqrt(v[0]); }, {leaf({6}, rng, 0.2, 2.0)});
  run("clamp", [](const V& v) { return clamp(v[0], 0.0, 1.0); },
      {random_uniform<double>({12}, 0.05, 0.95, rng, true)});
  run("add_bias", [](const V& v) { return add_bias(v[0], v[1]); }, {leaf({3, 4}, rng), leaf({4}, rng)});
  run("mul_channel", [](const V& v) { return mul_channel(v[0], v[1]); },
      {leaf({3, 4}, rng), leaf({4}, rng)});
  run("matmul", [](const V& v) { return matmul(v[0], v[1]); }, {leaf({5, 4}, rng), leaf({4, 3}, rng)});
  run("transpose", [](const V& v) { return transpose(v[0]); }, {leaf({3, 5}, rng)});
  run("reshape", [](const V& v) { return reshape(v[0], Shape{6, 2}); }, {leaf({3, 4}, rng)});
  run("concat_lastdim", [](const V& v) { return concat_lastdim(v); },
      {leaf({3, 2}, rng), leaf({3, 4}, rng)});
  run("slice", [](const V& v) { return slice(v[0], 1, 1, 3); }, {leaf({3, 4, 2}, rng)});
  run("sum_all", [](const V& v) { return sum_all(v[0]); }, {leaf({3, 4}, rng)});
  run("mean_all", [](const V& v) { return mean_all(v[0]); }, {leaf({3, 4}, rng)});
  run("reduce_mean", [](const V& v) { return reduce_mean(v[0], 1); }, {leaf({3, 4, 2}, rng)});
  run("reduce_var", [](const V& v) { return reduce_var(v[0], 0); }, {leaf({5, 3}, rng)});
  run("softmax_lastdim", [](const V& v) { return softmax_lastdim(v[0]); }, {leaf({3, 7}, rng)});
  run("layer_norm", [](const V& v) { return layer_norm(v[0], v[1], v[2], 1e-5); },
      {leaf({4, 8}, rng), leaf({8}, rng), leaf({8}, rng)});
  run("conv2d_1x1", [](const V& v) { return conv2d_1x1(v[0], v[1], v[2]); },
      {leaf({3, 4, 5}, rng), leaf({5, 2}, rng), leaf({2}, rng)});
  run("conv2d_3x3_pad1", [](const V& v) { return conv2d_3x3_pad1(v[0], v[1], v[2]); },
      {leaf({4, 5, 3}, rng), leaf({3, 3, 3, 2}, rng), leaf({2}, rng)});
  run("avgpool_adaptive", [](const V& v) { return avgpool_adaptive(v[0], 3, 2); },
      {leaf({7, 5, 2}, rng)});
  run("maxpool_2x2", [](const V& v) { return maxpool_2x2(v[0]); }, {leaf({4, 6, 2}, rng)});
  run("upsample_nearest_2x", [](const V& v) { return upsample_nearest_2x(v[0]); },
      {leaf({3, 2, 2}, rng)});
  run("resize_bilinear", [](const V& v) { return resize_bilinear(v[0], 7, 5); },
      {leaf({3, 3, 2}, rng)});
  run("patchify", [](const V& v) { return patchify(v[0], 2); }, {leaf({4, 6, 3}, rng)});
  return all;
}

// Random f64 toy parameters, not the zero-bias initialization, so every
// bias and LayerNorm shift has a nontrivial effect.
inline ParamStore<double> perturbed_params(const TransformerConfig& cfg, std::uint64_t seed) {
  auto params = init_params<double>(cfg, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names()[i];
    const bool is_vector = params[i].ndim() == 1;
    if (!is_vector) continue;
    const bool gain = name.ends_with(".gamma");
    for (auto& v : params[i].mutable_data()) {
      v = gain ? 1.0 + rng.uniform(-0.2, 0.2) : rng.uniform(-0.1, 0.1);
    }
  }
  return params;
}

inline std::vector<GradCheckResult> decoder_layer_gradient_checks(std::uint64_t seed = 5) {
  TransformerConfig cfg = TransformerConfig::toy();
  cfg.channels = 16;
  cfg.heads = 4;
  cfg.ffn_hidden = 24;
  auto params = perturbed_params(cfg, seed);
  const auto w = DecoderLayerWeights<double>::from(params, "dec.0");
  Rng rng(seed + 1);
  auto x = leaf({6, 16}, rng);
  auto style = leaf({4, 16}, rng);
  auto pos = leaf({6, 16}, rng);
  const auto proj = random_uniform<double>({6, 16}, -1.0, 1.0, rng);
  const std::function<Tensor<double>()> loss = [&] {
    return sum_all(mul(decoder_layer(x, style, pos, w, cfg.heads), proj));
  };
  std::vector<GradCheckResult> out;
  out.push_back(check_gradient<double>(loss, x, "decoder_layer/x", 0, rng));
  out.push_back(check_gradient<double>(loss, style, "decoder_layer/style", 0, rng));
  out.push_back(check_gradient<double>(loss, pos, "decoder_layer/pos", 0, rng));
  for (const char* p : {"dec.0.attn1.wq", "dec.0.attn1.wk", "dec.0.attn2.wv", "dec.0.attn2.wo",
                        "dec.0.ln2.gamma", "dec.0.ffn.w1", "dec.0.ffn.b2", "dec.0.ln3.beta"}) {
    out.push_back(check_gradient<double>(loss, params.at(p), p, 12, rng));
  }
  return out;
}

inline std::vector<GradCheckResult> encoder_layer_gradient_checks(std::uint64_t seed = 6) {
  TransformerConfig cfg = TransformerConfig::toy();
  cfg.channels = 16;
  cfg.ffn_hidden = 24;
  auto params = perturbed_params(cfg, seed);
  const auto w = EncoderLayerWeights<double>::from(params, "enc_content.0");
  Rng rng(seed + 1);
  auto x = leaf({5, 16}, rng);
  const auto proj = random_uniform<double>({5, 16}, -1.0, 1.0, rng);
  const std::function<Tensor<double>()> loss = [&] {
    return sum_all(mul(encoder_layer(x, w, cfg.heads), proj));
  };
  std::vector<GradCheckResult> out;
  out.push_back(check_gradient<double>(loss, x, "encoder_layer/x", 0, rng));
  for (const char* p : {"enc_content.0.attn.wq", "enc_content.0.attn.wv",
                        "enc_content.0.ln1.gamma", "enc_content.0.ffn.w2"}) {
    out.push_back(check_gradient<double>(loss, params.at(p), p, 12, rng));
  }
  return out;
}

// Total weighted loss at the toy configuration (C=64, N=4, one encoder
// and one decoder layer, 32x32 images) w.r.t. parameters from every part
// of the network.
inline std::vector<GradCheckResult> full_loss_gradient_checks(std::uint64_t seed = 3,
                                                              std::size_t entries = 6) {
  const auto cfg = TransformerConfig::toy();
  auto params = perturbed_params(cfg, seed);
  const auto phi = builtin_extractor<double>(seed + 100);
  const auto content = image_to_tensor<double>(sample_content(32, 32));
  const auto style = image_to_tensor<double>(sample_style(32, 32));
  const std::function<Tensor<double>()> loss = [&] {
    auto out = stylize_tensor(content, style, params, cfg);
    auto cc = stylize_tensor(content, content, params, cfg);
    auto ss = stylize_tensor(style, style, params, cfg);
    return total_loss(out, content, style, cc, ss, phi, LossWeights{}).total;
  };
  Rng rng(seed + 7);
  std::vector<GradCheckResult> out;
  for (const char* p : {"embed.weight", "embed.bias", "cape.weight", "enc_content.0.attn.wq",
                        "enc_style.0.ffn.w1", "dec.0.attn1.wk", "dec.0.attn2.wv",
                        "dec.0.ln3.gamma", "cnn.0.weight", "cnn.2.bias", "cnn.out.weight"}) {
    out.push_back(check_gradient<double>(loss, params.at(p), p, entries, rng));
  }
  return out;
}

inline double worst(const std::vector<GradCheckResult>& rs) {
  double w = 0.0;
  for (const auto& r : rs) w = std::max(w, r.rel_error);
  return w;
}

}  // namespace verify

inline SuiteResult check_sinusoidal_relation(std::uint64_t seed = 1) {
  constexpr std::size_t d = 512, grid = 32;
  const auto pe = sinusoidal_pe<double>(grid, grid, d);
  Rng rng(seed);
  double err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t a = rng.below(grid * grid), b = rng.below(grid * grid);
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) dot += pe[a * d + k] * pe[b * d + k];
    const double dx = static_cast<double>(b % grid) - static_cast<double>(a % grid);
    const double dy = static_cast<double>(b / grid) - static_cast<double>(a / grid);
    err = std::max(err, std::abs(dot - sinusoidal_relation(dx, dy, d)));
  }
  for (std::size_t a = 0; a < grid * grid; a += 37) {
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) dot += pe[a * d + k] * pe[a * d + k];
    err = std::max(err, std::abs(dot - 256.0));
  }
  return {"sinusoidal-relation", err < 1e-9, err, "1000 pairs on 32x32, d=512"};
}

inline SuiteResult check_attention_decomposition(std::uint64_t seed = 2) {
  Rng rng(seed);
  double err = 0.0;
  for (int i = 0; i < 100; ++i) {
    auto v = [&](Shape s) { return random_uniform<double>(std::move(s), -1.0, 1.0, rng); };
    const auto r = attention_decomposition_check(v({16}), v({16}), v({16}), v({16}),
                                                 v({16, 8}), v({16, 8}));
    err = std::max(err, std::abs(r.score - r.term_sum()) / std::max(1.0, std::abs(r.score)));
  }
  return {"attention-decomposition", err < 1e-9, err, "100 random instances"};
}

inline SuiteResult check_gradients() {
  auto results = verify::primitive_gradient_checks();
  const auto dec = verify::decoder_layer_gradient_checks();
  const auto enc = verify::encoder_layer_gradient_checks();
  const auto full = verify::full_loss_gradient_checks();
  results.insert(results.end(), dec.begin(), dec.end());
  results.insert(results.end(), enc.begin(), enc.end());
  results.insert(results.end(), full.begin(), full.end());
  const double worst = verify::worst(results);
  std::string failing;
  for (const auto& r : results) {
    if (r.rel_error >= verify::kGradTolerance) failing += " " + r.name;
  }
  return {"gradients", failing.empty(), worst,
          std::to_string(results.size()) + " checks, max relative error" +
              (failing.empty() ? "" : "; failing:" + failing)};
}

// Permutes rows of an L x C tensor: row i of the result is row perm[i].
template <typename T>
Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t c = x.dim(1);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t k = 0; k < c; ++k) out[i * c + k] = x[perm[i] * c + k];
  return Tensor<T>(x.shape(), std::move(out));
}

struct PermutationReport {
  double style_deviation = 0.0;    // worst over trials; should be ~0
  double content_deviation = 0.0;  // CAPE counterexample; should be large
};

inline PermutationReport permutation_report(std::uint64_t seed = 4) {
  auto cfg = TransformerConfig::toy();
  cfg.cape_grid = 2;
  const auto params = init_params<float>(cfg, seed);
  Rng rng(seed);
  PermutationReport rep;
  constexpr std::size_t L = 16;
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_uniform<float>({L, cfg.channels}, -1.0, 1.0, rng);
    std::vector<std::size_t> perm(L);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = L - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    const auto direct = permute_rows(encode_style(x, params, cfg), perm);
    const auto permuted = encode_style(permute_rows(x, perm), params, cfg);
    for (std::size_t i = 0; i < direct.numel(); ++i) {
      rep.style_deviation = std::max(
          rep.style_deviation, static_cast<double>(std::abs(direct[i] - permuted[i])));
    }
  }
  // Content branch: a 4x4 token grid whose left half differs from its right
  // half; reversing the token order moves the structure but CAPE is
  // recomputed from the permuted field, so outputs are not a permutation.
  std::vector<float> field(L * cfg.channels);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t k = 0; k < cfg.channels; ++k)
      field[t * cfg.channels + k] = static_cast<float>(
          (t % 4 < 2 ? 1.0 : -1.0) * std::sin(0.3 * static_cast<double>(k + 1)) +
          0.1 * static_cast<double>(t));
  const PatchSequence<float> seq{Tensor<float>({L, cfg.channels}, field), 4, 4, cfg.patch};
  std::vector<std::size_t> perm(L);
  for (std::size_t i = 0; i < L; ++i) perm[i] = (i * 5 + 3) % L;
  const auto& cw = params.at("cape.weight");
  const auto& cb = params.at("cape.bias");
  const auto direct = permute_rows(
      encode_content(seq.tokens, cape(seq, cw, cb, cfg.cape_grid), params, cfg), perm);
  const auto pseq = seq.with_tokens(permute_rows(seq.tokens, perm));
  const auto permuted =
      encode_content(pseq.tokens, cape(pseq, cw, cb, cfg.cape_grid), params, cfg);
  for (std::size_t i = 0; i < direct.numel(); ++i) {
    rep.content_deviation = std::max(rep.content_deviation,
                                     static_cast<double>(std::abs(direct[i] - permuted[i])));
  }
  return rep;
}

inline SuiteResult check_permutation() {
  const auto rep = permutation_report();
  const bool ok = rep.style_deviation < 1e-4 && rep.content_deviation > 1e-2;
  return {"permutation", ok, rep.style_deviation,
          "style max deviation; content+CAPE counterexample deviation " +
              format_real(rep.content_deviation)};
}

inline SuiteResult check_cape_grid() {
  constexpr std::size_t n = 18, c = 8;
  Rng rng(9);
  const auto w = random_uniform<double>({c, c}, -0.5, 0.5, rng);
  const auto b = random_uniform<double>({c}, -0.1, 0.1, rng);
  bool ok = true;
  double err = 0.0;
  for (auto [h, wd] : {std::pair<std::size_t, std::size_t>{18, 18}, {36, 24}, {54, 54}}) {
    const PatchSequence<double> seq{random_uniform<double>({h * wd, c}, -1.0, 1.0, rng), h, wd, 8};
    const auto field = cape_field(seq, w, b, n);
    ok = ok && field.pooled.shape() == Shape{n, n, c} && field.encoding.shape() == Shape{h * wd, c};
    for (const auto& taps : interpolation_weights(h, wd, n)) {
      double s = 0.0;
      for (const auto& t : taps) {
        ok = ok && t.weight >= 0.0;
        s += t.weight;
      }
      err = std::max(err, std::abs(s - 1.0));
    }
  }
  return {"cape-grid", ok && err < 1e-6, err, "pooled grid n x n x C at 18x18, 36x24, 54x54"};
}

// Round trip of a fresh toy model, single-byte corruption detection, and
// (when given) integrity of an existing weight file.
inline SuiteResult check_serialization(const std::optional<std::filesystem::path>& external) {
  const auto cfg = TransformerConfig::toy();
  const auto params = init_params<float>(cfg, 12);
  const auto bytes = encode_weight_file(model_to_file(params, cfg));
  std::string detail = "round trip + corruption";
  bool ok = true;
  try {
    const auto model = model_from_file<float>(decode_weight_file(bytes));
    ok = model.config == cfg && encode_weight_file(model_to_file(model.params, cfg)) == bytes;
  } catch (const Error& e) {
    ok = false;
    detail = e.what();
  }
  for (std::size_t pos : {std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    auto bad = bytes;
    bad[pos] ^= 0x5a;
    try {
      decode_weight_file(bad);
      ok = false;
      detail = "corruption at byte " + std::to_string(pos) + " went undetected";
    } catch (const Error&) {
    }
  }
  if (external) {
    try {
      const auto raw = detail::read_file_bytes(*external);
      const auto file = decode_weight_file(raw);
      if (encode_weight_file(file) != raw) throw LoadError("re-encoding differs");
      detail += "; " + external->string() + " ok";
    } catch (const Error& e) {
      ok = false;
      detail = external->string() + ": " + e.what();
    }
  }
  return {"serialization", ok, 0.0, detail};
}

inline std::vector<SuiteResult> run_all_checks(
    const std::optional<std::filesystem::path>& weights = std::nullopt) {
  return {check_sinusoidal_relation(), check_attention_decomposition(), check_gradients(),
          check_permutation(),         check_cape_grid(),               check_serialization(weights)};
}

}  // namespace stytr
