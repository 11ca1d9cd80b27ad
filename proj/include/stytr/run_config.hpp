#pragma once

// Run configuration: a key=value file covering the network, training,
// loss and extractor settings. Unknown keys are rejected and every value is
// validated when parsed; later key=value overrides replace file values.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stytr/config.hpp"
#include "stytr/losses.hpp"
#include "stytr/training.hpp"

namespace stytr {

struct TrainOptions {
  std::size_t batch_size = 2;
  std::size_t iters = 1000;
  std::size_t crop = 256;
  std::uint64_t seed = 0;
  double lr = 0.0005;
  std::optional<std::size_t> warmup_steps;  // default_warmup_steps(iters) when unset
  std::size_t ckpt_every = 0;               // 0: only the final checkpoint
  double clip_norm = 0.0;
  LossWeights weights;
  LossOptions loss;
  std::string extractor = "builtin";  // "builtin" or a weight file path
  std::uint64_t extractor_seed = 0;
  std::size_t extractor_stages = 4;

  std::size_t resolved_warmup() const {
    return warmup_steps.value_or(default_warmup_steps(iters));
  }
};

struct RunConfig {
  TransformerConfig model;
  TrainOptions train;

  void apply(const std::string& key, const std::string& value) {
    if (model.apply(key, value)) return;
    auto& t = train;
    if (key == "batch_size") t.batch_size = parse_count(key, value);
    else if (key == "iters") t.iters = parse_count(key, value);
    else if (key == "crop") t.crop = parse_count(key, value);
    else if (key == "seed") t.seed = parse_count(key, value, 0);
    else if (key == "lr") t.lr = parse_nonnegative(key, value);
    else if (key == "warmup_steps") t.warmup_steps = parse_count(key, value, 0);
    else if (key == "ckpt_every") t.ckpt_every = parse_count(key, value, 0);
    else if (key == "clip_norm") t.clip_norm = parse_nonnegative(key, value);
    else if (key == "lambda_c") t.weights.content = parse_nonnegative(key, value);
    else if (key == "lambda_s") t.weights.style = parse_nonnegative(key, value);
    else if (key == "lambda_id1") t.weights.identity1 = parse_nonnegative(key, value);
    else if (key == "lambda_id2") t.weights.identity2 = parse_nonnegative(key, value);
    else if (key == "raw_norms") t.loss.raw_norms = parse_bool(key, value);
    else if (key == "sigma") {
      if (value == "std") t.loss.sigma = SigmaMode::std_dev;
      else if (value == "variance") t.loss.sigma = SigmaMode::variance;
      else throw ConfigError("key 'sigma': expected std or variance, got '" + value + "'");
    }
    else if (key == "extractor") {
      if (value.empty()) throw ConfigError("key 'extractor': empty value");
      t.extractor = value;
    }
    else if (key == "extractor_seed") t.extractor_seed = parse_count(key, value, 0);
    else if (key == "extractor_stages") t.extractor_stages = parse_count(key, value, 2);
    else throw ConfigError("unknown config key '" + key + "'");
  }

  // Applies "key=value" strings in order, then validates.
  void apply_overrides(const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("override '" + o + "' is not key=value");
      }
      apply(detail::trim(o.substr(0, eq)), detail::trim(o.substr(eq + 1)));
    }
    model.validate();
  }

  static RunConfig parse(std::string_view text) {
    const auto kv = parse_key_values(text);
    RunConfig rc;
    for (const auto& [k, v] : kv) rc.apply(k, v);
    if (!kv.contains("ffn_hidden")) rc.model.ffn_hidden = 4 * rc.model.channels;
    rc.model.validate();
    return rc;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      return parse(ss.str());
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }

 private:
  static double parse_nonnegative(const std::string& key, const std::string& value) {
    const double v = parse_real(key, value);
    if (!(v >= 0.0)) throw ConfigError("key '" + key + "': must be >= 0");
    return v;
  }
};

}  // namespace stytr
