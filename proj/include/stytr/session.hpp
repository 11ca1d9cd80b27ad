#pragma once

// A training run driven by a RunConfig: parameter init, extractor, seeded
// crop sampling, per-step optimizer updates and the loss trace format.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "stytr/run_config.hpp"
#include "stytr/training.hpp"
#include "stytr/weights_io.hpp"

namespace stytr {

struct LossRow {
  std::size_t step = 0;
  LossReport loss;
  double lr = 0.0;
};

inline std::string csv_header() { return "step,L_c,L_s,L_id1,L_id2,total,lr"; }

inline std::string csv_row(const LossRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.9e,%.9e,%.9e,%.9e,%.9e,%.9e", r.step, r.loss.content,
                r.loss.style, r.loss.identity1, r.loss.identity2, r.loss.total, r.lr);
  return buf;
}

template <typename T>
FeatureExtractor<T> make_extractor(const TrainOptions& t) {
  if (t.extractor == "builtin") return builtin_extractor<T>(t.extractor_seed, t.extractor_stages);
  return load_extractor<T>(t.extractor);
}

// Parameters come from init_params(model, seed); crops from an Rng seeded
// with seed + 1.
template <typename T>
class TrainingSession {
 public:
  TrainingSession(RunConfig config, std::vector<ImageBuffer> contents,
                  std::vector<ImageBuffer> styles)
      : config_(std::move(config)),
        params_(init_params<T>(config_.model, config_.train.seed)),
        phi_(make_extractor<T>(config_.train)),
        rng_(config_.train.seed + 1),
        contents_(std::move(contents)),
        styles_(std::move(styles)) {
    const auto& t = config_.train;
    if (t.crop % config_.model.patch != 0) {
      throw ConfigError("crop " + std::to_string(t.crop) + " is not a multiple of the patch size " +
                        std::to_string(config_.model.patch));
    }
    AdamOptions adam;
    adam.base_lr = t.lr;
    adam.warmup_steps = t.resolved_warmup();
    state_ = AdamState<T>(params_, adam);
    step_opts_.weights = t.weights;
    step_opts_.loss = t.loss;
    step_opts_.clip_norm = t.clip_norm;
  }

  // One optimizer step; the row carries the losses computed before the
  // update and the learning rate the update used.
  LossRow step() {
    std::vector<ImagePair> batch;
    for (std::size_t i = 0; i < config_.train.batch_size; ++i) {
      batch.push_back(sample_pair(contents_, styles_, config_.train.crop, rng_).images);
    }
    const auto r = train_step(batch, params_, config_.model, state_, phi_, step_opts_);
    return {state_.step, r.loss, r.lr};
  }

  std::size_t steps_taken() const { return state_.step; }
  const RunConfig& config() const { return config_; }
  const ParamStore<T>& params() const { return params_; }

  void save(const std::filesystem::path& path) const {
    save_weights(path, params_, config_.model);
  }

 private:
  RunConfig config_;
  ParamStore<T> params_;
  FeatureExtractor<T> phi_;
  AdamState<T> state_;
  StepOptions step_opts_;
  Rng rng_;
  std::vector<ImageBuffer> contents_;
  std::vector<ImageBuffer> styles_;
};

// "<stem>_step000200<ext>" next to the final checkpoint path.
inline std::filesystem::path checkpoint_path(const std::filesystem::path& out, std::size_t step) {
  char suffix[32];
  std::snprintf(suffix, sizeof suffix, "_step%06zu", step);
  auto p = out;
  p.replace_filename(out.stem().string() + suffix + out.extension().string());
  return p;
}

}  // namespace stytr
