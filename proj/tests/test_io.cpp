#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "stytr/run_config.hpp"
#include "stytr/samples.hpp"
#include "stytr/weights_io.hpp"
#include "support/oracles.hpp"

using namespace stytr;
namespace fs = std::filesystem;

namespace {

// Recomputes the trailing checksum after a deliberate edit.
void reseal(std::vector<std::uint8_t>& bytes) {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i + 8 < bytes.size(); ++i) s += bytes[i];
  for (int i = 0; i < 8; ++i) bytes[bytes.size() - 8 + i] = static_cast<std::uint8_t>(s >> (8 * i));
}

TransformerConfig small_config() {
  auto cfg = TransformerConfig::toy();
  cfg.channels = 16;
  cfg.ffn_hidden = 32;
  cfg.cape_grid = 2;
  return cfg;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / name; }

}  // namespace

TEST(WeightFile, SaveLoadIsBitwise) {
  const auto cfg = small_config();
  const auto params = init_params<float>(cfg, 1);
  const auto path = temp_file("stytr_io_model.styw");
  save_weights(path, params, cfg);
  const auto model = load_weights<float>(path, cfg);
  EXPECT_EQ(model.config, cfg);
  ASSERT_EQ(model.params.names(), params.names());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(model.params[i].shape(), params[i].shape());
    EXPECT_EQ(std::memcmp(model.params[i].data().data(), params[i].data().data(),
                          params[i].numel() * sizeof(float)), 0);
  }
  fs::remove(path);
}

TEST(WeightFile, DoublePrecisionRoundTripAndNarrowing) {
  const auto cfg = small_config();
  const auto params = init_params<double>(cfg, 2);
  const auto bytes = encode_weight_file(model_to_file(params, cfg));
  const auto model = model_from_file<double>(decode_weight_file(bytes));
  EXPECT_EQ(oracle::values(model.params.at("dec.0.attn2.wk")), oracle::values(params.at("dec.0.attn2.wk")));
  const auto narrowed = model_from_file<float>(decode_weight_file(bytes));
  const auto& src = params.at("dec.0.attn2.wk");
  const auto& dst = narrowed.params.at("dec.0.attn2.wk");
  for (std::size_t i = 0; i < src.numel(); ++i) EXPECT_EQ(dst[i], static_cast<float>(src[i]));
}

TEST(WeightFile, HeaderLayout) {
  const auto bytes = encode_weight_file(model_to_file(init_params<float>(small_config(), 3), small_config()));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "STYW");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
}

TEST(WeightFile, VersionBumpRejected) {
  auto bytes = encode_weight_file(model_to_file(init_params<float>(small_config(), 4), small_config()));
  bytes[4] = 2;
  reseal(bytes);
  try {
    decode_weight_file(bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    EXPECT_EQ(e.offset(), 4u);
  }
}

TEST(WeightFile, EveryFlippedByteDetected) {
  const auto bytes = encode_weight_file(model_to_file(init_params<float>(small_config(), 5), small_config()));
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    auto bad = bytes;
    const auto pos = static_cast<std::size_t>(rng.below(bad.size()));
    bad[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    EXPECT_THROW(decode_weight_file(bad), Error) << "byte " << pos;
  }
  auto payload_flip = bytes;
  payload_flip[40] ^= 0x01;
  EXPECT_THROW(
      {
        try {
          decode_weight_file(payload_flip);
        } catch (const LoadError& e) {
          EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
          throw;
        }
      },
      LoadError);
}

TEST(WeightFile, TruncationDetected) {
  auto bytes = encode_weight_file(model_to_file(init_params<float>(small_config(), 6), small_config()));
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(decode_weight_file(bytes), Error);
}

TEST(WeightFile, ShapeConflictNamesTensor) {
  const auto cfg = small_config();
  auto file = model_to_file(init_params<float>(cfg, 7), cfg);
  for (auto& t : file.tensors) {
    if (t.name == "cnn.1.bias") {
      t.shape = {t.shape[0] - 1};
      t.payload.resize(t.payload.size() - 4);
    }
  }
  try {
    model_from_file<float>(decode_weight_file(encode_weight_file(file)));
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("cnn.1.bias"), std::string::npos);
  }
}

TEST(WeightFile, ConfigMismatchRejected) {
  const auto cfg = small_config();
  const auto path = temp_file("stytr_io_cfg.styw");
  save_weights(path, init_params<float>(cfg, 8), cfg);
  auto other = cfg;
  other.heads = 2;
  EXPECT_THROW(load_weights<float>(path, other), LoadError);
  EXPECT_THROW(load_weights<float>(temp_file("stytr_io_missing.styw")), LoadError);
  fs::remove(path);
}

TEST(ExtractorFile, RoundTripGivesIdenticalFeatures) {
  const auto ext = builtin_extractor<float>(9, 3);
  const auto path = temp_file("stytr_io_ext.styw");
  save_extractor(path, ext);
  const auto back = load_extractor<float>(path);
  EXPECT_EQ(back.stage_count(), 3u);
  const auto img = image_to_tensor<float>(sample_content(32, 32));
  const auto a = ext.features(img), b = back.features(img);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(oracle::values(a[i]), oracle::values(b[i]));
  fs::remove(path);
}

TEST(ExtractorFile, MissingTensorNamed) {
  auto file = extractor_to_file(builtin_extractor<float>(10, 2));
  file.tensors.erase(file.tensors.begin() + 2);  // stage1.layer0.weight
  try {
    extractor_from_file<float>(file);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("stage1.layer0.weight"), std::string::npos);
  }
}

TEST(ExtractorFile, DeclaredStagesHonored) {
  Rng rng(11);
  WeightFile file;
  file.config = {{"kind", "extractor"}, {"stages", "3"},
                 {"stage.0", "conv3x3,relu"}, {"stage.1", "maxpool2"},
                 {"stage.2", "conv1x1,relu,maxpool2"}};
  file.tensors.push_back(to_raw("stage0.layer0.weight", random_uniform<float>({3, 3, 3, 4}, -1, 1, rng)));
  file.tensors.push_back(to_raw("stage0.layer0.bias", Tensor<float>::zeros({4})));
  file.tensors.push_back(to_raw("stage2.layer0.weight", random_uniform<float>({4, 5}, -1, 1, rng)));
  file.tensors.push_back(to_raw("stage2.layer0.bias", Tensor<float>::zeros({5})));
  const auto ext = extractor_from_file<float>(decode_weight_file(encode_weight_file(file)));
  EXPECT_EQ(ext.stage_count(), 3u);
  const auto f = ext.features(image_to_tensor<float>(sample_content(16, 16)));
  EXPECT_EQ(f[0].shape(), (Shape{16, 16, 4}));
  EXPECT_EQ(f[1].shape(), (Shape{8, 8, 4}));
  EXPECT_EQ(f[2].shape(), (Shape{4, 4, 5}));
  file.tensors[2] = to_raw("stage2.layer0.weight", random_uniform<float>({3, 5}, -1, 1, rng));
  EXPECT_THROW(extractor_from_file<float>(file), LoadError);
}

TEST(Config, ParsesAndRejects) {
  const auto kv = parse_key_values("# comment\nchannels = 64\n\nheads=4\n");
  EXPECT_EQ(kv.at("channels"), "64");
  EXPECT_THROW(parse_key_values("a=1\na=2\n"), ConfigError);
  EXPECT_THROW(parse_key_values("novalue\n"), ConfigError);
  EXPECT_THROW(TransformerConfig::from_key_values({{"colour", "red"}}), ConfigError);
  EXPECT_THROW(TransformerConfig::from_key_values({{"channels", "-3"}}), ConfigError);
  EXPECT_THROW(TransformerConfig::from_key_values({{"channels", "60"}, {"heads", "8"}}), ConfigError);
  EXPECT_THROW(TransformerConfig::from_key_values({{"patch", "16"}}), ConfigError);
  EXPECT_THROW(parse_pe_mode("rope"), ConfigError);
}

TEST(Config, KeyValueRoundTrip) {
  auto cfg = small_config();
  cfg.pe_style = PeMode::sinusoidal;
  cfg.separate_embeddings = true;
  EXPECT_EQ(TransformerConfig::from_key_values(cfg.to_key_values()), cfg);
}

TEST(RunConfig, DefaultsOverridesAndValidation) {
  auto rc = RunConfig::parse("channels = 64\nheads = 4\nlambda_s = 3\nsigma = variance\n");
  EXPECT_EQ(rc.model.ffn_hidden, 256u);
  EXPECT_EQ(rc.train.weights.style, 3.0);
  EXPECT_EQ(rc.train.weights.content, 10.0);
  EXPECT_EQ(rc.train.loss.sigma, SigmaMode::variance);
  EXPECT_EQ(rc.train.resolved_warmup(), 100u);
  rc.apply_overrides({"iters=20000", "lr = 0.001", "raw_norms=true"});
  EXPECT_EQ(rc.train.resolved_warmup(), 200u);
  EXPECT_EQ(rc.train.lr, 0.001);
  EXPECT_TRUE(rc.train.loss.raw_norms);
  EXPECT_THROW(rc.apply_overrides({"learning_rate=1"}), ConfigError);
  EXPECT_THROW(rc.apply_overrides({"iters"}), ConfigError);
  EXPECT_THROW(RunConfig::parse("lambda_c = -1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("sigma = mad\n"), ConfigError);
  EXPECT_THROW(RunConfig::load(temp_file("stytr_no_such.cfg")), ConfigError);
}

TEST(RunConfig, BundledToyConfigLoads) {
  const auto rc = RunConfig::load(fs::path(STYTR_SOURCE_DIR) / "configs" / "toy.cfg");
  EXPECT_EQ(rc.model, TransformerConfig::toy());
  EXPECT_EQ(rc.train.crop, 32u);
  const auto full = RunConfig::load(fs::path(STYTR_SOURCE_DIR) / "configs" / "default.cfg");
  EXPECT_EQ(full.model, TransformerConfig{});
}
