#include <gtest/gtest.h>

#include <filesystem>

#include "stytr/image.hpp"
#include "stytr/patching.hpp"
#include "stytr/random.hpp"
#include "support/oracles.hpp"

using namespace stytr;
using T64 = Tensor<double>;

namespace {

std::vector<std::uint8_t> ppm_bytes(const std::string& header, std::vector<std::uint8_t> raster) {
  std::vector<std::uint8_t> b(header.begin(), header.end());
  b.insert(b.end(), raster.begin(), raster.end());
  return b;
}

ImageBuffer random_u8_image(std::size_t h, std::size_t w, Rng& rng) {
  ImageBuffer img{h, w, std::vector<float>(h * w * 3)};
  for (auto& v : img.values) v = static_cast<float>(rng.below(256)) / 255.0f;
  return img;
}

}  // namespace

TEST(Ppm, SingleRedPixel) {
  const auto img = decode_ppm(ppm_bytes("P6\n1 1\n255\n", {255, 0, 0}));
  EXPECT_EQ(img.height, 1u);
  EXPECT_EQ(img.width, 1u);
  EXPECT_EQ(img.values, (std::vector<float>{1, 0, 0}));
}

TEST(Ppm, WriteOfReadIsByteIdentical) {
  Rng rng(1);
  std::vector<std::uint8_t> raster(5 * 3 * 3);
  for (auto& b : raster) b = static_cast<std::uint8_t>(rng.below(256));
  const auto bytes = ppm_bytes("P6\n3 5\n255\n", raster);
  EXPECT_EQ(encode_ppm(decode_ppm(bytes)), bytes);
}

TEST(Ppm, HeaderCommentsAndWhitespaceAccepted) {
  const auto img = decode_ppm(ppm_bytes("P6 # c\n2  1\n# more\n255\n", {0, 51, 102, 153, 204, 255}));
  EXPECT_EQ(img.width, 2u);
  EXPECT_FLOAT_EQ(img.values[5], 1.0f);
}

TEST(Ppm, ReadOfWriteReproducesPixels) {
  Rng rng(2);
  const auto img = random_u8_image(7, 9, rng);
  const auto path = std::filesystem::temp_directory_path() / "stytr_test_rt.ppm";
  write_ppm(img, path);
  EXPECT_EQ(read_ppm(path), img);
  std::filesystem::remove(path);
}

TEST(Ppm, WriteRoundsAndClamps) {
  const ImageBuffer img{1, 1, {-0.5f, 0.5f, 2.0f}};
  const auto bytes = encode_ppm(img);
  EXPECT_EQ(bytes[bytes.size() - 3], 0);
  EXPECT_EQ(bytes[bytes.size() - 2], 128);
  EXPECT_EQ(bytes[bytes.size() - 1], 255);
}

TEST(Ppm, MalformedInputsReportOffsets) {
  try {
    decode_ppm(ppm_bytes("P3\n1 1\n255\n", {0, 0, 0}));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  EXPECT_THROW(decode_ppm(ppm_bytes("P6\n1 1\n65535\n", {0, 0, 0})), ParseError);
  try {
    decode_ppm(ppm_bytes("P6\n2 2\n255\n", {1, 2, 3}));
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
}

TEST(Embed, SinglePatch) {
  Rng rng(3);
  const auto w = random_uniform<double>({192, 16}, -1, 1, rng);
  const auto seq = embed(random_uniform<double>({8, 8, 3}, 0, 1, rng), w, T64::zeros({16}), 8);
  EXPECT_EQ(seq.length(), 1u);
  EXPECT_EQ(seq.tokens.shape(), (Shape{1, 16}));
}

TEST(Embed, FullResolutionTokenCount) {
  const auto seq = embed(T64::zeros({256, 256, 3}), T64::zeros({192, 8}), T64::zeros({8}), 8);
  EXPECT_EQ(seq.length(), 1024u);
  EXPECT_EQ(seq.grid_h, 32u);
  EXPECT_EQ(unembed_shape(seq), (std::pair<std::size_t, std::size_t>{256, 256}));
}

TEST(Embed, ZeroWeightGivesBias) {
  Rng rng(4);
  const T64 b({4}, {1, -2, 3, 0.5});
  const auto seq = embed(random_uniform<double>({16, 24, 3}, 0, 1, rng), T64::zeros({192, 4}), b, 8);
  for (std::size_t t = 0; t < seq.length(); ++t)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(seq.tokens[t * 4 + k], b[k]);
}

TEST(Embed, NonDivisibleImageNamesDimensions) {
  try {
    embed(T64::zeros({20, 16, 3}), T64::zeros({192, 4}), T64::zeros({4}), 8);
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("20"), std::string::npos);
    EXPECT_NE(msg.find("16"), std::string::npos);
    EXPECT_NE(msg.find("8"), std::string::npos);
  }
}

TEST(Embed, IsLinearWithoutBias) {
  Rng rng(5);
  const auto w = random_uniform<double>({192, 8}, -1, 1, rng);
  const auto zero = T64::zeros({8});
  const auto i1 = random_uniform<double>({16, 16, 3}, 0, 1, rng);
  const auto i2 = random_uniform<double>({16, 16, 3}, 0, 1, rng);
  const double a = 0.3, b = -1.7;
  const auto combo = add(scale(i1, a), scale(i2, b));
  const auto lhs = embed(combo, w, zero, 8).tokens;
  const auto rhs = add(scale(embed(i1, w, zero, 8).tokens, a), scale(embed(i2, w, zero, 8).tokens, b));
  EXPECT_LT(oracle::max_abs_diff(oracle::values(lhs), oracle::values(rhs)), 1e-5);
}

TEST(Embed, TokenDependsOnlyOnItsPatch) {
  Rng rng(6);
  const auto w = random_uniform<float>({192, 8}, -1, 1, rng);
  const auto b = Tensor<float>::zeros({8});
  auto img = random_uniform<float>({16, 24, 3}, 0, 1, rng);
  const auto before = embed(img, w, b, 8).tokens;
  // Perturb every pixel outside patch 4 (row 1, column 1).
  auto data = img.mutable_data();
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 24; ++c)
      if (r / 8 != 1 || c / 8 != 1)
        for (std::size_t k = 0; k < 3; ++k) data[(r * 24 + c) * 3 + k] += 0.25f;
  const auto after = embed(img, w, b, 8).tokens;
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(after[4 * 8 + k], before[4 * 8 + k]);
  EXPECT_NE(after[0], before[0]);
}

TEST(UnembedShape, Examples) {
  auto shape_of = [](std::size_t gh, std::size_t gw) {
    const PatchSequence<double> s{T64::zeros({gh * gw, 4}), gh, gw, 8};
    return unembed_shape(s);
  };
  EXPECT_EQ(shape_of(4, 4), (std::pair<std::size_t, std::size_t>{32, 32}));
  EXPECT_EQ(shape_of(32, 32), (std::pair<std::size_t, std::size_t>{256, 256}));
  EXPECT_EQ(shape_of(3, 5), (std::pair<std::size_t, std::size_t>{24, 40}));
}

TEST(CenterCrop, TrimsToMultiple) {
  Rng rng(7);
  const auto img = random_u8_image(21, 35, rng);
  const auto c = center_crop_to_multiple(img, 8);
  EXPECT_EQ(c.height, 16u);
  EXPECT_EQ(c.width, 32u);
  EXPECT_EQ(c.at(0, 0, 1), img.at(2, 1, 1));
}
