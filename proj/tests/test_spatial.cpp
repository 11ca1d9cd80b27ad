#include <gtest/gtest.h>

#include "stytr/random.hpp"
#include "stytr/spatial.hpp"
#include "support/oracles.hpp"

using namespace stytr;
using T64 = Tensor<double>;

TEST(Conv3x3, MatchesLoopOracle) {
  Rng rng(1);
  const auto x = random_uniform<double>({5, 4, 3}, -1, 1, rng);
  const auto w = random_uniform<double>({3, 3, 3, 2}, -1, 1, rng);
  const auto b = random_uniform<double>({2}, -1, 1, rng);
  const auto y = conv2d_3x3_pad1(x, w, b);
  EXPECT_EQ(y.shape(), (Shape{5, 4, 2}));
  const auto ref = oracle::conv3x3(oracle::values(x), 5, 4, 3, oracle::values(w), oracle::values(b), 2);
  EXPECT_LT(oracle::max_abs_diff(oracle::values(y), ref), 1e-12);
}

TEST(Conv3x3, RejectsWrongKernel) {
  EXPECT_THROW(conv2d_3x3_pad1(T64::zeros({4, 4, 3}), T64::zeros({3, 3, 2, 2}), T64::zeros({2})),
               DimensionError);
}

TEST(Conv1x1, IsPerPixelMatmul) {
  const T64 x({1, 2, 2}, {1, 2, 3, 4});
  const T64 w({2, 1}, {10, 1});
  const auto y = conv2d_1x1(x, w, T64({1}, {0.5}));
  EXPECT_EQ(oracle::values(y), (std::vector<double>{12.5, 34.5}));
}

TEST(AvgPoolAdaptive, ConstantFieldStaysConstant) {
  const auto y = avgpool_adaptive(T64::full({7, 11, 2}, 3.25), 3, 4);
  for (double v : y.data()) EXPECT_EQ(v, 3.25);
}

TEST(AvgPoolAdaptive, FloorCellBoundaries) {
  // 5 rows onto 2 cells: rows [0,2) and [2,5).
  std::vector<double> v(5);
  for (std::size_t i = 0; i < 5; ++i) v[i] = static_cast<double>(i);
  const auto y = avgpool_adaptive(T64({5, 1, 1}, v), 2, 1);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 3.0);
}

TEST(AvgPoolAdaptive, InputSmallerThanGridThrows) {
  EXPECT_THROW(avgpool_adaptive(T64::zeros({3, 8, 1}), 4, 4), DimensionError);
}

TEST(MaxPool, TakesBlockMaximum) {
  const T64 x({2, 2, 1}, {1, 5, 3, 2});
  EXPECT_EQ(maxpool_2x2(x).item(), 5.0);
}

TEST(Upsample, NearestDuplicatesPixels) {
  const auto y = upsample_nearest_2x(T64({1, 2, 1}, {1, 2}));
  EXPECT_EQ(y.shape(), (Shape{2, 4, 1}));
  EXPECT_EQ(oracle::values(y), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2}));
}

TEST(ResizeBilinear, SameSizeIsIdentity) {
  Rng rng(2);
  const auto x = random_uniform<double>({4, 3, 2}, -1, 1, rng);
  EXPECT_EQ(oracle::values(resize_bilinear(x, 4, 3)), oracle::values(x));
}

TEST(ResizeBilinear, MatchesAlignCornersOracle) {
  Rng rng(3);
  const std::size_t n = 3, c = 2;
  const auto g = random_uniform<double>({n, n, c}, -1, 1, rng);
  const auto y = resize_bilinear(g, 7, 5);
  for (std::size_t r = 0; r < 7; ++r)
    for (std::size_t q = 0; q < 5; ++q) {
      const auto ref = oracle::bilinear(oracle::values(g), n, c, r / 6.0, q / 4.0);
      for (std::size_t k = 0; k < c; ++k) EXPECT_NEAR(y[(r * 5 + q) * c + k], ref[k], 1e-12);
    }
}

TEST(Patchify, RowMajorWithinPatchChannelFastest) {
  std::vector<double> v(4 * 4 * 3);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto p = patchify(T64({4, 4, 3}, v), 2);
  EXPECT_EQ(p.shape(), (Shape{4, 12}));
  // Token 1 is the top-right patch: pixels (0,2),(0,3),(1,2),(1,3).
  const std::vector<double> expect = {6, 7, 8, 9, 10, 11, 18, 19, 20, 21, 22, 23};
  for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(p[12 + k], expect[k]);
}
