#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace mbu;
using namespace mbu::oracle;

namespace {

DenseTensor filled(int n, int h, int w, int c, int v) {
  DenseTensor t(n, h, w, c);
  std::fill(t.v.begin(), t.v.end(), v);
  return t;
}

}  // namespace

TEST(Oracle, ZeroWeightsGiveZeroAccumulators) {
  const auto x = filled(1, 4, 4, 3, -1);
  const std::vector<std::int8_t> w(2 * 3 * 9, 0);
  for (auto v : ref_conv(x, w, 2, 3, 3, 1, 1, OutOfBounds::Zero).v) EXPECT_EQ(v, 0);
  for (auto v : ref_tconv(x, std::vector<std::int8_t>(2 * 3 * 4, 0), 2, 2, 2).v) EXPECT_EQ(v, 0);
}

TEST(Oracle, SelectorPassthrough) {
  std::mt19937_64 rng(1);
  DenseTensor x(1, 3, 2, 4);
  const auto bits = test::random_bipolar(x.v.size(), rng);
  std::copy(bits.begin(), bits.end(), x.v.begin());
  std::vector<std::int8_t> w(16, 0);
  for (int o = 0; o < 4; ++o) w[static_cast<std::size_t>(o * 4 + o)] = 1;
  EXPECT_EQ(ref_conv(x, w, 4, 1, 1, 1, 0, OutOfBounds::Zero), x);
}

TEST(Oracle, OutOfBoundsConventions) {
  // all-ones input and weights, 3x3 pad 1: corner sees 4 in-bounds taps
  const auto x = filled(1, 3, 3, 1, 1);
  const std::vector<std::int8_t> w(9, 1);
  const auto zero = ref_conv(x, w, 1, 3, 3, 1, 1, OutOfBounds::Zero);
  EXPECT_EQ(zero.at(0, 0, 0, 0), 4);
  EXPECT_EQ(zero.at(0, 0, 1, 0), 6);
  EXPECT_EQ(zero.at(0, 1, 1, 0), 9);
  const auto minus = ref_conv(x, w, 1, 3, 3, 1, 1, OutOfBounds::MinusOne);
  EXPECT_EQ(minus.at(0, 0, 0, 0), 4 - 5);
  EXPECT_EQ(minus.at(0, 0, 1, 0), 6 - 3);
  EXPECT_EQ(minus.at(0, 1, 1, 0), 9);
}

TEST(Oracle, StridedConvExtent) {
  const auto y = ref_conv(filled(1, 7, 6, 2, 1), std::vector<std::int8_t>(3 * 2 * 4, -1), 3, 2, 2, 2, 0, OutOfBounds::Zero);
  EXPECT_EQ(y.h, 3);
  EXPECT_EQ(y.w, 3);
  EXPECT_EQ(y.at(0, 2, 2, 1), -8);
}

TEST(Oracle, TransposedScatter) {
  DenseTensor x(1, 1, 2, 1);
  x.v = {1, -1};
  const std::vector<std::int8_t> w{1, -1, 0, 1};  // [o][ci][ky][kx]
  const auto y = ref_tconv(x, w, 1, 2, 2);
  ASSERT_EQ(y.h, 2);
  ASSERT_EQ(y.w, 4);
  EXPECT_EQ(y.v, (std::vector<std::int32_t>{1, -1, -1, 1, 0, 1, 0, -1}));
}

TEST(Oracle, PoolThresholdConcat) {
  DenseTensor x(1, 2, 2, 2);
  x.v = {-1, -1, -1, 1, 1, -1, -1, -1};
  EXPECT_EQ(ref_pool(x).v, (std::vector<std::int32_t>{1, 1}));

  DenseTensor acc(1, 1, 1, 3);
  acc.v = {4, 4, 4};
  FusedThreshold t;
  t.channels.resize(3);
  t.channels[0].t = 4;
  t.channels[1].t = 4;
  t.channels[1].dir = ThresholdDir::LT;
  t.channels[2].constant = false;
  EXPECT_EQ(ref_threshold(acc, t).v, (std::vector<std::int32_t>{1, -1, -1}));

  DenseTensor a = filled(1, 1, 1, 2, 1), b = filled(1, 1, 1, 1, -1);
  EXPECT_EQ(ref_concat(a, b).v, (std::vector<std::int32_t>{1, 1, -1}));
}

TEST(Oracle, AlphabetErrors) {
  auto x = filled(1, 2, 2, 1, 1);
  x.v[3] = 0;
  EXPECT_THROW(ref_conv(x, std::vector<std::int8_t>(1, 1), 1, 1, 1, 1, 0, OutOfBounds::Zero), Error);
  EXPECT_THROW(ref_pool(x), Error);
  const auto ok = filled(1, 2, 2, 1, 1);
  try {
    ref_conv(ok, std::vector<std::int8_t>{2}, 1, 1, 1, 1, 0, OutOfBounds::Zero);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
  EXPECT_THROW(ref_tconv(ok, std::vector<std::int8_t>{1, 1}, 1, 2, 2), Error);
}

TEST(Oracle, FloatConvAndBnSign) {
  FloatTensor x(1, 2, 2, 1);
  x.data = {0.5, 1.0, -1.0, 2.0};
  const auto y = ref_float_conv(x, std::vector<double>{2.0}, std::vector<double>{-1.0}, 1, 1, 0);
  EXPECT_EQ(y.data, (std::vector<double>{0.0, 1.0, -3.0, 3.0}));
  BatchNorm bn;
  bn.gamma = {-1.0};
  bn.beta = {0.0};
  bn.mean = {0.0};
  bn.var = {1.0};
  EXPECT_EQ(ref_bn_sign(y, bn).v, (std::vector<std::int32_t>{1, -1, 1, -1}));
}
