#include <algorithm>
#include <random>

#include "bgattack/tensor.hpp"
#include "support.hpp"

using namespace bgattack;
using bgattack::testing::random_tensor;

TEST(Tensor, RejectsEmptyOrZeroExtents) {
  EXPECT_THROW(Tensor(Shape{}), DimensionError);
  EXPECT_THROW(Tensor(Shape{3, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, RowMajorChannelLastOffsets) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.offset(1, 2, 3), 1u * 12 + 2 * 4 + 3);
  t(1, 2, 3) = 7.0;
  EXPECT_EQ(t[23], 7.0);
}

TEST(Hadamard, Examples) {
  EXPECT_EQ(hadamard(Tensor::vector({1, 2, 3}), Tensor::vector({4, 5, 6})), Tensor::vector({4, 10, 18}));
  const auto x = random_tensor({4, 5, 3}, 1);
  EXPECT_EQ(hadamard(x, Tensor::ones(x.dims())), x);
  EXPECT_EQ(hadamard(x, Tensor::zeros(x.dims())), Tensor::zeros(x.dims()));
}

TEST(Hadamard, ShapeMismatchNamesBothShapes) {
  try {
    hadamard(Tensor({2, 3}), Tensor({3, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3x2]"), std::string::npos) << msg;
  }
}

TEST(Lincomb, Examples) {
  const auto x = random_tensor({6}, 2);
  const auto y = random_tensor({6}, 3);
  EXPECT_EQ(lincomb(1, x, 0, y), x);
  EXPECT_EQ(lincomb(1, x, -1, x), Tensor::zeros({6}));
  EXPECT_EQ(lincomb(2, Tensor::vector({1, 1}), 3, Tensor::vector({2, 0})), Tensor::vector({8, 2}));
  EXPECT_THROW(lincomb(1, x, 1, Tensor({5})), DimensionError);
}

TEST(Lincomb, Bilinear) {
  const auto a = random_tensor({3, 3, 2}, 4), b = random_tensor({3, 3, 2}, 5), c = random_tensor({3, 3, 2}, 6);
  const auto lhs = lincomb(2.0, lincomb(1.0, a, 1.0, c), -0.5, b);
  const auto rhs = lincomb(1.0, lincomb(2.0, a, -0.5, b), 2.0, c);
  bgattack::testing::expect_near(lhs, rhs, 1e-15);
}

TEST(Clamp01, ExamplesAndIdempotence) {
  EXPECT_EQ(clamp01(Tensor::vector({-0.5, 0.3, 1.7})), Tensor::vector({0, 0.3, 1}));
  const auto x = random_tensor({50}, 7, -2.0, 3.0);
  EXPECT_EQ(clamp01(clamp01(x)), clamp01(x));
  const auto in = random_tensor({50}, 8);
  EXPECT_EQ(clamp01(in), in);
  const auto clamped = clamp01(x);
  for (double v : clamped.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(ReduceSum, Examples) {
  EXPECT_EQ(reduce_sum(Tensor::vector({1, 2, 3})), 6.0);
  EXPECT_EQ(reduce_sum(Tensor::zeros({17})), 0.0);
  EXPECT_EQ(reduce_sum(Tensor::ones({1000000})), 1e6);
}

TEST(ReduceSum, PermutationStable) {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({4096}, 100 + trial, -1.0, 1.0);
    const double base = reduce_sum(x);
    std::vector<double> v(x.values().begin(), x.values().end());
    std::shuffle(v.begin(), v.end(), gen);
    const double shuffled = reduce_sum(std::span<const double>(v));
    EXPECT_LE(std::abs(shuffled - base), 1e-12 * std::max(1.0, std::abs(base)));
  }
}

TEST(Partition, MaskSplitsTensor) {
  const auto x = random_tensor({8, 8, 1}, 12);
  auto m = random_tensor({8, 8, 1}, 13);
  for (auto& v : m.values()) v = v < 0.5 ? 0.0 : 1.0;
  const auto sum = lincomb(1, hadamard(x, m), 1, hadamard(x, lincomb(1, Tensor::ones(m.dims()), -1, m)));
  EXPECT_EQ(sum, x);
}

TEST(BroadcastChannels, ReplicatesMask) {
  Tensor m({2, 2, 1}, std::vector<double>{1, 0, 0, 1});
  const auto b = broadcast_channels(m, 3);
  EXPECT_EQ(b.dims(), (Shape{2, 2, 3}));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(b(0, 0, c), 1.0);
    EXPECT_EQ(b(0, 1, c), 0.0);
  }
}
