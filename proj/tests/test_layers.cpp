#include <gtest/gtest.h>

#include "highdan/nn/adam.hpp"
#include "highdan/nn/layers.hpp"
#include "support.hpp"

using namespace highdan;
using namespace highdan::nn;
using highdan::testing::gradient_error;
using highdan::testing::random_tensor;
using highdan::testing::weighted_sum;

namespace {

constexpr double kStep = 1e-6;
constexpr double kTol = 1e-6;

struct ConvCase {
  Index in, out, kernel, stride, pad, size;
  bool bias;
};

class ConvGradient : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvGradient, MatchesFiniteDifferences) {
  const auto cc = GetParam();
  ParameterStore<double> store;
  Conv2d<double> conv(store, "conv", {cc.in, cc.out, cc.kernel, cc.stride, cc.pad, cc.bias});
  Rng rng = make_stream(11, "test");
  store.initialize(rng);
  if (cc.bias) conv.bias()->value = random_tensor(conv.bias()->value.shape(), rng);
  Tensor<double> x = random_tensor({2, cc.in, cc.size, cc.size}, rng);
  const Tensor<double> probe = random_tensor(conv.forward(x).shape(), rng);
  auto loss = [&] { return weighted_sum(conv.forward(x), probe); };

  store.zero_grad();
  conv.forward(x);
  const Tensor<double> dx = conv.backward(probe);
  EXPECT_LT(gradient_error(x, dx, loss, kStep), kTol);
  EXPECT_LT(gradient_error(conv.weight(), loss, kStep), kTol);
  if (cc.bias) EXPECT_LT(gradient_error(*conv.bias(), loss, kStep), kTol);
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvGradient,
                         ::testing::Values(ConvCase{3, 4, 3, 1, 1, 7, false}, ConvCase{3, 5, 3, 2, 1, 8, true},
                                           ConvCase{4, 2, 1, 1, 0, 5, true}, ConvCase{2, 3, 4, 2, 1, 6, false},
                                           ConvCase{2, 2, 3, 1, 0, 6, false}, ConvCase{1, 1, 3, 2, 1, 5, true}));

class ConvTransposeGradient : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvTransposeGradient, MatchesFiniteDifferences) {
  const auto cc = GetParam();
  ParameterStore<double> store;
  ConvTranspose2d<double> conv(store, "up", {cc.in, cc.out, cc.kernel, cc.stride, cc.pad, cc.bias});
  Rng rng = make_stream(12, "test");
  store.initialize(rng);
  Tensor<double> x = random_tensor({2, cc.in, cc.size, cc.size}, rng);
  const Tensor<double> probe = random_tensor(conv.forward(x).shape(), rng);
  auto loss = [&] { return weighted_sum(conv.forward(x), probe); };

  store.zero_grad();
  conv.forward(x);
  const Tensor<double> dx = conv.backward(probe);
  EXPECT_LT(gradient_error(x, dx, loss, kStep), kTol);
  EXPECT_LT(gradient_error(store.at("up.weight"), loss, kStep), kTol);
  if (cc.bias) EXPECT_LT(gradient_error(store.at("up.bias"), loss, kStep), kTol);
}

INSTANTIATE_TEST_SUITE_P(Geometries, ConvTransposeGradient,
                         ::testing::Values(ConvCase{3, 2, 4, 2, 1, 4, true}, ConvCase{2, 3, 3, 2, 1, 5, false},
                                           ConvCase{2, 2, 3, 1, 1, 4, true}, ConvCase{2, 4, 2, 2, 0, 3, false}));

TEST(ConvTranspose, DoublesExtentWithKernel4Stride2Pad1) {
  ParameterStore<double> store;
  ConvTranspose2d<double> up(store, "up", {3, 2, 4, 2, 1, false});
  const auto y = up.forward(Tensor<double>(1, 3, 8, 8));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 16, 16}));
}

TEST(Conv, DeltaKernelShiftsAlongTheRightAxis) {
  // Single tap at (ky=1, kx=2): y(r, c) = x(r, c + 1).
  ParameterStore<double> store;
  Conv2d<double> conv(store, "conv", {1, 1, 3, 1, 1, false});
  conv.weight().value.set_zero();
  conv.weight().value(0, 0, 1, 2) = 1;
  Tensor<double> x(1, 1, 4, 5);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<double>(i + 1);
  const auto y = conv.forward(x);
  for (Index r = 0; r < 4; ++r) {
    for (Index c = 0; c < 5; ++c) EXPECT_EQ(y(0, 0, r, c), c + 1 < 5 ? x(0, 0, r, c + 1) : 0.0);
  }
}

TEST(Im2col, Col2imIsItsAdjoint) {
  Rng rng = make_stream(3, "test");
  for (const auto& [k, s, p] : {std::tuple<Index, Index, Index>{3, 1, 1}, {3, 2, 1}, {4, 2, 1}, {1, 2, 0}}) {
    WindowGeometry g{2, 7, 6, k, s, p, WindowGeometry::output_extent(7, k, s, p),
                     WindowGeometry::output_extent(6, k, s, p)};
    const Tensor<double> x = random_tensor({1, 2, 7, 6}, rng);
    Tensor<double>::RowMatrix cols;
    im2col(x.data(), g, cols);
    Tensor<double>::RowMatrix c = Tensor<double>::RowMatrix::Random(cols.rows(), cols.cols());
    Tensor<double> back(1, 2, 7, 6);
    col2im(c, g, back.data());
    const double lhs = (cols.array() * c.array()).sum();
    const double rhs = (x.array() * back.array()).sum();
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

class BatchNormGradient : public ::testing::TestWithParam<Mode> {};

TEST_P(BatchNormGradient, MatchesFiniteDifferences) {
  ParameterStore<double> store;
  BatchNorm2d<double> bn(store, "bn", 3);
  Rng rng = make_stream(4, "test");
  bn.gamma().value = random_tensor(bn.gamma().value.shape(), rng, 0.5, 1.5);
  bn.beta().value = random_tensor(bn.beta().value.shape(), rng);
  store.at("bn.running_mean").value = random_tensor({1, 3, 1, 1}, rng);
  store.at("bn.running_var").value = random_tensor({1, 3, 1, 1}, rng, 0.5, 2.0);
  const Mode mode = GetParam();
  Tensor<double> x = random_tensor({3, 3, 4, 5}, rng, -2, 3);
  const Tensor<double> probe = random_tensor(x.shape(), rng);
  // Training-mode outputs do not depend on running statistics, so the
  // repeated forwards inside the difference quotient are consistent.
  auto loss = [&] { return weighted_sum(bn.forward(x, mode), probe); };
  store.zero_grad();
  bn.forward(x, mode);
  const Tensor<double> dx = bn.backward(probe);
  EXPECT_LT(gradient_error(x, dx, loss, kStep, 60), kTol);
  EXPECT_LT(gradient_error(bn.gamma(), loss, kStep), kTol);
  EXPECT_LT(gradient_error(bn.beta(), loss, kStep), kTol);
}

INSTANTIATE_TEST_SUITE_P(Modes, BatchNormGradient, ::testing::Values(Mode::Train, Mode::Eval));

TEST(BatchNorm, RunningStatisticsUseMomentumAndUnbiasedVariance) {
  ParameterStore<double> store;
  BatchNorm2d<double> bn(store, "bn", 1);
  Tensor<double> x(1, 1, 1, 4);
  x.array() << 1, 2, 3, 6;  // mean 3, unbiased variance 14/3
  bn.forward(x, Mode::Train);
  EXPECT_NEAR(store.at("bn.running_mean").value.data()[0], 0.3, 1e-12);
  EXPECT_NEAR(store.at("bn.running_var").value.data()[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-12);
}

TEST(BatchNorm, TrainOutputIsStandardizedPerChannel) {
  ParameterStore<double> store;
  BatchNorm2d<double> bn(store, "bn", 2);
  Rng rng = make_stream(5, "test");
  const auto y = bn.forward(random_tensor({4, 2, 3, 3}, rng, -5, 9), Mode::Train);
  for (Index c = 0; c < 2; ++c) {
    double sum = 0, sq = 0;
    for (Index n = 0; n < 4; ++n) {
      for (Index i = 0; i < 9; ++i) {
        const double v = y.plane(n, c)[i];
        sum += v;
        sq += v * v;
      }
    }
    EXPECT_NEAR(sum / 36, 0.0, 1e-12);
    EXPECT_NEAR(sq / 36, 1.0, 1e-4);  // ε = 1e-5 shrinks it slightly
  }
}

TEST(Relu, LeakyGradientMatchesFiniteDifferences) {
  Rng rng = make_stream(6, "test");
  for (double slope : {0.0, 0.2}) {
    Relu<double> relu(slope);
    Tensor<double> x = random_tensor({2, 3, 4, 4}, rng);
    const Tensor<double> probe = random_tensor(x.shape(), rng);
    relu.forward(x);
    const Tensor<double> dx = relu.backward(probe);
    EXPECT_LT(gradient_error(x, dx, [&] { return weighted_sum(relu.forward(x), probe); }, kStep, 96), kTol);
  }
}

TEST(Bilinear, GradientMatchesFiniteDifferences) {
  Rng rng = make_stream(7, "test");
  for (const auto& [h, w, oh, ow] : {std::tuple<Index, Index, Index, Index>{4, 4, 8, 8}, {3, 5, 12, 10}, {8, 8, 4, 4}}) {
    BilinearResize<double> up;
    Tensor<double> x = random_tensor({2, 2, h, w}, rng);
    const Tensor<double> probe = random_tensor({2, 2, oh, ow}, rng);
    up.forward(x, oh, ow);
    const Tensor<double> dx = up.backward(probe);
    EXPECT_LT(gradient_error(x, dx, [&] { return weighted_sum(up.forward(x, oh, ow), probe); }, kStep, 96), kTol);
  }
}

TEST(Bilinear, HalfPixelCentersOnARamp) {
  // Upsampling a ramp 0, 1, 2, 3 by 2 with half-pixel centers.
  BilinearResize<double> up;
  Tensor<double> x(1, 1, 1, 4);
  x.array() << 0, 1, 2, 3;
  const auto y = up.forward(x, 1, 8);
  const double expected[8] = {0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3};
  for (Index i = 0; i < 8; ++i) EXPECT_NEAR(y.data()[i], expected[i], 1e-12);
}

TEST(Bilinear, ConstantMapStaysConstant) {
  BilinearResize<double> up;
  const auto y = up.forward(Tensor<double>::constant({1, 2, 3, 3}, 0.7), 12, 12);
  EXPECT_NEAR((y.array() - 0.7).abs().maxCoeff(), 0.0, 1e-12);
}

TEST(ConvBnAct, GradientMatchesFiniteDifferences) {
  ParameterStore<double> store;
  ConvBnAct<double> unit(store, "unit", {2, 3, 3, 2, 1, false}, true);
  Rng rng = make_stream(8, "test");
  store.initialize(rng);
  Tensor<double> x = random_tensor({2, 2, 6, 6}, rng);
  const Tensor<double> probe = random_tensor(unit.forward(x, Mode::Train).shape(), rng);
  auto loss = [&] { return weighted_sum(unit.forward(x, Mode::Train), probe); };
  store.zero_grad();
  unit.forward(x, Mode::Train);
  const Tensor<double> dx = unit.backward(probe);
  EXPECT_LT(gradient_error(x, dx, loss, kStep), kTol);
  EXPECT_LT(gradient_error(unit.conv().weight(), loss, kStep), kTol);
}

TEST(ParameterStore, SharingByNameAndShapeConflict) {
  ParameterStore<double> store;
  auto& a = store.get_or_create("x.weight", {1, 2, 3, 3}, true, Init::KaimingFanIn, 18);
  auto& b = store.get_or_create("x.weight", {1, 2, 3, 3}, true, Init::KaimingFanIn, 18);
  EXPECT_EQ(&a, &b);
  EXPECT_THROW(store.get_or_create("x.weight", {1, 2, 1, 1}, true, Init::Zeros, 1), ConfigError);
}

TEST(ParameterStore, CountsOnlyLearnableEntries) {
  ParameterStore<float> store;
  EXPECT_EQ(store.count(), 0);
  Conv2d<float> conv(store, "c", {4, 8, 3, 1, 1, true});
  EXPECT_EQ(store.count(), 296);
  BatchNorm2d<float> bn(store, "bn", 8);
  EXPECT_EQ(store.count(), 296 + 16);  // running statistics are buffers
}

TEST(ParameterStore, InitializationIsSeedDeterministic) {
  auto build = [](std::uint64_t seed) {
    auto store = std::make_unique<ParameterStore<float>>();
    Conv2d<float> a(*store, "a", {3, 4, 3, 1, 1, true});
    Conv2d<float> b(*store, "b", {4, 4, 1, 1, 0, false});
    Rng rng = make_stream(seed, "init");
    store->initialize(rng);
    return store->checksum();
  };
  EXPECT_EQ(build(1), build(1));
  EXPECT_NE(build(1), build(2));
}

TEST(Adam, FirstStepMovesEachWeightByLearningRate) {
  // With bias correction the first update is lr·g/(|g| + ε) ≈ lr·sign(g).
  ParameterStore<double> store;
  auto& p = store.get_or_create("enc.w", {1, 1, 1, 3}, true, Init::Zeros, 1);
  auto& q = store.get_or_create("other.w", {1, 1, 1, 1}, true, Init::Zeros, 1);
  p.grad.array() << 2.0, -0.5, 0.0;
  q.grad.array() << 1.0;
  Adam<double> opt({"enc."}, 0.01);
  opt.step(store);
  EXPECT_NEAR(p.value.data()[0], -0.01, 1e-8);
  EXPECT_NEAR(p.value.data()[1], 0.01, 1e-8);
  EXPECT_EQ(p.value.data()[2], 0.0);
  EXPECT_EQ(q.value.data()[0], 0.0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, MatchesReferenceRecurrence) {
  ParameterStore<double> store;
  auto& p = store.get_or_create("w", {1, 1, 1, 1}, true, Init::Zeros, 1);
  Adam<double> opt({"w"}, 0.1, 0.9, 0.999, 1e-8);
  double x = 0.5, m = 0, v = 0;
  p.value.data()[0] = x;
  for (int t = 1; t <= 5; ++t) {
    const double g = 2 * x - 1;  // d/dx (x² − x)
    p.grad.data()[0] = g;
    opt.step(store);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.value.data()[0], x, 1e-12);
  }
}

}  // namespace
