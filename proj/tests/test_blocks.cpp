#include <gtest/gtest.h>

#include <cmath>

#include "ganforge/architectures.hpp"
#include "gradcheck.hpp"

using namespace ganforge;
using ganforge::testing::check_gradients;

namespace {

Tensor<double> random(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return rng.uniform_tensor<double>(std::move(s), lo, hi);
}

Var<double> project(const Var<double>& y, std::uint64_t seed = 77) {
  return sum(mul(y, constant(random(y.shape(), seed))));
}

// Max relative finite-difference error over the input and every trainable
// parameter of one layer.
double layer_gradient_error(const LayerSpec& layer, const Shape& input_shape, std::uint64_t seed) {
  ParameterStore<double> store;
  Rng rng(seed);
  declare_parameters(layer, store, InitScheme::HeNormal, rng);
  std::vector<std::string> names;
  detail::collect_trainable(layer, names);
  std::vector<Tensor<double>> inputs{random(input_shape, seed + 1)};
  for (std::size_t i = 0; i < names.size(); ++i) {
    inputs.push_back(random(store.at(names[i]).shape(), seed + 2 + i, -0.8, 0.8));
  }
  auto f = [&](const std::vector<Var<double>>& v) {
    for (std::size_t i = 0; i < names.size(); ++i) store.bind(names[i], v[i + 1]);
    return project(forward(layer, store, v[0], ForwardContext<double>{}));
  };
  return check_gradients(f, inputs);
}

}  // namespace

TEST(MinibatchStdDev, IdenticalImagesGiveZeroChannel) {
  Tensor<double> one = random({1, 3, 4, 4}, 1);
  std::vector<double> data;
  for (int i = 0; i < 5; ++i) data.insert(data.end(), one.data().begin(), one.data().end());
  Var<double> y = minibatch_stddev(Var<double>(Tensor<double>({5, 3, 4, 4}, data)));
  ASSERT_EQ(y.shape(), (Shape{5, 4, 4, 4}));
  for (std::int64_t n = 0; n < 5; ++n)
    for (std::int64_t h = 0; h < 4; ++h)
      for (std::int64_t w = 0; w < 4; ++w) EXPECT_NEAR(y.value().at(n, 3, h, w), 0.0, 1e-12);
}

TEST(MinibatchStdDev, SymmetricTwoPointBatchGivesUnitChannel) {
  Tensor<double> x({2, 2, 3, 3});
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = i < x.size() / 2 ? 1.0 : -1.0;
  Var<double> y = minibatch_stddev(Var<double>(x));
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t h = 0; h < 3; ++h)
      for (std::int64_t w = 0; w < 3; ++w) EXPECT_DOUBLE_EQ(y.value().at(n, 2, h, w), 1.0);
}

TEST(MinibatchStdDev, MatchesLoopOracle) {
  Tensor<double> x = random({4, 3, 8, 8}, 2);
  double acc = 0;
  for (int c = 0; c < 3; ++c)
    for (int h = 0; h < 8; ++h)
      for (int w = 0; w < 8; ++w) {
        double m = 0, s = 0;
        for (int n = 0; n < 4; ++n) m += x.at(n, c, h, w);
        m /= 4;
        for (int n = 0; n < 4; ++n) s += (x.at(n, c, h, w) - m) * (x.at(n, c, h, w) - m);
        acc += std::sqrt(s / 4);
      }
  acc /= 3 * 8 * 8;
  Var<double> y = minibatch_stddev(Var<double>(x));
  EXPECT_NEAR(y.value().at(0, 3, 0, 0), acc, 1e-6);
  EXPECT_NEAR(y.value().at(3, 3, 7, 7), acc, 1e-6);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    // original channels pass through unchanged
    const std::int64_t n = i / 192, rest = i % 192;
    EXPECT_EQ(y.value()[n * 256 + rest], x[i]);
  }
}

TEST(MinibatchStdDev, BatchOfOneIsAnError) {
  EXPECT_THROW(minibatch_stddev(Var<double>(random({1, 2, 4, 4}, 3))), Error);
}

TEST(MinibatchStdDev, PermutingTheBatchPermutesTheOutput) {
  Tensor<double> x = random({3, 2, 4, 4}, 4);
  const std::int64_t per = 2 * 16;
  Tensor<double> p(x.shape());
  const int perm[3] = {2, 0, 1};
  for (int n = 0; n < 3; ++n) std::copy_n(x.ptr() + perm[n] * per, per, p.ptr() + n * per);
  auto a = minibatch_stddev(Var<double>(x)).value();
  auto b = minibatch_stddev(Var<double>(p)).value();
  const std::int64_t out_per = 3 * 16;
  for (int n = 0; n < 3; ++n)
    for (std::int64_t j = 0; j < out_per; ++j) EXPECT_NEAR(b[n * out_per + j], a[perm[n] * out_per + j], 1e-15);
}

TEST(PixelNorm, ConstantInputNormalizesToOne) {
  Var<double> y = pixel_norm(Var<double>(Tensor<double>({2, 1, 3, 3}, 2.0)), 0.0);
  for (double v : y.value().data()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(PixelNorm, ZerosStayZero) {
  Var<double> y = pixel_norm(Var<double>(Tensor<double>({1, 4, 2, 2})));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(PixelNorm, OutputHasUnitMeanSquarePerPixel) {
  Var<float> y = pixel_norm(Var<float>(Rng(5).normal_tensor<float>({3, 16, 5, 5}, 3.0)));
  for (std::int64_t n = 0; n < 3; ++n)
    for (std::int64_t h = 0; h < 5; ++h)
      for (std::int64_t w = 0; w < 5; ++w) {
        double ms = 0;
        for (std::int64_t c = 0; c < 16; ++c) ms += y.value().at(n, c, h, w) * y.value().at(n, c, h, w);
        EXPECT_NEAR(ms / 16, 1.0, 1e-4);
      }
}

TEST(PixelNorm, PermutingTheBatchPermutesTheOutput) {
  Tensor<double> x = random({2, 3, 2, 2}, 6);
  Tensor<double> swapped(x.shape());
  std::copy_n(x.ptr(), 12, swapped.ptr() + 12);
  std::copy_n(x.ptr() + 12, 12, swapped.ptr());
  auto a = pixel_norm(Var<double>(x)).value();
  auto b = pixel_norm(Var<double>(swapped)).value();
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(a[i], b[i + 12]);
    EXPECT_EQ(a[i + 12], b[i]);
  }
}

TEST(SubPixel, ShapeAndInverse) {
  Tensor<double> x = random({1, 4, 2, 2}, 7);
  Var<double> y = pixel_shuffle(Var<double>(x), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  EXPECT_EQ(pixel_unshuffle(y, 2).value(), x);
}

TEST(Activations, LeakyReluSlopeInDiscriminators) {
  Var<float> y = leaky_relu(Var<float>(Tensor<float>({1}, -1.0f)), 0.2f);
  EXPECT_EQ(y.value()[0], -0.2f);
  LayerSpec l = layers::leaky_relu();
  EXPECT_EQ(l.slope, 0.2);
}

TEST(EqualizedScale, DenseFanIn512) {
  ParameterStore<double> store;
  Rng rng(1);
  LayerSpec l = layers::dense("fc", 512, 1, true);
  declare_parameters(l, store, InitScheme::Normal002, rng);
  EXPECT_EQ(store.entries()[0].init, InitScheme::UnitNormal);
  store.assign("fc.weight", Tensor<double>({1, 512}, 1.0));
  Var<double> w = equalized_scale(store, l);
  EXPECT_EQ(w.shape(), store.at("fc.weight").shape());
  EXPECT_NEAR(w.value()[0], std::sqrt(2.0 / 512), 1e-15);
  EXPECT_NEAR(w.value()[0], 0.0625, 1e-12);
}

TEST(EqualizedScale, MatchesPrescaledPlainLayer) {
  for (LayerKind kind : {LayerKind::Conv, LayerKind::Dense}) {
    LayerSpec eq = kind == LayerKind::Conv ? layers::conv("a", 3, 4, 3, 1, true) : layers::dense("a", 12, 5, true);
    LayerSpec plain = eq;
    plain.equalized = false;
    ParameterStore<double> s1, s2;
    Rng rng(3);
    declare_parameters(eq, s1, InitScheme::UnitNormal, rng);
    declare_parameters(plain, s2, InitScheme::UnitNormal, rng);
    Tensor<double> w = s1.at("a.weight").value();
    for (auto& v : w.data()) v *= std::sqrt(2.0 / fan_in(eq));
    s2.assign("a.weight", w);
    Tensor<double> x = random(kind == LayerKind::Conv ? Shape{2, 3, 5, 5} : Shape{2, 12}, 9);
    auto y1 = forward(eq, s1, Var<double>(x), {}).value();
    auto y2 = forward(plain, s2, Var<double>(x), {}).value();
    for (std::int64_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y1[i], y2[i], 1e-6);
  }
}

TEST(BatchNorm, InferenceWithUnitStatisticsIsAffineIdentity) {
  ParameterStore<double> store;
  Rng rng(2);
  LayerSpec l = layers::batch_norm("bn", 3);
  declare_parameters(l, store, InitScheme::Normal002, rng);
  ForwardContext<double> ctx;
  ctx.mode = Mode::Eval;
  ctx.bn_epsilon = 0.0;
  Tensor<double> x = random({2, 3, 4, 4}, 11);
  EXPECT_EQ(forward(l, store, Var<double>(x), ctx).value(), x);
  store.assign("bn.gamma", Tensor<double>({3}, std::vector<double>{2, 3, 4}));
  store.assign("bn.beta", Tensor<double>({3}, std::vector<double>{-1, 0, 1}));
  auto y = forward(l, store, Var<double>(x), ctx).value();
  for (std::int64_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(y.at(1, c, 2, 3), (c + 2) * x.at(1, c, 2, 3) + (c - 1));
}

TEST(BatchNorm, TrainingModeUpdatesRunningStatistics) {
  ParameterStore<double> store;
  Rng rng(2);
  LayerSpec l = layers::batch_norm("bn", 1);
  declare_parameters(l, store, InitScheme::Normal002, rng);
  Tensor<double> x({4, 1, 1, 1}, std::vector<double>{1, 2, 3, 6});
  auto y = forward(l, store, Var<double>(x), {}).value();
  double s = 0;
  for (double v : y.data()) s += v;
  EXPECT_NEAR(s, 0.0, 1e-12);
  EXPECT_NEAR(store.at("bn.running_mean").value()[0], 0.1 * 3.0, 1e-12);
  EXPECT_NEAR(store.at("bn.running_var").value()[0], 0.9 + 0.1 * 3.5, 1e-12);
}

TEST(LayerGradients, ConvMatchesFiniteDifferences) {
  EXPECT_LT(layer_gradient_error(layers::conv("c", 2, 3, 3, 1), {2, 2, 5, 5}, 10), 1e-3);
  EXPECT_LT(layer_gradient_error(layers::conv("c", 2, 3, 5, 2), {2, 2, 6, 6}, 11), 1e-3);
  EXPECT_LT(layer_gradient_error(layers::conv("c", 2, 3, 1, 1, true), {2, 2, 3, 3}, 12), 1e-3);
}

TEST(LayerGradients, ConvTransposeMatchesFiniteDifferences) {
  EXPECT_LT(layer_gradient_error(layers::conv_transpose("t", 3, 2, 5, 2), {2, 3, 3, 3}, 20), 1e-3);
  EXPECT_LT(layer_gradient_error(layers::conv_transpose("t", 2, 2, 5, 1), {1, 2, 4, 4}, 21), 1e-3);
}

TEST(LayerGradients, DenseMatchesFiniteDifferences) {
  EXPECT_LT(layer_gradient_error(layers::dense("d", 6, 4), {3, 6}, 30), 1e-3);
  EXPECT_LT(layer_gradient_error(layers::dense("d", 6, 4, true), {3, 6}, 31), 1e-3);
}

TEST(LayerGradients, BatchNormTrainingMatchesFiniteDifferences) {
  EXPECT_LT(layer_gradient_error(layers::batch_norm("bn", 3), {4, 3, 2, 2}, 40), 1e-3);
  EXPECT_LT(layer_gradient_error(layers::batch_norm("bn", 5), {6, 5}, 41), 1e-3);
}

TEST(LayerGradients, PixelNormAndMinibatchStdDevMatchFiniteDifferences) {
  EXPECT_LT(layer_gradient_error(layers::simple(LayerKind::PixelNorm), {2, 4, 3, 3}, 50), 1e-3);
  EXPECT_LT(layer_gradient_error(layers::simple(LayerKind::MinibatchStdDev), {3, 2, 3, 3}, 51), 1e-3);
}

TEST(LayerGradients, ResidualAndSubPixelMatchFiniteDifferences) {
  LayerSpec res = layers::residual("r", {layers::conv("r.c1", 2, 2, 3), layers::leaky_relu(),
                                         layers::conv("r.c2", 2, 2, 3)});
  EXPECT_LT(layer_gradient_error(res, {2, 2, 4, 4}, 60), 1e-3);
  EXPECT_LT(layer_gradient_error(layers::sub_pixel(2), {1, 8, 2, 2}, 61), 1e-3);
}

TEST(Forward, ShapeMismatchNamesLayerAndShapes) {
  ParameterStore<float> store;
  Rng rng(1);
  LayerSpec l = layers::conv("d.conv0", 1, 8, 5, 2);
  declare_parameters(l, store, InitScheme::Normal002, rng);
  try {
    forward(l, store, Var<float>(Tensor<float>({2, 3, 8, 8})), {});
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("d.conv0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(2, 3, 8, 8)"), std::string::npos) << msg;
  }
}

TEST(Forward, StridedShapesHalveAndDouble) {
  ParameterStore<float> store;
  Rng rng(1);
  LayerSpec down = layers::conv("c", 1, 4, 5, 2);
  LayerSpec up = layers::conv_transpose("t", 4, 4, 5, 2);
  declare_parameters(down, store, InitScheme::Normal002, rng);
  declare_parameters(up, store, InitScheme::Normal002, rng);
  auto h = forward(down, store, Var<float>(Tensor<float>({2, 1, 32, 32})), {});
  EXPECT_EQ(h.shape(), (Shape{2, 4, 16, 16}));
  EXPECT_EQ(forward(up, store, h, {}).shape(), (Shape{2, 4, 32, 32}));
}

TEST(ParameterStore, NamesAreUniqueAndShapesFixed) {
  ParameterStore<float> store;
  Rng rng(1);
  store.ensure("a", {2, 2}, InitScheme::Normal002, true, rng);
  EXPECT_NO_THROW(store.ensure("a", {2, 2}, InitScheme::Normal002, true, rng));
  EXPECT_THROW(store.ensure("a", {3}, InitScheme::Normal002, true, rng), Error);
  EXPECT_THROW(store.insert("a", Tensor<float>({2, 2}), InitScheme::Zeros, true), Error);
  EXPECT_THROW(store.assign("a", Tensor<float>({4})), Error);
  for (const auto& e : store.entries()) EXPECT_TRUE(all_finite(e.var.value()));
}

TEST(LayerSpec, RejectsUnsupportedKernelsAndStrides) {
  EXPECT_THROW(validate(layers::conv("c", 1, 1, 4, 1)), Error);
  EXPECT_THROW(validate(layers::conv("c", 1, 1, 3, 3)), Error);
}
