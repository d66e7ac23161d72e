#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "n4n/nn/conv.hpp"
#include "n4n/nn/gradcheck.hpp"
#include "n4n/nn/layers.hpp"
#include "n4n/nn/loss.hpp"
#include "n4n/nn/optim.hpp"
#include "support/nn_helpers.hpp"

using namespace n4n;
using namespace n4n::nn;
using test_support::dot;
using test_support::probe;
using test_support::randn;

namespace {

constexpr double kTol = 1e-4;

NdTensor<double> scalar5(double v) { return NdTensor<double>(Shape{1, 1, 1, 1, 1}, v); }

GradCheckReport check_conv(ConvSpec spec, Shape xs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Conv3d<double> conv("c", spec);
  conv.init(rng);
  for (auto& b : conv.bias.value.values()) b = std::normal_distribution<double>(0, 0.1)(rng);
  NdTensor<double> x = randn(xs, rng);
  NdTensor<double> y = conv.forward(x);
  NdTensor<double> r = randn(y.shape(), rng);
  NdTensor<double> dx = conv.backward(r);
  return grad_check([&] { return dot(conv.forward(x), r); },
                    {probe("x", x, dx), probe(conv.weight), probe(conv.bias)}, kTol);
}

}  // namespace

TEST(Conv3d, UnitKernelScales) {
  Conv3d<double> conv("c", {1, 1, 1, 1, Padding::Same, false});
  conv.weight.value[0] = 2;
  EXPECT_DOUBLE_EQ(conv.forward(scalar5(3))[0], 6.0);
}

TEST(Conv3d, OnesKernelCentreSumsNeighbourhood) {
  Conv3d<float> conv("c", {1, 1, 3, 1, Padding::Same, false});
  conv.weight.value.fill(1);
  NdTensor<float> x(Shape{1, 1, 8, 8, 8}, 1.0f);
  auto y = conv.forward(x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_FLOAT_EQ(y[(4 * 8 + 4) * 8 + 4], 27.0f);
  EXPECT_FLOAT_EQ(y[0], 8.0f);
  EXPECT_FLOAT_EQ(y[4], 12.0f);
}

TEST(Conv3d, MatchesDirectSummationReference) {
  struct Case {
    ConvSpec spec;
    Shape x;
  };
  const std::vector<Case> cases = {
      {{2, 3, 3, 1, Padding::Same, false}, {2, 2, 5, 6, 7}},
      {{3, 2, 1, 1, Padding::Same, false}, {1, 3, 4, 3, 5}},
      {{2, 2, 5, 1, Padding::Same, false}, {1, 2, 6, 5, 4}},
      {{2, 3, 3, 1, Padding::Valid, false}, {1, 2, 5, 5, 6}},
      {{2, 2, 2, 2, Padding::Valid, false}, {2, 2, 4, 6, 5}},
      {{1, 2, 3, 2, Padding::Same, false}, {1, 1, 7, 6, 5}},
  };
  std::mt19937_64 rng(7);
  for (const auto& c : cases) {
    Conv3d<double> conv("c", c.spec);
    conv.init(rng);
    for (auto& b : conv.bias.value.values()) b = std::normal_distribution<double>()(rng);
    auto x = randn(c.x, rng);
    auto y = conv.forward(x);
    auto ref = test_support::reference_conv(x, conv.weight.value, conv.bias.value, c.spec.stride, conv.pad());
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12) << i;
  }
}

TEST(Conv3d, TransposeIsAdjointOfConvolution) {
  std::mt19937_64 rng(11);
  for (std::size_t k : {2u, 3u}) {
    const std::size_t ci = 2, co = 3, s = 2;
    Conv3d<double> fwd("f", {ci, co, k, s, Padding::Valid, false});
    Conv3d<double> tr("t", {co, ci, k, s, Padding::Valid, true});
    fwd.init(rng);
    tr.weight.value = fwd.weight.value;  // (co, ci, k^3) is the transpose layout (in=co, out=ci)
    auto big = randn({1, ci, 7, 8, 9}, rng);
    auto yc = fwd.forward(big);
    auto small = randn(yc.shape(), rng);
    auto yt = tr.forward(small);
    ASSERT_EQ(yt.dim(2), (yc.dim(2) - 1) * s + k);
    // <conv(big), small> == <big', conv_t(small)> on the covered region
    NdTensor<double> crop(yt.shape());
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t z = 0; z < yt.dim(2); ++z)
        for (std::size_t y = 0; y < yt.dim(3); ++y)
          for (std::size_t x = 0; x < yt.dim(4); ++x)
            crop[((c * yt.dim(2) + z) * yt.dim(3) + y) * yt.dim(4) + x] = big[((c * 7 + z) * 8 + y) * 9 + x];
    EXPECT_NEAR(dot(yc, small), dot(crop, yt), 1e-10);
  }
}

TEST(Conv3d, RejectsChannelMismatch) {
  Conv3d<double> conv("c", {2, 2, 3, 1, Padding::Same, false});
  NdTensor<double> x(Shape{1, 3, 4, 4, 4});
  try {
    conv.forward(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Conv3d, GradientsSameThreeByThree) {
  auto r = check_conv({2, 3, 3, 1, Padding::Same, false}, {2, 2, 5, 5, 5}, 1);
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Conv3d, GradientsPointwise) {
  auto r = check_conv({3, 2, 1, 1, Padding::Same, false}, {2, 3, 5, 5, 5}, 2);
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Conv3d, GradientsStrided) {
  auto r = check_conv({2, 2, 2, 2, Padding::Valid, false}, {2, 2, 6, 6, 6}, 3);
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  r = check_conv({2, 2, 3, 2, Padding::Same, false}, {1, 2, 5, 5, 5}, 4);
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Conv3d, GradientsTranspose) {
  auto r = check_conv({2, 3, 2, 2, Padding::Valid, true}, {2, 2, 3, 3, 3}, 5);
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
  r = check_conv({2, 2, 3, 2, Padding::Same, true}, {1, 2, 3, 3, 3}, 6);
  EXPECT_LT(r.max_rel_error, kTol) << r.worst;
}

TEST(Conv3d, CorruptedBackwardIsDetected) {
  std::mt19937_64 rng(9);
  Conv3d<double> conv("c", {2, 2, 3, 1, Padding::Same, false});
  conv.init(rng);
  auto x = randn({1, 2, 5, 5, 5}, rng);
  auto r = randn(conv.forward(x).shape(), rng);
  auto dx = conv.backward(r);
  for (auto& g : conv.weight.grad.values()) g *= 1.01;
  auto rep = grad_check([&] { return dot(conv.forward(x), r); }, {probe(conv.weight)}, kTol);
  EXPECT_FALSE(rep.passed());
}

TEST(Conv3d, FloatAndDoubleAgree) {
  std::mt19937_64 rng(12);
  Conv3d<double> cd("c", {3, 4, 3, 1, Padding::Same, false});
  cd.init(rng);
  Conv3d<float> cf("c", {3, 4, 3, 1, Padding::Same, false});
  cf.weight.value = cd.weight.value.cast<float>();
  auto x = randn({2, 3, 6, 5, 7}, rng);
  auto yd = cd.forward(x);
  auto yf = cf.forward(x.cast<float>());
  for (std::size_t i = 0; i < yd.size(); ++i) ASSERT_NEAR(yd[i], yf[i], 1e-4);
}

TEST(MaxPool, BlockMaximum) {
  NdTensor<double> x(Shape{1, 1, 2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) x[i] = double(i + 1);
  MaxPool3d<double> pool;
  EXPECT_EQ(pool.forward(x)[0], 8.0);
}

TEST(MaxPool, TieRoutesToFirstElement) {
  NdTensor<double> x(Shape{1, 1, 2, 2, 2}, 4.0);
  MaxPool3d<double> pool;
  EXPECT_EQ(pool.forward(x)[0], 4.0);
  auto dx = pool.backward(scalar5(1.5));
  EXPECT_EQ(dx[0], 1.5);
  for (std::size_t i = 1; i < 8; ++i) EXPECT_EQ(dx[i], 0.0);
}

TEST(MaxPool, RaggedEdgesBehaveLikeReplication) {
  std::mt19937_64 rng(3);
  auto x = randn({1, 1, 3, 3, 3}, rng);
  MaxPool3d<double> pool;
  auto y = pool.forward(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2, 2}));
  EXPECT_EQ(y[7], x[26]);
}

TEST(MaxPool, Gradient) {
  std::mt19937_64 rng(13);
  auto x = randn({2, 2, 4, 4, 4}, rng);
  MaxPool3d<double> pool;
  auto r = randn(pool.forward(x).shape(), rng);
  auto dx = pool.backward(r);
  auto rep = grad_check([&] { return dot(pool.forward(x), r); }, {probe("x", x, dx)}, kTol);
  EXPECT_LT(rep.max_rel_error, kTol) << rep.worst;
}

TEST(Upsample, RepeatsValue) {
  auto y = upsample(scalar5(5.0));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 5.0);
}

TEST(Concat, AddsChannels) {
  NdTensor<double> a(Shape{1, 2, 3, 3, 3}), b(Shape{1, 3, 3, 3, 3});
  EXPECT_EQ(concat(a, b).channels(), 5u);
  NdTensor<double> c(Shape{1, 3, 3, 3, 2});
  EXPECT_THROW(concat(a, c), Error);
}

TEST(Concat, UpsampleConcatGradient) {
  std::mt19937_64 rng(17);
  auto a = randn({2, 2, 2, 3, 2}, rng);
  auto b = randn({2, 3, 4, 6, 4}, rng);
  auto r = randn({2, 5, 4, 6, 4}, rng);
  auto [dup, db] = concat_backward(r, 2);
  auto da = upsample_backward(dup);
  auto rep = grad_check([&] { return dot(concat(upsample(a), b), r); }, {probe("a", a, da), probe("b", b, db)}, kTol);
  EXPECT_LT(rep.max_rel_error, kTol) << rep.worst;
}

TEST(BatchNorm, NormalizesThreeValues) {
  NdTensor<double> x(Shape{1, 1, 1, 1, 3}, std::vector<double>{1, 2, 3});
  BatchNorm3d<double> bn("bn", 1);
  auto y = bn.forward(x, Mode::Train);
  const double s = std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y[0], -1.0 / s, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
  EXPECT_NEAR(y[2], 1.0 / s, 1e-12);
  EXPECT_NEAR(y[2], 1.2247, 1e-4);
  EXPECT_NEAR(bn.running_mean[0], 0.1 * 2.0, 1e-12);
  EXPECT_NEAR(bn.running_var[0], 0.9 + 0.1 * 2.0 / 3.0, 1e-12);
}

TEST(BatchNorm, ConstantChannelGivesZeros) {
  NdTensor<double> x(Shape{2, 1, 2, 2, 2}, 7.0);
  BatchNorm3d<double> bn("bn", 1);
  auto y = bn.forward(x, Mode::Train);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
  BatchNorm3d<double> bn("bn", 1);
  bn.running_mean[0] = 2;
  bn.running_var[0] = 4;
  bn.gamma.value[0] = 3;
  bn.beta.value[0] = 1;
  auto y = bn.forward(scalar5(6), Mode::Eval);
  EXPECT_NEAR(y[0], 3 * 4 / std::sqrt(4 + 1e-5) + 1, 1e-12);
  EXPECT_EQ(bn.running_mean[0], 2.0);
}

TEST(BatchNorm, GradientIncludingAffine) {
  std::mt19937_64 rng(19);
  BatchNorm3d<double> bn("bn", 3);
  for (auto& g : bn.gamma.value.values()) g = 1 + 0.5 * std::normal_distribution<double>()(rng);
  for (auto& b : bn.beta.value.values()) b = std::normal_distribution<double>()(rng);
  auto x = randn({2, 3, 3, 3, 3}, rng, 2.0);
  auto r = randn(x.shape(), rng);
  bn.forward(x, Mode::Train);
  auto dx = bn.backward(r);
  auto rep = grad_check([&] { return dot(bn.forward(x, Mode::Train), r); },
                        {probe("x", x, dx), probe(bn.gamma), probe(bn.beta)}, kTol);
  EXPECT_LT(rep.max_rel_error, kTol) << rep.worst;
}

TEST(PReLU, Branches) {
  PReLU<double> act("p", 1);
  EXPECT_DOUBLE_EQ(act.forward(scalar5(-2))[0], -0.5);
  act.a.value[0] = 7;
  EXPECT_DOUBLE_EQ(act.forward(scalar5(3))[0], 3.0);
  act.forward(scalar5(0));
  EXPECT_DOUBLE_EQ(act.backward(scalar5(1))[0], 1.0);
}

TEST(PReLU, GradientIncludingSlope) {
  std::mt19937_64 rng(23);
  PReLU<double> act("p", 2);
  act.a.value[1] = -0.3;
  auto x = randn({2, 2, 3, 3, 3}, rng);
  auto r = randn(x.shape(), rng);
  act.forward(x);
  auto dx = act.backward(r);
  auto rep = grad_check([&] { return dot(act.forward(x), r); }, {probe("x", x, dx), probe(act.a)}, kTol);
  EXPECT_LT(rep.max_rel_error, kTol) << rep.worst;
}

TEST(Residual, AddsBranches) {
  EXPECT_EQ(residual_add(scalar5(1), scalar5(2))[0], 3.0);
  std::mt19937_64 rng(1);
  auto x = randn({1, 2, 2, 2, 2}, rng);
  auto y = residual_add(x, NdTensor<double>(x.shape()));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Residual, ConvBlockGradient) {
  std::mt19937_64 rng(29);
  Conv3d<double> conv("c", {2, 2, 3, 1, Padding::Same, false});
  conv.init(rng);
  auto x = randn({1, 2, 4, 4, 4}, rng);
  auto r = randn(x.shape(), rng);
  conv.forward(x);
  auto dx = conv.backward(r);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += r[i];
  auto rep = grad_check([&] { return dot(residual_add(x, conv.forward(x)), r); },
                        {probe("x", x, dx), probe(conv.weight), probe(conv.bias)}, kTol);
  EXPECT_LT(rep.max_rel_error, kTol) << rep.worst;
}

TEST(Softmax, SymmetricAndStable) {
  Softmax<double> sm;
  NdTensor<double> z(Shape{1, 2, 1, 1, 2}, std::vector<double>{0, 1000, 0, 0});
  auto p = sm.forward(z);
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[2], 0.5);
  EXPECT_EQ(p[1], 1.0);
  EXPECT_EQ(p[3], 0.0);
}

TEST(Softmax, ChannelsSumToOne) {
  std::mt19937_64 rng(31);
  Softmax<float> sm;
  auto z = randn({2, 3, 4, 4, 4}, rng, 50.0).cast<float>();
  auto p = sm.forward(z);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t v = 0; v < 64; ++v) {
      double s = 0;
      for (std::size_t c = 0; c < 3; ++c) s += p.slice(n, c)[v];
      ASSERT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Softmax, Gradient) {
  std::mt19937_64 rng(37);
  Softmax<double> sm;
  auto z = randn({2, 2, 3, 3, 3}, rng);
  auto r = randn(z.shape(), rng);
  sm.forward(z);
  auto dz = sm.backward(r);
  auto rep = grad_check([&] { return dot(sm.forward(z), r); }, {probe("z", z, dz)}, kTol);
  EXPECT_LT(rep.max_rel_error, kTol) << rep.worst;
}

TEST(Loss, WipExamples) {
  EXPECT_DOUBLE_EQ(loss_wip(scalar5(0.8), scalar5(1), 3).value, -2.4);
  EXPECT_NEAR(loss_wip(scalar5(0.8), scalar5(0), 3).value, -0.2, 1e-15);
  EXPECT_EQ(loss_wip(scalar5(0.0), scalar5(0), 3).value, -1.0);
}

TEST(Loss, WipGradientIsExactConstant) {
  std::mt19937_64 rng(41);
  NdTensor<float> p(Shape{2, 1, 3, 4, 5}), y(p.shape());
  std::uniform_real_distribution<float> u(0, 1);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = u(rng), y[i] = u(rng) < 0.3f ? 1.f : 0.f;
  const double w = 3, n = double(p.size());
  auto r = loss_wip(p, y, w);
  for (std::size_t i = 0; i < p.size(); ++i)
    ASSERT_EQ(r.grad[i], y[i] == 1.f ? static_cast<float>(-w / n) : static_cast<float>(1.0 / n));
}

TEST(Loss, WceExamples) {
  EXPECT_NEAR(loss_wce(scalar5(0.5), scalar5(1), 3).value, 3 * std::log(2.0), 1e-12);
  EXPECT_NEAR(loss_wce(scalar5(0.5), scalar5(0), 17).value, std::log(2.0), 1e-12);
  EXPECT_LT(loss_wce(scalar5(1.0), scalar5(1), 3).value, 1e-6);
  EXPECT_TRUE(std::isfinite(loss_wce(scalar5(0.0), scalar5(1), 3).value));
}

TEST(Loss, WceGradient) {
  std::mt19937_64 rng(43);
  NdTensor<double> p(Shape{1, 1, 3, 3, 3}), y(p.shape());
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = u(rng), y[i] = i % 3 == 0;
  auto r = loss_wce(p, y, 2.5);
  auto rep = grad_check([&] { return loss_wce(p, y, 2.5).value; }, {probe("p", p, r.grad)}, kTol);
  EXPECT_LT(rep.max_rel_error, kTol) << rep.worst;
}

TEST(Loss, ShapeMismatch) {
  NdTensor<double> p(Shape{1, 1, 2, 2, 2}), y(Shape{1, 1, 2, 2, 3});
  EXPECT_THROW(loss_wip(p, y, 3), Error);
  EXPECT_THROW(loss_wce(p, y, 3), Error);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter<double> p("t", NdTensor<double>(Shape{1}, 0.0));
  p.grad[0] = 1;
  Adam<double> opt;
  opt.step({&p}, 0.1);
  EXPECT_NEAR(p.value[0], -0.1, 1e-8);
  EXPECT_EQ(opt.t, 1u);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Parameter<double> p("t", NdTensor<double>(Shape{3}, 1.5));
  Adam<double> opt;
  opt.step({&p}, 0.1);
  for (double v : p.value.values()) EXPECT_EQ(v, 1.5);
}

TEST(Adam, ConvergesOnQuadratic) {
  for (auto kind : {OptimizerKind::Adam, OptimizerKind::Nadam}) {
    Parameter<double> p("t", NdTensor<double>(Shape{1}, 0.0));
    Adam<double> opt({0.9, 0.999, 1e-8, kind});
    for (int i = 0; i < 200; ++i) {
      p.grad[0] = 2 * (p.value[0] - 3);
      opt.step({&p}, 0.1);
    }
    EXPECT_LT(std::abs(p.value[0] - 3), 1e-2) << to_string(kind);
  }
}

TEST(Adam, ZeroLearningRateIsBitIdentical) {
  std::mt19937_64 rng(47);
  Parameter<float> p("t", randn({10}, rng).cast<float>());
  const auto before = p.value;
  p.grad = randn({10}, rng).cast<float>();
  Adam<float> opt;
  opt.step({&p}, 0.0);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(p.value[i], before[i]);
}

TEST(Adam, NonFiniteGradientRejectedWithoutUpdate) {
  Parameter<double> a("a", NdTensor<double>(Shape{2}, 1.0)), b("b", NdTensor<double>(Shape{1}, 2.0));
  a.grad[0] = 1;
  b.grad[0] = std::nan("");
  Adam<double> opt;
  try {
    opt.step({&a, &b}, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteGrad);
  }
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(opt.t, 0u);
}

TEST(Plateau, FlatLossHalvesAtFixedEpochs) {
  PlateauScheduler s{0.1, 15};
  std::vector<int> reductions;
  for (int epoch = 1; epoch <= 50; ++epoch)
    if (s.step(1.0)) reductions.push_back(epoch);
  EXPECT_EQ(reductions, (std::vector<int>{16, 31, 46}));
  EXPECT_DOUBLE_EQ(s.lr, 0.0125);
}

TEST(Plateau, ImprovementResetsCounter) {
  PlateauScheduler s{0.1, 3};
  EXPECT_FALSE(s.step(1.0));
  EXPECT_FALSE(s.step(1.0));
  EXPECT_FALSE(s.step(0.5));
  EXPECT_FALSE(s.step(0.5 - 1e-7));  // within min-delta, counts as bad
  EXPECT_FALSE(s.step(0.5));
  EXPECT_TRUE(s.step(0.5));
}

TEST(GradCheck, SquareFunction) {
  std::vector<double> x{3.0};
  std::vector<double> g{6.0};
  auto rep = grad_check([&] { return x[0] * x[0]; }, {{"x", x, g}}, 1e-9);
  EXPECT_LT(rep.max_rel_error, 1e-9);
  EXPECT_TRUE(rep.passed());
  EXPECT_EQ(rep.checked, 1u);
}

TEST(GradCheck, SamplesAtMostBudget) {
  std::vector<double> x(1000, 1.0), g(1000, 2.0);
  auto rep = grad_check(
      [&] {
        double s = 0;
        for (double v : x) s += v * v;
        return s;
      },
      {{"x", x, g}}, 1e-6);
  EXPECT_EQ(rep.checked, 256u);
  EXPECT_TRUE(rep.passed());
}
