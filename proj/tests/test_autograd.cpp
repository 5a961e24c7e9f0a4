#include "divinpaint/nn.hpp"
#include "gradcheck.hpp"

#include <gtest/gtest.h>

using namespace dip;
using dip::testing::check_scalar_fn;
using dip::testing::probe;
using dip::testing::randn;

TEST(Autograd, BroadcastArithmetic) {
  const auto b = randn({1, 3, 1, 1}, 2);
  auto r = check_scalar_fn(
      [&](const Var<double>& x) { return probe(mul(add(x, constant(b)), constant(b)), 3); },
      randn({2, 3, 4, 4}, 1));
  EXPECT_LT(r.rel_err, 1e-8);

  const auto a = randn({2, 3, 4, 4}, 4);
  auto r2 = check_scalar_fn(
      [&](const Var<double>& m) { return probe(sub(constant(a), mul(constant(a), m)), 5); },
      randn({2, 1, 4, 4}, 6));
  EXPECT_LT(r2.rel_err, 1e-8);
}

TEST(Autograd, BroadcastShapeMismatchThrows) {
  Var<double> a(Tensor<double>({2, 3}));
  Var<double> b(Tensor<double>({2, 4}));
  EXPECT_THROW(add(a, b), DimensionError);
}

TEST(Autograd, Nonlinearities) {
  const auto x0 = randn({3, 5}, 7, 2.0);
  for (auto fn : std::vector<std::function<Var<double>(const Var<double>&)>>{
           [](const Var<double>& x) { return leaky_relu(x, 0.2); },
           [](const Var<double>& x) { return dip::tanh(x); },
           [](const Var<double>& x) { return sigmoid(x); },
           [](const Var<double>& x) { return softplus(x); },
           [](const Var<double>& x) { return square(x); },
           [](const Var<double>& x) { return rsqrt(square(x), 0.5); },
       }) {
    auto r = check_scalar_fn([&](const Var<double>& x) { return probe(fn(x), 8); }, x0);
    EXPECT_LT(r.rel_err, 1e-7);
  }
}

TEST(Autograd, SoftplusAndSigmoidStableAtExtremes) {
  Tensor<double> t({4});
  t[0] = -800;
  t[1] = 800;
  t[2] = 0;
  t[3] = -40;
  auto sp = softplus(constant(t)).value();
  EXPECT_EQ(sp[0], 0.0);
  EXPECT_EQ(sp[1], 800.0);
  EXPECT_NEAR(sp[2], std::log(2.0), 1e-15);
  auto sg = sigmoid(constant(t)).value();
  EXPECT_EQ(sg[0], 0.0);
  EXPECT_EQ(sg[1], 1.0);
  EXPECT_TRUE(sg.all_finite());
}

TEST(Autograd, ReductionsAndShapes) {
  const auto x0 = randn({2, 3, 4}, 9);
  EXPECT_LT(check_scalar_fn([](const Var<double>& x) { return mean(square(x)); }, x0).rel_err, 1e-8);
  EXPECT_LT(check_scalar_fn([](const Var<double>& x) { return probe(sum_axis(x, 1), 10); }, x0).rel_err,
            1e-8);
  EXPECT_LT(check_scalar_fn([](const Var<double>& x) { return probe(slice(x, 1, 1, 3), 11); }, x0).rel_err,
            1e-8);
  EXPECT_LT(check_scalar_fn(
                [](const Var<double>& x) {
                  return probe(concat<double>({x, scale(x, 2.0), slice(x, 2, 0, 4)}, 1), 12);
                },
                x0)
                .rel_err,
            1e-8);
  EXPECT_LT(check_scalar_fn([](const Var<double>& x) { return probe(expand(x, {5, 3, 4}), 13); },
                            randn({1, 3, 4}, 14))
                .rel_err,
            1e-8);
}

TEST(Autograd, ConcatSliceRoundTrip) {
  const auto x0 = randn({2, 5, 3}, 15);
  Var<double> x(x0);
  auto parts = std::vector<Var<double>>{slice(x, 1, 0, 2), slice(x, 1, 2, 5)};
  EXPECT_TRUE(concat(parts, 1).value() == x0);
}

TEST(Autograd, MatmulAndLinear) {
  const auto w = randn({4, 6}, 16);
  const auto b = randn({4}, 17);
  const auto x0 = randn({3, 6}, 18);
  EXPECT_LT(check_scalar_fn(
                [&](const Var<double>& x) { return probe(linear(x, constant(w), constant(b)), 19); }, x0)
                .rel_err,
            1e-8);
  EXPECT_LT(check_scalar_fn(
                [&](const Var<double>& W) { return probe(linear(constant(x0), W, constant(b)), 19); }, w)
                .rel_err,
            1e-8);
  EXPECT_LT(check_scalar_fn(
                [&](const Var<double>& B) { return probe(linear(constant(x0), constant(w), B), 19); }, b)
                .rel_err,
            1e-8);
  const auto m = randn({6, 2}, 20);
  EXPECT_LT(check_scalar_fn([&](const Var<double>& x) { return probe(matmul(x, constant(m)), 21); }, x0)
                .rel_err,
            1e-8);
}

TEST(Autograd, ConvolutionMatchesDirectSum) {
  const auto x0 = randn({2, 3, 5, 4}, 22);
  const auto w0 = randn({2, 3, 3, 3}, 23);
  auto y = conv2d(constant(x0), constant(w0)).value();
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 2; ++o)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) {
          double acc = 0;
          for (int c = 0; c < 3; ++c)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int yy = i + dy, xx = j + dx;
                if (yy < 0 || yy >= 5 || xx < 0 || xx >= 4) continue;
                acc += x0.at(n, c, yy, xx) * w0.at(o, c, dy + 1, dx + 1);
              }
          EXPECT_NEAR(y.at(n, o, i, j), acc, 1e-12);
        }
}

TEST(Autograd, ConvolutionGradients) {
  const auto x0 = randn({2, 3, 4, 4}, 24);
  const auto w3 = randn({2, 3, 3, 3}, 25);
  const auto w1 = randn({4, 3, 1, 1}, 26);
  for (const auto& w : {w3, w1}) {
    EXPECT_LT(check_scalar_fn([&](const Var<double>& x) { return probe(conv2d(x, constant(w)), 27); }, x0)
                  .rel_err,
              1e-8);
    EXPECT_LT(check_scalar_fn([&](const Var<double>& W) { return probe(conv2d(constant(x0), W), 27); }, w)
                  .rel_err,
              1e-8);
  }
}

TEST(Autograd, Resampling) {
  const auto x0 = randn({2, 2, 4, 4}, 28);
  EXPECT_LT(check_scalar_fn([](const Var<double>& x) { return probe(upsample2x(x), 29); }, x0).rel_err, 1e-8);
  EXPECT_LT(check_scalar_fn([](const Var<double>& x) { return probe(avgpool2x(x), 30); }, x0).rel_err, 1e-8);
  EXPECT_LT(check_scalar_fn([](const Var<double>& x) { return probe(maxpool2x(x), 31); }, x0).rel_err, 1e-8);
}

TEST(Autograd, PreluAndBatchNorm) {
  const auto x0 = randn({3, 2, 3, 3}, 32);
  const auto a0 = randn({2}, 33, 0.3);
  EXPECT_LT(check_scalar_fn([&](const Var<double>& x) { return probe(prelu(x, constant(a0)), 34); }, x0).rel_err,
            1e-8);
  EXPECT_LT(check_scalar_fn([&](const Var<double>& a) { return probe(prelu(constant(x0), a), 34); }, a0).rel_err,
            1e-8);
  const auto g0 = randn({2}, 35);
  const auto b0 = randn({2}, 36);
  for (bool training : {true, false}) {
    auto f = [&](const Var<double>& x) {
      Tensor<double> rm({2}, 0.1), rv({2}, 2.0);
      return probe(batch_norm(x, constant(g0), constant(b0), rm, rv, training), 37);
    };
    EXPECT_LT(check_scalar_fn(f, x0).rel_err, 1e-7) << "training=" << training;
  }
}

TEST(Autograd, ModulatedConvGradients) {
  ParamSet<double> ps;
  Rng rng(38);
  ModulatedConv<double> mc(ps, "mc", 5, 3, 4, 3, rng, true);
  const auto x0 = randn({2, 3, 4, 4}, 39);
  const auto s0 = randn({2, 5}, 40);
  EXPECT_LT(check_scalar_fn([&](const Var<double>& x) { return probe(mc(x, constant(s0)), 41); }, x0).rel_err,
            1e-7);
  EXPECT_LT(check_scalar_fn([&](const Var<double>& s) { return probe(mc(constant(x0), s), 41); }, s0).rel_err,
            1e-7);
}

TEST(Autograd, FrozenInputsBuildNoGraph) {
  Var<double> a(randn({3}, 42), false);
  auto y = sum(square(a));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Autograd, AdamReducesQuadratic) {
  Var<double> x(randn({4}, 43), true);
  Adam<double> opt({x});
  const double start = x.value().array().square().sum();
  for (int i = 0; i < 200; ++i) {
    backward(sum(square(x)));
    opt.step(0.05);
  }
  EXPECT_LT(x.value().array().square().sum(), 1e-2 * start);
}
