#include "divinpaint/masking.hpp"
#include "divinpaint/objectives.hpp"
#include "gradcheck.hpp"

#include <gtest/gtest.h>
#include <quadmath.h>

#include <cmath>

using namespace dip;
using dip::testing::check_scalar_fn;
using dip::testing::probe;
using dip::testing::randn;

namespace {

ModelConfig tiny() { return ModelConfig::profile("tiny"); }

// Fixed 2-channel tap: channel c scaled by (1, 2).
std::vector<Var<double>> toy_phi(const Var<double>& x) {
  Tensor<double> w({1, 2, 1, 1});
  w[0] = 1.0;
  w[1] = 2.0;
  return {mul(x, constant(w))};
}

struct TinyPhi {
  TinyPhi() : rng(3), net(tiny(), rng) {}
  Rng rng;
  FeatureNet<double> net;
  PerceptualFn<double> fn() const { return perceptual_of(net); }
};

Tensor<double> binary_mask(int n, int res, std::uint64_t seed) {
  Rng rng(seed);
  const auto m = sample_mask_batch(MaskBand{0.2, 0.6}, res, n, rng);
  Tensor<double> out(m.shape());
  for (Eigen::Index i = 0; i < m.size(); ++i) out[i] = m[i];
  return out;
}

// Literal log / sigmoid form of the adversarial value in quad precision.
double literal_value(double r, double fg, double fr) {
  auto sig = [](__float128 x) { return 1 / (1 + expq(-x)); };
  const __float128 v = 2 * logq(sig(r)) + logq(1 - sig(fg)) + logq(1 - sig(fr));
  return static_cast<double>(v);
}

Tensor<double> scalar(double v) { return Tensor<double>({1}, v); }

}  // namespace

TEST(Perceptual, HandComputedToyTap) {
  Tensor<double> a({1, 2, 2, 2});
  const double vals[] = {1, 2, 3, 4, 0, 0, 0, 1};
  for (int i = 0; i < 8; ++i) a[i] = vals[i];
  const auto b = Tensor<double>::zeros({1, 2, 2, 2});
  const PerceptualFn<double> phi = toy_phi;
  // (1 + 4 + 9 + 16 + 0 + 0 + 0 + 4) / 8
  EXPECT_DOUBLE_EQ(perceptual_distance(constant(a), constant(b), phi).value()[0], 4.25);
  EXPECT_DOUBLE_EQ(perceptual_distance(constant(b), constant(a), phi).value()[0], 4.25);
  EXPECT_EQ(perceptual_distance(constant(a), constant(a), phi).value()[0], 0.0);
  EXPECT_THROW(perceptual_distance(constant(a), constant(Tensor<double>({1, 2, 2, 3})), phi), DimensionError);
}

TEST(Perceptual, PerSampleMatchesBatchOfOne) {
  TinyPhi phi;
  const auto a = randn({3, 3, 16, 16}, 1, 0.5);
  const auto b = randn({3, 3, 16, 16}, 2, 0.5);
  const auto per = perceptual_distance_per_sample(a, b, phi.fn());
  for (int i = 0; i < 3; ++i) {
    const double single =
        perceptual_distance(constant(slice(constant(a), 0, i, i + 1).value()),
                            constant(slice(constant(b), 0, i, i + 1).value()), phi.fn())
            .value()[0];
    EXPECT_NEAR(per[i], single, 1e-12);
  }
}

TEST(LossRg, ZeroOnEqualAndConstantOffset) {
  TinyPhi phi;
  const auto t = randn({2, 3, 16, 16}, 4, 0.5);
  EXPECT_EQ(loss_rg(constant(t), constant(t), phi.fn()).total.value()[0], 0.0);
  const auto zero = Tensor<double>::zeros({2, 3, 16, 16});
  const Tensor<double> off({2, 3, 16, 16}, 0.1);
  const auto l = loss_rg(constant(off), constant(zero), phi.fn());
  EXPECT_NEAR(l.pixel.value()[0], 0.01, 1e-15);
  EXPECT_GT(l.perceptual.value()[0], 0.0);
  EXPECT_NEAR(l.total.value()[0], 0.01 + 5e-5 * l.perceptual.value()[0], 1e-15);
  EXPECT_THROW(loss_rg(constant(off), constant(Tensor<double>({2, 3, 8, 8})), phi.fn()), DimensionError);
}

TEST(LossRg, NonNegative) {
  TinyPhi phi;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto l = loss_rg(constant(randn({1, 3, 16, 16}, s)), constant(randn({1, 3, 16, 16}, s + 100)), phi.fn());
    EXPECT_GE(l.total.value()[0], 0.0);
  }
}

TEST(LossRr, HoleIndependence) {
  TinyPhi phi;
  const auto img = randn({2, 3, 16, 16}, 5, 0.5);
  const auto m = binary_mask(2, 16, 6);
  const auto erased = erase(img, m);
  auto out = randn({2, 3, 16, 16}, 7, 0.5);
  const double base = loss_rr(constant(out), constant(erased), constant(m), phi.fn()).total.value()[0];
  const auto noise = randn(out.shape(), 8, 3.0);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 256; ++p)
        if (m[n * 256 + p] == 0.0) out[(n * 3 + c) * 256 + p] += noise[(n * 3 + c) * 256 + p];
  const double moved = loss_rr(constant(out), constant(erased), constant(m), phi.fn()).total.value()[0];
  EXPECT_LE(std::abs(moved - base), 1e-12 * std::abs(base));
}

TEST(LossRr, ExactOnOriginalAndZeroMask) {
  TinyPhi phi;
  const auto img = randn({1, 3, 16, 16}, 9, 0.5);
  const auto m = binary_mask(1, 16, 10);
  EXPECT_EQ(loss_rr(constant(img), constant(erase(img, m)), constant(m), phi.fn()).pixel.value()[0], 0.0);
  const auto zero_mask = Tensor<double>::zeros({1, 1, 16, 16});
  const auto l = loss_rr(constant(randn({1, 3, 16, 16}, 11)), constant(Tensor<double>::zeros({1, 3, 16, 16})),
                         constant(zero_mask), phi.fn());
  EXPECT_EQ(l.total.value()[0], 0.0);
}

TEST(LossAdv, HalfProbabilityValue) {
  const auto z = Tensor<double>::zeros({4});
  EXPECT_NEAR(adversarial_value(z, z, z), 4.0 * std::log(0.5), 1e-15);
  const auto d = loss_adv(constant(z), constant(z), constant(z), AdvSide::discriminator).value()[0];
  EXPECT_NEAR(d, -4.0 * std::log(0.5), 1e-15);
  const auto g = loss_adv(constant(z), constant(z), constant(z), AdvSide::generator).value()[0];
  EXPECT_NEAR(g, 2.0 * std::log(0.5), 1e-15);
}

TEST(LossAdv, SaturationApproachesZeroFromBelow) {
  double prev = -1e9;
  for (double s : {2.0, 5.0, 10.0, 20.0, 35.0}) {
    const double v = adversarial_value(scalar(s), scalar(-s), scalar(-s));
    EXPECT_LT(v, 0.0);
    EXPECT_GT(v, prev);
    prev = v;
  }
  EXPECT_GT(prev, -1e-14);
}

TEST(LossAdv, StableMatchesLiteralForm) {
  Rng rng(12);
  for (int i = 0; i < 2000; ++i) {
    const double r = rng.uniform(-30, 30), fg = rng.uniform(-30, 30), fr = rng.uniform(-30, 30);
    EXPECT_NEAR(adversarial_value(scalar(r), scalar(fg), scalar(fr)), literal_value(r, fg, fr), 1e-10);
  }
  for (double e : {-30.0, 30.0})
    EXPECT_NEAR(adversarial_value(scalar(e), scalar(e), scalar(-e)), literal_value(e, e, -e), 1e-10);
}

TEST(LossAdv, NonFiniteAndMissingTerms) {
  const auto z = Tensor<double>::zeros({2});
  Tensor<double> bad({2}, 0.0);
  bad[1] = std::nan("");
  EXPECT_THROW(loss_adv(constant(bad), constant(z), constant(z), AdvSide::discriminator), NumericError);
  EXPECT_THROW(loss_adv(constant(z), Var<double>(), Var<double>(), AdvSide::generator), std::invalid_argument);
  // A dropped fake term reweights the real term to the number of fakes.
  const double one = loss_adv(constant(z), Var<double>(), constant(z), AdvSide::discriminator).value()[0];
  EXPECT_NEAR(one, -2.0 * std::log(0.5), 1e-15);
}

TEST(LossAdv, GradientsBothSides) {
  const auto r0 = randn({5}, 13, 2.0), g0 = randn({5}, 14, 2.0), f0 = randn({5}, 15, 2.0);
  for (AdvSide side : {AdvSide::discriminator, AdvSide::generator}) {
    if (side == AdvSide::discriminator) {
      auto rr = check_scalar_fn(
          [&](const Var<double>& x) { return loss_adv(x, constant(g0), constant(f0), side); }, r0);
      EXPECT_LT(rr.rel_err, 1e-6);
    }
    auto rg = check_scalar_fn([&](const Var<double>& x) { return loss_adv(constant(r0), x, constant(f0), side); },
                              g0);
    EXPECT_LT(rg.rel_err, 1e-6);
    auto rf = check_scalar_fn([&](const Var<double>& x) { return loss_adv(constant(r0), constant(g0), x, side); },
                              f0);
    EXPECT_LT(rf.rel_err, 1e-6);
  }
}

TEST(LossGrad, ReconstructionTermsMatchFiniteDifferences) {
  TinyPhi phi;
  const auto target = randn({1, 3, 16, 16}, 16, 0.5);
  const auto m = binary_mask(1, 16, 17);
  const auto erased = erase(target, m);
  const auto x0 = randn({1, 3, 16, 16}, 18, 0.5);
  for (double pw : {5e-5, 1.0}) {
    LossWeights w;
    w.perceptual = pw;
    auto rg = check_scalar_fn(
        [&](const Var<double>& x) { return loss_rg(x, constant(target), phi.fn(), w).total; }, x0);
    EXPECT_LT(rg.rel_err, 1e-4) << pw;
    auto rr = check_scalar_fn(
        [&](const Var<double>& x) { return loss_rr(x, constant(erased), constant(m), phi.fn(), w).total; }, x0);
    EXPECT_LT(rr.rel_err, 1e-4) << pw;
  }
}

TEST(TotalObjective, PaperWeights) {
  LossBreakdown p;
  EXPECT_EQ(total_objective(p), 0.0);
  p.l_adv_g = p.l_rg = p.l_rr = 1.0;
  EXPECT_NEAR(total_objective(p), 2.08, 1e-15);
  p.l_rr = 0.0;
  EXPECT_NEAR(total_objective(p), 1.08, 1e-15);
  p.l_rr = 1.0;
  p.l_rg = std::numeric_limits<double>::infinity();
  EXPECT_THROW(total_objective(p), NumericError);
}

TEST(TotalObjective, GradientAndZeroWeights) {
  const auto x0 = randn({3}, 19);
  auto r = check_scalar_fn(
      [&](const Var<double>& x) {
        return total_objective(sum(square(x)), sum(x), mean(mul(x, x)));
      },
      x0);
  EXPECT_LT(r.rel_err, 1e-6);

  LossWeights w;
  w.adv = 0.0;
  Var<double> a(scalar(1.0), true), b(scalar(1.0), true), c(scalar(1.0), true);
  const auto t = total_objective(a, b, c, w);
  EXPECT_DOUBLE_EQ(t.value()[0], 2.0);
  backward(t);
  EXPECT_EQ(a.grad()[0], 0.0);
  EXPECT_EQ(b.grad()[0], 1.0);
  EXPECT_EQ(c.grad()[0], 1.0);
}
