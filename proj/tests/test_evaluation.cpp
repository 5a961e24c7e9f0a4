#include "divinpaint/evaluation.hpp"
#include "divinpaint/linear_svm.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace dip;

namespace {

FeatureSet gaussian(int n, int d, double mean, double sd, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> nd(mean, sd);
  FeatureSet x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = nd(eng);
  return x;
}

// Stratified draws: the i-th sample is the (i + 1/2)/n quantile of N(mean, sd^2).
FeatureSet gaussian_quantiles(int n, double mean, double sd) {
  FeatureSet x(n, 1);
  for (int i = 0; i < n; ++i) {
    const double u = (i + 0.5) / n;
    x(i, 0) = mean + sd * std::sqrt(2.0) * boost::math::erf_inv(2.0 * u - 1.0);
  }
  return x;
}

InpaintModel tiny_model() { return InpaintModel(ModelConfig::profile("tiny"), AblationFlags::from_id(5), 3); }

}  // namespace

TEST(Fid, IdenticalSetsGiveZero) {
  const auto x = gaussian(400, 8, 0.3, 1.7, 1);
  EXPECT_LT(std::abs(fid(x, x)), 1e-6);
}

TEST(Fid, OneDimensionalClosedForms) {
  const auto a = gaussian_quantiles(50000, 0.0, 1.0);
  EXPECT_NEAR(fid(a, gaussian_quantiles(50000, 1.0, 1.0)), 1.0, 1e-2);
  EXPECT_NEAR(fid(a, gaussian_quantiles(50000, 0.0, 2.0)), 1.0, 1e-2);
}

TEST(Fid, KnownTwoDimensionalValue) {
  // Exact moments: means (0,0) vs (1,2); covariances diag(1,4) vs diag(4,1).
  // 1 + 4 + (1 + 4 + 4 + 1) - 2 * (2 + 2) = 7.
  FeatureSet a(4, 2), b(4, 2);
  const double s = std::sqrt(3.0 / 4.0);  // unbiased variance of {+-1 x4} is 4/3
  a << 1, 2, -1, -2, 1, -2, -1, 2;
  b << 2, 1, -2, -1, 2, -1, -2, 1;
  a *= s;
  b *= s;
  b.col(0).array() += 1.0;
  b.col(1).array() += 2.0;
  EXPECT_NEAR(fid(a, b), 7.0, 1e-12);
}

TEST(Fid, SymmetricAndTranslationInvariant) {
  const auto a = gaussian(300, 6, 0.0, 1.0, 5), b = gaussian(300, 6, 0.4, 1.3, 6);
  const double ab = fid(a, b);
  EXPECT_LT(std::abs(ab - fid(b, a)), 1e-8);
  Eigen::RowVectorXd shift = Eigen::RowVectorXd::LinSpaced(6, -3.0, 5.0);
  const FeatureSet as = a.rowwise() + shift, bs = b.rowwise() + shift;
  EXPECT_LT(std::abs(ab - fid(as, bs)), 1e-8);
  EXPECT_GT(ab, 0.0);
}

TEST(Fid, TooFewSamplesRaises) {
  const auto a = gaussian(8, 8, 0, 1, 7);
  EXPECT_THROW(fid(a, gaussian(100, 8, 0, 1, 8)), std::invalid_argument);
  EXPECT_THROW(fid(gaussian(100, 8, 0, 1, 8), gaussian(100, 7, 0, 1, 8)), DimensionError);
}

TEST(Svm, SeparableClustersAreClassifiedPerfectly) {
  const auto pos = gaussian(100, 3, 4.0, 0.5, 9), neg = gaussian(100, 3, -4.0, 0.5, 10);
  FeatureSet x(200, 3);
  x << pos, neg;
  Eigen::VectorXd y(200);
  y.head(100).setOnes();
  y.tail(100).setConstant(-1);
  const auto svm = fit_linear_svm(x, y);
  const Eigen::VectorXd s = svm.decision(x);
  for (int i = 0; i < 200; ++i) EXPECT_GT(s[i] * y[i], 0.0) << i;
  const auto flipped = fit_linear_svm(x, -y);
  EXPECT_NEAR(svm.normal().normalized().dot(flipped.normal().normalized()), -1.0, 1e-12);
}

TEST(Svm, ScaleInvariantNormalAndErrors) {
  const auto pos = gaussian(60, 4, 0.5, 1.0, 11), neg = gaussian(60, 4, -0.5, 1.0, 12);
  FeatureSet x(120, 4);
  x << pos, neg;
  Eigen::VectorXd y(120);
  y.head(60).setOnes();
  y.tail(60).setConstant(-1);
  const auto a = fit_linear_svm(x, y), b = fit_linear_svm(7.5 * x, y);
  EXPECT_NEAR(a.normal().normalized().dot(b.normal().normalized()), 1.0, 1e-9);
  EXPECT_THROW(fit_linear_svm(x, Eigen::VectorXd::Ones(120)), std::invalid_argument);
  FeatureSet flat = x;
  flat.col(2).setConstant(3.0);
  EXPECT_THROW(fit_linear_svm(flat, y), NumericError);
}

TEST(Ids, DuplicatedSetsAreIndistinguishable) {
  const auto x = gaussian(500, 8, 0.0, 1.0, 13);
  const auto s = ids_scores(x, x, true);
  EXPECT_GE(s.u_ids, 0.45);
  EXPECT_LE(s.u_ids, 0.5);
  EXPECT_NEAR(s.p_ids, 0.5, 1e-12);
}

TEST(Ids, SeparableClustersScoreZero) {
  const auto real = gaussian(300, 5, 3.0, 0.5, 14), fake = gaussian(300, 5, -3.0, 0.5, 15);
  const auto s = ids_scores(real, fake, true);
  EXPECT_EQ(s.u_ids, 0.0);
  EXPECT_EQ(s.p_ids, 0.0);
  const auto swapped = ids_scores(fake, real, true);
  EXPECT_EQ(swapped.u_ids, 0.0);
}

TEST(Ids, RangesAndErrors) {
  const auto real = gaussian(200, 4, 0.0, 1.0, 16), fake = gaussian(200, 4, 0.3, 1.0, 17);
  const auto s = ids_scores(real, fake, true);
  EXPECT_GE(s.u_ids, 0.0);
  EXPECT_LE(s.u_ids, 0.5 + 1e-9);
  EXPECT_GE(s.p_ids, 0.0);
  EXPECT_LE(s.p_ids, 1.0);
  FeatureSet flat = real;
  flat.col(1).setZero();
  FeatureSet flat_fake = fake;
  flat_fake.col(1).setZero();
  EXPECT_THROW(ids_scores(flat, flat_fake, false), NumericError);
  EXPECT_THROW(ids_scores(real, gaussian(100, 4, 0, 1, 18), true), DimensionError);
}

TEST(Diversity, DeterministicOrFullyValidGivesZero) {
  auto m = tiny_model();
  const int r = m.cfg.resolution;
  const auto images = held_out_images(6, r, 1);
  Rng mrng(2);
  const auto masks = sample_mask_batch(MaskBand{0.3, 0.7}, r, 6, mrng);
  const auto phi = m.perceptual();

  const Tensor<float> fixed_z = Rng(3).normal_tensor<float>({6, m.cfg.z_dim});
  CompletionFn fixed = [&](const Tensor<float>& i, const Tensor<float>& k, Rng&) {
    return m.complete(i, k, fixed_z.batch_slice(0, i.dim(0))).final;
  };
  Rng rng(4);
  EXPECT_LT(diversity_lpips(fixed, phi, images, masks, rng, 6), 1e-6);
  EXPECT_EQ(diversity_lpips(completion_fn(m), phi, images, Tensor<float>::ones(masks.shape()), rng, 4), 0.0);
  EXPECT_GT(diversity_lpips(completion_fn(m), phi, images, masks, rng, 4), 0.0);
}

TEST(Sweep, BandsLabelsAndPreconditions) {
  auto m = tiny_model();
  SweepOptions opt;
  opt.n_per_band = m.cfg.feature_dim + 4;
  opt.batch = 5;
  const std::vector<MaskBand> bands{{0.0, 0.4}, {0.4, 1.0}};
  const auto rep = difficulty_sweep(m, bands, opt);
  ASSERT_EQ(rep.bands.size(), 2u);
  EXPECT_EQ(rep.bands[0].band.label(), bands[0].label());
  EXPECT_EQ(rep.bands[1].band.label(), bands[1].label());
  EXPECT_EQ(rep.samples, 2 * opt.n_per_band);
  for (const auto& b : rep.bands) {
    EXPECT_TRUE(std::isfinite(b.fid));
    EXPECT_GE(b.lpips_diversity, 0.0);
  }
  EXPECT_EQ(rep.config_hash.size(), 16u);
  EXPECT_EQ(rep.config_hash, metrics_config_hash(m, [&] {
              auto o = opt;
              o.resolution = m.cfg.resolution;
              return o;
            }()));

  const auto back = MetricsReport::from_text(rep.to_text());
  EXPECT_EQ(back.config_hash, rep.config_hash);
  ASSERT_EQ(back.bands.size(), 2u);
  EXPECT_NEAR(back.bands[1].fid, rep.bands[1].fid, 1e-8 * std::max(1.0, rep.bands[1].fid));
  EXPECT_EQ(back.bands[1].band.label(), "0.4,1");

  opt.n_per_band = m.cfg.feature_dim;
  EXPECT_THROW(difficulty_sweep(m, bands, opt), std::invalid_argument);
}

TEST(PathAsymmetry, ReturnsFiniteErrors) {
  auto m = tiny_model();
  const auto e = path_asymmetry(m, 5, MaskBand{0.2, 0.6}, 1, 2);
  EXPECT_TRUE(std::isfinite(e.same_z));
  EXPECT_TRUE(std::isfinite(e.fresh_z));
  EXPECT_GT(e.fresh_z, 0.0);
}
