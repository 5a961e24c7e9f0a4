#include "divinpaint/image_io.hpp"
#include "divinpaint/masking.hpp"
#include "gradcheck.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace dip;

namespace {

Tensor<float> random_image(Rng& rng, Shape s) {
  Tensor<float> t(std::move(s));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

Tensor<float> from_rows(Shape s, std::vector<float> v) {
  Tensor<float> t(std::move(s));
  for (std::size_t i = 0; i < v.size(); ++i) t[static_cast<Eigen::Index>(i)] = v[i];
  return t;
}

}  // namespace

TEST(MaskBand, ParseAndValidate) {
  const auto b = MaskBand::parse("0.4,1.0");
  EXPECT_DOUBLE_EQ(b.lo, 0.4);
  EXPECT_DOUBLE_EQ(b.hi, 1.0);
  EXPECT_THROW(MaskBand::parse("0.5,0.5"), std::invalid_argument);
  EXPECT_THROW(MaskBand::parse("0.5"), std::invalid_argument);
  EXPECT_THROW(MaskBand::parse("-0.1,0.3"), std::invalid_argument);
  EXPECT_THROW(MaskBand::parse("x,y"), std::invalid_argument);
}

TEST(SampleMask, EasyBandContractAndBinary) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto m = sample_mask(kEasyBand, 32, seed);
    ASSERT_EQ(m.shape(), (Shape{1, 32, 32}));
    EXPECT_TRUE(is_binary(m));
    const double r = erased_ratio(m);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 0.4);
  }
}

TEST(SampleMask, DeterministicInSeed) {
  EXPECT_EQ(sample_mask(kDifficultBand, 32, 11), sample_mask(kDifficultBand, 32, 11));
  EXPECT_FALSE(sample_mask(kDifficultBand, 32, 11) == sample_mask(kDifficultBand, 32, 12));
}

TEST(SampleMask, DifficultBandSpread) {
  Rng rng(3);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double r = erased_ratio(sample_mask(kDifficultBand, 32, rng));
    ASSERT_GE(r, 0.4);
    ASSERT_LE(r, 1.0);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  EXPECT_GE(hi - lo, 0.5 * (1.0 - 0.4));
}

TEST(SampleMask, InfeasibleBandRaises) {
  // 4x4 ratios move in steps of 1/16, so none lands in [0.9, 0.93].
  Rng rng(1);
  EXPECT_THROW(sample_mask(MaskBand{0.9, 0.93}, 4, rng, 50), MaskSamplingError);
}

TEST(Erase, HandExample) {
  const auto img = from_rows({1, 2, 2}, {1, -1, 0.5f, 0});
  const auto m = from_rows({1, 2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(erase(img, m), from_rows({1, 2, 2}, {1, 0, 0, 0}));
}

TEST(Erase, IdentityZeroAndIdempotence) {
  Rng rng(5);
  const auto img = random_image(rng, {3, 8, 8});
  EXPECT_EQ(erase(img, Tensor<float>::ones({1, 8, 8})), img);
  EXPECT_TRUE((erase(img, Tensor<float>::zeros({1, 8, 8})).array() == 0.0f).all());
  const auto m = sample_mask(MaskBand{0.0, 1.0}, 8, 9);
  EXPECT_EQ(erase(erase(img, m), m), erase(img, m));
}

TEST(Erase, ShapeMismatch) {
  EXPECT_THROW(erase(Tensor<float>({3, 8, 8}), Tensor<float>({1, 4, 4})), DimensionError);
  EXPECT_THROW(erase(Tensor<float>({3, 8, 8}), Tensor<float>({3, 8, 8})), DimensionError);
  EXPECT_THROW(erase(Tensor<float>({2, 3, 8, 8}), Tensor<float>({1, 1, 8, 8})), DimensionError);
}

TEST(ComposeFinal, HandExample) {
  const auto in = from_rows({1, 2, 2}, {1, 1, 1, 1});
  const auto gen = from_rows({1, 2, 2}, {0, 0, 0, 0});
  const auto m = from_rows({1, 2, 2}, {1, 0, 1, 0});
  EXPECT_EQ(compose_final(in, m, gen), from_rows({1, 2, 2}, {1, 0, 1, 0}));
}

TEST(ComposeFinal, ExactnessComplementPartition) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = random_image(rng, {2, 3, 16, 16});
    const auto gen = random_image(rng, {2, 3, 16, 16});
    const auto m = sample_mask_batch(MaskBand{0.0, 1.0}, 16, 2, rng);
    Tensor<float> inv = m;
    inv.array() = 1.0f - inv.array();
    const auto out = compose_final(in, m, gen);
    EXPECT_EQ(erase(out, m), erase(in, m));
    EXPECT_EQ(erase(out, inv), erase(gen, inv));
    Tensor<float> parts = erase(in, m);
    parts.array() += erase(gen, inv).array();
    EXPECT_EQ(out, parts);
  }
  const auto in = random_image(rng, {3, 4, 4});
  const auto gen = random_image(rng, {3, 4, 4});
  EXPECT_EQ(compose_final(in, Tensor<float>::ones({1, 4, 4}), gen), in);
  EXPECT_EQ(compose_final(in, Tensor<float>::zeros({1, 4, 4}), gen), gen);
}

TEST(ComposeFinal, DifferentiableFormMatchesAndRoutesGradients) {
  Rng rng(8);
  const auto in = random_image(rng, {1, 3, 6, 6});
  const auto gen = random_image(rng, {1, 3, 6, 6});
  const auto m = sample_mask_batch(MaskBand{0.2, 0.8}, 6, 1, rng);
  Var<float> g(gen, true);
  Var<float> out = compose_final(constant(in), constant(m), g);
  EXPECT_EQ(out.value(), compose_final(in, m, gen));
  backward(sum(out));
  const auto grad = g.grad();
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 36; ++p) EXPECT_EQ(grad[c * 36 + p], 1.0f - m[p]);
}

TEST(MaskPng, RoundTripAndRejectsGray) {
  const auto m = sample_mask(MaskBand{0.2, 0.6}, 13, 4);
  EXPECT_EQ(decode_png_mask(encode_png_mask(m)), m);
  Tensor<float> gray({3, 4, 4}, 0.0f);
  gray[5] = 0.5f;
  EXPECT_THROW(decode_png_mask(encode_png_rgb(gray)), ImageFormatError);
}
