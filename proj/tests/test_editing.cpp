#include "divinpaint/editing.hpp"
#include "divinpaint/inpaint_model.hpp"
#include "divinpaint/masking.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace dip;

namespace {

DirectionVector unit_direction(int dim, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> nd;
  DirectionVector d;
  d.name = "hat";
  d.vector.resize(dim);
  for (int i = 0; i < dim; ++i) d.vector[i] = nd(eng);
  d.vector.normalize();
  return d;
}

Tensor<double> random_code(Shape s, std::uint64_t seed) {
  Rng r(seed);
  return r.normal_tensor<double>(std::move(s));
}

struct Clusters {
  Eigen::MatrixXd w;
  std::vector<bool> labels;
};

Clusters separable(int n, int d, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> nd;
  Clusters c{Eigen::MatrixXd(2 * n, d), std::vector<bool>(2 * n)};
  for (int i = 0; i < 2 * n; ++i) {
    const bool pos = i < n;
    c.labels[i] = pos;
    for (int j = 0; j < d; ++j) c.w(i, j) = 0.3 * nd(eng);
    c.w(i, 0) += pos ? 2.0 : -2.0;
    c.w(i, 1) += pos ? 1.0 : -1.0;
  }
  return c;
}

}  // namespace

TEST(ApplyEdit, ZeroStrengthAndRoundTrip) {
  const auto d = unit_direction(8, 1);
  const auto w = random_code({3, 6, 8}, 2);
  EXPECT_EQ(apply_edit(w, d, 0.0), w);
  for (double a : {0.25, 1.0, 3.7, 120.0}) {
    const auto back = apply_edit(apply_edit(w, d, a), d, -a);
    EXPECT_LE((back.array() - w.array()).abs().maxCoeff(), 1e-12) << a;
  }
}

TEST(ApplyEdit, LinearInStrengthAndScoped) {
  auto d = unit_direction(4, 3);
  const auto w = random_code({5, 4}, 4);
  const auto ab = apply_edit(apply_edit(w, d, 0.5), d, 1.25);
  const auto once = apply_edit(w, d, 1.75);
  EXPECT_LE((ab.array() - once.array()).abs().maxCoeff(), 1e-12);

  d.scope = EditScope::style_subset;
  d.styles = {1, 3};
  const auto sub = apply_edit(w, d, 2.0);
  for (int s = 0; s < 5; ++s)
    for (int j = 0; j < 4; ++j) {
      const double want = w[s * 4 + j] + (s == 1 || s == 3 ? 2.0 * d.vector[j] : 0.0);
      EXPECT_DOUBLE_EQ(sub[s * 4 + j], want);
    }
  EXPECT_THROW(apply_edit(random_code({5, 3}, 5), d, 1.0), DimensionError);
}

TEST(ApplyEdits, OppositeStrengthsCancelExactlyInFloat) {
  const auto d = unit_direction(8, 6);
  const std::vector<DirectionVector> dirs{d};
  const auto w = Rng(7).normal_tensor<float>({2, 6, 8});
  EXPECT_EQ(apply_edits(w, dirs, {{"hat", 0.37}, {"hat", -0.37}}), w);
  EXPECT_EQ(apply_edits(w, dirs, {}), w);
  EXPECT_THROW(apply_edits(w, dirs, {{"beard", 1.0}}), UnknownDirectionError);
  const auto one = apply_edits(w, dirs, {{"hat", 2.0}});
  const auto direct = apply_edit(w, d, 2.0);
  EXPECT_LE((one.array() - direct.array()).abs().maxCoeff(), 1e-6f);
}

TEST(LearnDirection, SeparableClustersAndAntisymmetry) {
  const auto c = separable(50, 6, 8);
  const auto d = learn_direction("hat", c.w, c.labels);
  EXPECT_NEAR(d.vector.norm(), 1.0, 1e-9);
  const Eigen::VectorXd proj = c.w * d.vector;
  // Classification by projection against the midpoint of the class means.
  const double pos_mean = proj.head(50).mean(), neg_mean = proj.tail(50).mean();
  EXPECT_GT(pos_mean, neg_mean);
  const double cut = 0.5 * (pos_mean + neg_mean);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(proj[i] > cut, static_cast<bool>(c.labels[i])) << i;
  EXPECT_GT(d.sigma, 0.0);

  std::vector<bool> flipped(c.labels.size());
  for (std::size_t i = 0; i < flipped.size(); ++i) flipped[i] = !c.labels[i];
  EXPECT_NEAR(d.vector.dot(learn_direction("hat", c.w, flipped).vector), -1.0, 1e-9);

  const auto scaled = learn_direction("hat", 4.0 * c.w, c.labels);
  EXPECT_NEAR(d.vector.dot(scaled.vector), 1.0, 1e-9);
}

TEST(LearnDirection, SingleClassRaises) {
  const auto c = separable(10, 3, 9);
  EXPECT_THROW(learn_direction("hat", c.w, std::vector<bool>(20, true)), std::invalid_argument);
  std::vector<bool> one(20, false);
  one[3] = true;
  EXPECT_THROW(learn_direction("hat", c.w, one), std::invalid_argument);
}

TEST(Directions, JsonRoundTripAndLookup) {
  auto a = unit_direction(8, 10);
  a.sigma = 0.73;
  auto b = unit_direction(8, 11);
  b.name = "smile";
  b.scope = EditScope::style_subset;
  b.styles = {0, 2};
  const auto path = (std::filesystem::temp_directory_path() / "dip_dirs_test.json").string();
  save_directions(path, {a, b});
  const auto back = load_directions(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].vector, a.vector);
  EXPECT_EQ(back[0].sigma, 0.73);
  EXPECT_EQ(back[1].scope, EditScope::style_subset);
  EXPECT_EQ(back[1].styles, (std::vector<int>{0, 2}));
  EXPECT_EQ(&find_direction(back, "smile"), &back[1]);
  EXPECT_THROW(find_direction(back, "beard"), UnknownDirectionError);
  EXPECT_THROW(directions_from_json(R"({"format_version":1,"directions":[{"name":"x","vector":[1,1]}]})"),
               std::invalid_argument);
}

TEST(Editing, EditedCompositeKeepsValidPixels) {
  InpaintModel m(ModelConfig::profile("tiny"), AblationFlags::from_id(5), 3);
  const int r = m.cfg.resolution;
  Rng rng(12);
  const auto img = rng.normal_tensor<float>({2, 3, r, r}, 0.5);
  const auto mask = sample_mask_batch(MaskBand{0.3, 0.6}, r, 2, rng);
  const auto z = m.random_z(rng, 2);
  auto d = unit_direction(m.cfg.w_dim, 13);
  const std::vector<DirectionVector> dirs{d};
  const auto plain = m.complete(img, mask, z);
  const auto edited = m.complete_from_code(img, mask, m.encode(img, mask), z, [&](const Tensor<float>& w) {
    return apply_edits(w, dirs, {{"hat", 3.0}});
  });
  EXPECT_EQ(erase(edited.final, mask), erase(img, mask));
  EXPECT_FALSE(edited.final == plain.final);
  const auto whole = m.complete_from_code(img, mask, m.encode(img, mask), z, nullptr, false);
  EXPECT_EQ(whole.final, whole.raw);
}

TEST(Editing, AttributeDirectionsOnUntrainedNetworks) {
  const auto c = ModelConfig::profile("tiny");
  Rng r1(1), r2(2), r3(3);
  MappingNet<float> map(c, r1);
  Generator<float> gen(c, r2);
  FeatureNet<float> feat(c, r3);
  DirectionTrainConfig cfg;
  cfg.samples = 200;
  cfg.batch = 50;
  EXPECT_THROW(learn_attribute_directions(map, gen, feat, {"beard"}, cfg), UnknownDirectionError);
  // An untrained classifier may put every sample in one class; both outcomes are legal.
  try {
    const auto dirs = learn_attribute_directions(map, gen, feat, {"hat"}, cfg);
    ASSERT_EQ(dirs.size(), 1u);
    EXPECT_NEAR(dirs[0].vector.norm(), 1.0, 1e-9);
    EXPECT_EQ(dirs[0].vector.size(), c.w_dim);
  } catch (const std::invalid_argument&) {
  }
}
