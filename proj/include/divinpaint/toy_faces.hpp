#pragma once

// Procedural "schematic face" corpus standing in for a real face dataset.
// Every image is a pure function of its parameters, and the parameters double
// as attribute labels for editing directions and the evaluation classifier.

#include "divinpaint/rng.hpp"
#include "divinpaint/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace dip {

struct FaceParams {
  double background_hue = 0.0;  // [0,1)
  bool round_face = true;
  double eye_spacing = 0.35;  // fraction of face half-width, [0.25, 0.5]
  bool smile = true;          // false = frown
  bool hat = false;
  bool dark_hair = true;
  // Nuisance factors, not labels.
  double center_x = 0.5, center_y = 0.56, face_radius = 0.25;
  double skin_tone = 0.5;
  int hat_color = 0;
};

FaceParams sample_face(Rng& rng);

/// Renders [3,res,res] in [-1,1] with 4x4 supersampling.
Tensor<float> render_face(const FaceParams& p, int res);

/// Binary labels predicted by the attribute classifier, in this order.
inline constexpr std::array<const char*, 4> kBinaryAttributes = {"hat", "smile", "round_face", "dark_hair"};
/// Regression targets: eye spacing (standardised), cos/sin of background hue.
inline constexpr int kRegressionTargets = 3;
inline constexpr int kAttributeOutputs = static_cast<int>(kBinaryAttributes.size()) + kRegressionTargets;

/// Target vector matching the classifier's output layout (binary in {0,1} first).
std::array<float, kAttributeOutputs> attribute_targets(const FaceParams& p);
/// Position in kBinaryAttributes, or -1.
int binary_attribute_index(const std::string& name);

/// Batch of n freshly sampled faces: images [n,3,res,res], params alongside.
struct FaceBatch {
  Tensor<float> images;
  std::vector<FaceParams> params;
};
FaceBatch sample_face_batch(Rng& rng, int n, int res);

/// Writes face_00000.png ... plus attributes.csv into dir. Deterministic in seed.
void write_corpus(const std::string& dir, int count, int res, std::uint64_t seed);

std::string attributes_csv_header();
std::string attributes_csv_row(const std::string& filename, const FaceParams& p);

}  // namespace dip
