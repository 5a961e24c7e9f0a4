#pragma once

// Linear attribute directions in the style space and their application to
// mixer outputs.

#include "divinpaint/linear_svm.hpp"
#include "divinpaint/objectives.hpp"
#include "divinpaint/stylegan_lite.hpp"

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace dip {

class UnknownDirectionError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

enum class EditScope { all_styles, style_subset };

struct DirectionVector {
  std::string name;
  Eigen::VectorXd vector;  // unit norm, length w_dim
  EditScope scope = EditScope::all_styles;
  std::vector<int> styles;  // used with style_subset
  double sigma = 1.0;       // std of training codes projected on `vector`

  bool touches(int style) const;
};

/// Unit normal of a max-margin hyperplane separating rows of w by label.
/// Needs at least two samples per class.
DirectionVector learn_direction(const std::string& name, const Eigen::MatrixXd& w, const std::vector<bool>& labels,
                                const SvmOptions& opt = {});

/// Shifts the scoped rows of w ([S,D] or [N,S,D]) by strength·vector.
template <typename Scalar>
Tensor<Scalar> apply_edit(const Tensor<Scalar>& w, const DirectionVector& d, double strength);

struct AppliedEdit {
  std::string direction;
  double strength = 0;
};

/// Applies a list of edits with the per-row offset accumulated in double
/// precision first, so opposite strengths cancel exactly.
Tensor<float> apply_edits(const Tensor<float>& w, const std::vector<DirectionVector>& dirs,
                          const std::vector<AppliedEdit>& edits);

const DirectionVector& find_direction(const std::vector<DirectionVector>& dirs, const std::string& name);

struct DirectionTrainConfig {
  int samples = 5000;
  int batch = 64;
  std::uint64_t seed = 77;
};
/// Samples codes from the mapping network, labels their syntheses with the
/// attribute classifier and fits one direction per binary attribute.
/// Attributes the classifier never (or always) predicts are left out and
/// named in `skipped` when given; without it they raise.
std::vector<DirectionVector> learn_attribute_directions(const MappingNet<float>& mapping,
                                                        const Generator<float>& generator,
                                                        const FeatureNet<float>& features,
                                                        const std::vector<std::string>& attributes,
                                                        const DirectionTrainConfig& cfg,
                                                        std::vector<std::string>* skipped = nullptr);

/// Fraction of fresh samples classified without the attribute whose edit by
/// +sigmas·sigma makes the classifier predict it.
struct FlipProbe {
  int probes = 0;
  double flip_rate = 0;
};
FlipProbe attribute_flip_rate(const MappingNet<float>& mapping, const Generator<float>& generator,
                              const FeatureNet<float>& features, const DirectionVector& d, double sigmas, int probes,
                              std::uint64_t seed, int batch = 64);

std::string directions_to_json(const std::vector<DirectionVector>& dirs);
std::vector<DirectionVector> directions_from_json(const std::string& text);
void save_directions(const std::string& path, const std::vector<DirectionVector>& dirs);
std::vector<DirectionVector> load_directions(const std::string& path);

}  // namespace dip
