#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace dip {

struct SvmOptions {
  double c = 1.0;
  int max_epochs = 1000;
  double tol = 1e-4;  // spread of projected gradients at convergence
  std::uint64_t seed = 0;
};

/// Linear max-margin classifier over standardised features. Scores are
/// w·(x − mean)/scale + b; `normal()` is the hyperplane normal in raw input
/// coordinates.
struct LinearSvm {
  Eigen::VectorXd w;  // standardised coordinates
  double b = 0;
  Eigen::RowVectorXd mean, scale;
  int epochs = 0;

  Eigen::VectorXd decision(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd normal() const { return w.cwiseQuotient(scale.transpose()); }
};

/// Squared-hinge SVM fitted by dual coordinate descent. x is n×d, labels are
/// ±1. Throws NumericError when a feature has zero variance and
/// std::invalid_argument when a class is missing.
LinearSvm fit_linear_svm(const Eigen::MatrixXd& x, const Eigen::VectorXd& labels, const SvmOptions& opt = {});

}  // namespace dip
