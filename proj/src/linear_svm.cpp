#include "divinpaint/linear_svm.hpp"

#include "divinpaint/rng.hpp"
#include "divinpaint/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace dip {

Eigen::VectorXd LinearSvm::decision(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd z = (x.rowwise() - mean).array().rowwise() / scale.array();
  return (z * w).array() + b;
}

LinearSvm fit_linear_svm(const Eigen::MatrixXd& x, const Eigen::VectorXd& labels, const SvmOptions& opt) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (labels.size() != n) throw DimensionError("svm: label count differs from sample count");
  if (n == 0 || d == 0) throw DimensionError("svm: empty training set");
  int pos = 0, neg = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] == 1.0) ++pos;
    else if (labels[i] == -1.0) ++neg;
    else throw std::invalid_argument("svm labels must be +1 or -1");
  }
  if (pos == 0 || neg == 0) throw std::invalid_argument("svm needs samples from both classes");

  LinearSvm m;
  m.mean = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - m.mean;
  m.scale = (centred.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(m.scale[j] > 1e-12 * (1.0 + std::abs(m.mean[j])))) {
      throw NumericError("svm: feature " + std::to_string(j) + " has zero variance");
    }
  }
  // Standardised features with a constant column for the bias.
  Eigen::MatrixXd z(n, d + 1);
  z.leftCols(d) = centred.array().rowwise() / m.scale.array();
  z.col(d).setOnes();

  const double diag = 0.5 / opt.c;
  const Eigen::VectorXd q = z.rowwise().squaredNorm().array() + diag;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n), v = Eigen::VectorXd::Zero(d + 1);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(opt.seed);
  for (m.epochs = 0; m.epochs < opt.max_epochs;) {
    ++m.epochs;
    for (Eigen::Index i = n - 1; i > 0; --i) std::swap(order[i], order[rng.next_u64() % (i + 1)]);
    double pg_max = -INFINITY, pg_min = INFINITY;
    for (const Eigen::Index i : order) {
      const double g = labels[i] * z.row(i).dot(v) - 1.0 + diag * alpha[i];
      const double pg = alpha[i] == 0.0 ? std::min(g, 0.0) : g;
      pg_max = std::max(pg_max, pg);
      pg_min = std::min(pg_min, pg);
      if (std::abs(pg) > 1e-12) {
        const double old = alpha[i];
        alpha[i] = std::max(old - g / q[i], 0.0);
        v += (alpha[i] - old) * labels[i] * z.row(i).transpose();
      }
    }
    if (pg_max - pg_min < opt.tol) break;
  }
  m.w = v.head(d);
  m.b = v[d];
  return m;
}

}  // namespace dip
