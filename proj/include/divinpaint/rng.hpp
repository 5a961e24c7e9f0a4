#pragma once

#include "divinpaint/tensor.hpp"

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace dip {

/// Seeded generator shared by every stochastic component. State round-trips
/// through a string so checkpoints can resume a trajectory exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next_u64() { return engine_(); }

  /// Child generator whose stream is a pure function of this one's next draw.
  Rng fork() { return Rng(next_u64()); }

  template <typename Scalar>
  Tensor<Scalar> normal_tensor(Shape shape, double stddev = 1.0) {
    Tensor<Scalar> t(std::move(shape));
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(normal() * stddev);
    return t;
  }

  std::string state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace dip
