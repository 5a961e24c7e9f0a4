#pragma once

#include "divinpaint/autograd.hpp"
#include "divinpaint/rng.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dip {

/// Ordered collection of named parameters (trainable) and buffers (never trained)
/// belonging to one network.
template <typename Scalar>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Var<Scalar> var;
    bool buffer = false;
  };

  Var<Scalar> add(const std::string& name, Tensor<Scalar> init);
  Var<Scalar> add_buffer(const std::string& name, Tensor<Scalar> init);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Var<Scalar>> trainable() const;
  const Entry* find(const std::string& name) const;

  void set_trainable(bool on);
  bool is_trainable() const { return trainable_; }
  void zero_grad();
  std::int64_t numel() const;

  /// FNV-1a over names and raw parameter bytes; equal iff bit-identical.
  std::uint64_t fingerprint() const;

  /// Copies values by name from a set of possibly different scalar type.
  template <typename Other>
  void assign_from(const ParamSet<Other>& other);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  bool trainable_ = true;
};

template <typename Scalar>
template <typename Other>
void ParamSet<Scalar>::assign_from(const ParamSet<Other>& other) {
  for (auto& e : entries_) {
    const auto* src = other.find(e.name);
    if (!src) throw DimensionError("assign_from: missing parameter " + e.name);
    if (src->var.shape() != e.var.shape()) {
      throw DimensionError("assign_from: shape mismatch for " + e.name);
    }
    e.var.mutable_value() = src->var.value().template cast<Scalar>();
  }
}

/// He-style initialisation scale for a layer with the given fan-in.
inline double he_std(int fan_in, double gain = std::sqrt(2.0)) {
  return gain / std::sqrt(static_cast<double>(fan_in));
}

/// Runtime weight multiplier. Equalized layers store unit-variance weights and
/// apply their init scale here, so Adam steps are commensurate across layers.
template <typename Scalar>
Var<Scalar> scaled_weight(const Var<Scalar>& w, Scalar gain) {
  return gain == Scalar(1) ? w : scale(w, gain);
}

template <typename Scalar>
struct Linear {
  Var<Scalar> weight;  // [out, in]
  Var<Scalar> bias;    // [out] or undefined
  Scalar gain = 1;

  Linear() = default;
  Linear(ParamSet<Scalar>& ps, const std::string& name, int in, int out, Rng& rng,
         double init_std, bool with_bias = true, double bias_init = 0.0, bool equalized = false);
  Var<Scalar> operator()(const Var<Scalar>& x) const { return linear(x, scaled_weight(weight, gain), bias); }
  int in_features() const { return weight.dim(1); }
  int out_features() const { return weight.dim(0); }
};

template <typename Scalar>
struct Conv2d {
  Var<Scalar> weight;  // [out, in, k, k]
  Var<Scalar> bias;    // [1, out, 1, 1] or undefined
  Scalar gain = 1;

  Conv2d() = default;
  Conv2d(ParamSet<Scalar>& ps, const std::string& name, int in, int out, int k, Rng& rng,
         double init_std, bool with_bias = true, bool equalized = false);
  Var<Scalar> operator()(const Var<Scalar>& x) const {
    Var<Scalar> y = conv2d(x, scaled_weight(weight, gain));
    return bias.defined() ? add(y, bias) : y;
  }
};

/// Weight-modulated convolution: per-sample input-channel scaling by a style,
/// shared convolution, optional per-sample output demodulation.
template <typename Scalar>
struct ModulatedConv {
  Linear<Scalar> affine;  // style -> per-input-channel scales
  Var<Scalar> weight;     // [out, in, k, k]
  Var<Scalar> bias;       // [1, out, 1, 1]
  Scalar gain = 1;
  bool demodulate = true;

  ModulatedConv() = default;
  /// Always equalized.
  ModulatedConv(ParamSet<Scalar>& ps, const std::string& name, int w_dim, int in, int out, int k,
                Rng& rng, bool demod);
  /// x: [N, in, H, W], style: [N, w_dim]
  Var<Scalar> operator()(const Var<Scalar>& x, const Var<Scalar>& style) const;
};

template <typename Scalar>
struct BatchNorm2d {
  Var<Scalar> gamma, beta;
  Var<Scalar> running_mean, running_var;  // buffers

  BatchNorm2d() = default;
  BatchNorm2d(ParamSet<Scalar>& ps, const std::string& name, int channels);
  Var<Scalar> operator()(const Var<Scalar>& x, bool training) const {
    return batch_norm(x, gamma, beta, running_mean.node()->value, running_var.node()->value, training);
  }
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var<Scalar>> params, AdamOptions opt = {});

  /// Applies one update with the given learning rate and clears gradients.
  /// Returns the global L2 norm of the gradients consumed.
  double step(double lr);
  void zero_grad();
  long steps_taken() const { return t_; }

 private:
  std::vector<Var<Scalar>> params_;
  std::vector<typename Tensor<Scalar>::Array> m_, v_;
  AdamOptions opt_;
  long t_ = 0;
};

}  // namespace dip
