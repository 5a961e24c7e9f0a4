#pragma once

// Small style-based generator: mapping MLP, modulated-convolution synthesis
// network with per-resolution feature injection hooks, and a convolutional
// discriminator.

#include "divinpaint/checkpoint.hpp"
#include "divinpaint/model_config.hpp"
#include "divinpaint/nn.hpp"

#include <map>
#include <ostream>

namespace dip {

/// Per-resolution feature residuals applied as g + g * mult + add.
template <typename Scalar>
struct SkipPair {
  Var<Scalar> mult;
  Var<Scalar> add;
};
template <typename Scalar>
using SkipMaps = std::map<int, SkipPair<Scalar>>;

/// Generator feature blocks keyed by spatial resolution, as fed to the next layer.
template <typename Scalar>
using FeaturePyramid = std::map<int, Var<Scalar>>;

template <typename Scalar>
struct Synthesis {
  Var<Scalar> image;  // [N,3,R,R] in [-1,1]
  FeaturePyramid<Scalar> features;
};

/// g + g * mult + add, elementwise. Shapes must match exactly.
template <typename Scalar>
Var<Scalar> inject(const Var<Scalar>& g_f, const SkipPair<Scalar>& maps);

template <typename Scalar>
class MappingNet {
 public:
  MappingNet(const ModelConfig& cfg, Rng& rng);

  /// z [N, z_dim] -> w [N, w_dim].
  Var<Scalar> forward(const Var<Scalar>& z) const;
  /// z [N, z_dim] -> style code [N, num_styles, w_dim] with every row equal to w.
  Var<Scalar> map(const Var<Scalar>& z) const;
  /// Broadcasts w [N, w_dim] to [N, num_styles, w_dim].
  Var<Scalar> broadcast(const Var<Scalar>& w) const;

  /// Mean w, stored as a buffer; used as the encoder's output offset.
  const Tensor<Scalar>& w_avg() const { return w_avg_.value(); }
  void update_w_avg(Rng& rng, int samples);

  ParamSet<Scalar>& params() { return ps_; }
  const ParamSet<Scalar>& params() const { return ps_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  ParamSet<Scalar> ps_;
  std::vector<Linear<Scalar>> layers_;
  Var<Scalar> w_avg_;
};

template <typename Scalar>
class Generator {
 public:
  Generator(const ModelConfig& cfg, Rng& rng);

  /// w [N, num_styles, w_dim]. Skip maps, when given, must be keyed by a subset
  /// of the injection resolutions and match the feature shapes there.
  Synthesis<Scalar> synthesize(const Var<Scalar>& w, const SkipMaps<Scalar>* skips = nullptr) const;

  /// Feature shape [C, r, r] at resolution r.
  Shape feature_shape(int res) const;

  ParamSet<Scalar>& params() { return ps_; }
  const ParamSet<Scalar>& params() const { return ps_; }
  const ModelConfig& config() const { return cfg_; }

 private:
  struct Level {
    ModulatedConv<Scalar> conv0, conv1;  // conv0 absent at 4x4
    ModulatedConv<Scalar> to_rgb;
  };
  ModelConfig cfg_;
  ParamSet<Scalar> ps_;
  Var<Scalar> const_input_;
  std::vector<Level> levels_;
};

template <typename Scalar>
class Discriminator {
 public:
  Discriminator(const ModelConfig& cfg, Rng& rng);

  /// img [N,3,R,R] -> logits [N].
  Var<Scalar> forward(const Var<Scalar>& img) const;

  ParamSet<Scalar>& params() { return ps_; }
  const ParamSet<Scalar>& params() const { return ps_; }

 private:
  ModelConfig cfg_;
  ParamSet<Scalar> ps_;
  Conv2d<Scalar> from_rgb_;
  std::vector<std::pair<Conv2d<Scalar>, Conv2d<Scalar>>> blocks_;
  Conv2d<Scalar> final_conv_;
  Linear<Scalar> fc_, out_;
};

/// Mapping + generator + discriminator, as stored in a base-GAN checkpoint.
struct BaseGan {
  explicit BaseGan(const ModelConfig& cfg, std::uint64_t seed = 0);
  ModelConfig cfg;
  MappingNet<float> mapping;
  Generator<float> generator;
  Discriminator<float> discriminator;

  void save_into(Checkpoint& ck) const;
  void load_from(const Checkpoint& ck);

  /// Convenience: n images from fresh z, no graph.
  Tensor<float> sample(Rng& rng, int n) const;
};

struct PretrainConfig {
  int steps = 3000;
  int batch = 16;
  double lr = 2e-3;
  double mapping_lr_mult = 0.01;
  double r1_gamma = 1.0;
  int r1_every = 4;
  double r1_eps = 1e-2;
  int log_every = 100;
  std::uint64_t seed = 0;

  static PretrainConfig from_config(const Config& c);
};

/// Logistic non-saturating GAN training on freshly rendered toy faces. The
/// gradient penalty on real images uses a directional finite-difference
/// estimate of the squared gradient norm. Throws NumericError on divergence.
Checkpoint pretrain_base_gan(const ModelConfig& mcfg, const PretrainConfig& pcfg,
                                    std::ostream* log = nullptr);

}  // namespace dip
