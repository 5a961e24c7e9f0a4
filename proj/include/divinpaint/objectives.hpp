#pragma once

// Loss terms for inversion training and the fixed feature network that
// supplies perceptual taps, evaluation embeddings and attribute predictions.

#include "divinpaint/model_config.hpp"
#include "divinpaint/nn.hpp"

#include <functional>
#include <ostream>

namespace dip {

/// Small convolutional attribute classifier. Three conv+avgpool stages give the
/// perceptual taps; a fully connected layer gives the embedding; a linear head
/// predicts the toy attributes (binary logits first, then regression targets).
template <typename Scalar>
class FeatureNet {
 public:
  struct Output {
    std::vector<Var<Scalar>> taps;  // post-pool activations, 3 entries
    Var<Scalar> embedding;          // [N, feature_dim]
    Var<Scalar> outputs;            // [N, kAttributeOutputs]
  };

  FeatureNet(const ModelConfig& cfg, Rng& rng);

  Output forward(const Var<Scalar>& img) const;
  std::vector<Var<Scalar>> taps(const Var<Scalar>& img) const { return forward(img).taps; }

  ParamSet<Scalar>& params() { return ps_; }
  const ParamSet<Scalar>& params() const { return ps_; }

 private:
  ModelConfig cfg_;
  ParamSet<Scalar> ps_;
  Conv2d<Scalar> c0_, c1_, c2_, c3_;
  Linear<Scalar> embed_, head_;
};

struct FeatureTrainConfig {
  int steps = 1500;
  int batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  /// Reads `features.*` keys and `seed`.
  static FeatureTrainConfig from_config(const Config& c);
};

/// Trains a FeatureNet on freshly rendered toy faces. Returns per-attribute
/// accuracy of the binary heads on a held-out batch, in kBinaryAttributes order.
std::vector<double> train_feature_net(FeatureNet<float>& net, const ModelConfig& cfg, const FeatureTrainConfig& tcfg,
                                      std::ostream* log = nullptr);

/// Maps an image batch to a list of feature taps.
template <typename Scalar>
using PerceptualFn = std::function<std::vector<Var<Scalar>>(const Var<Scalar>&)>;

template <typename Scalar>
PerceptualFn<Scalar> perceptual_of(const FeatureNet<Scalar>& net) {
  return [&net](const Var<Scalar>& x) { return net.taps(x); };
}

/// Sum over taps of the mean squared difference.
template <typename Scalar>
Var<Scalar> perceptual_distance(const std::vector<Var<Scalar>>& a, const std::vector<Var<Scalar>>& b);
template <typename Scalar>
Var<Scalar> perceptual_distance(const Var<Scalar>& a, const Var<Scalar>& b, const PerceptualFn<Scalar>& phi);

/// Per-sample variant for image batches: [N] distances.
template <typename Scalar>
Tensor<Scalar> perceptual_distance_per_sample(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                                              const PerceptualFn<Scalar>& phi);

struct LossWeights {
  double adv = 0.08;
  double rg = 1.0;
  double rr = 1.0;
  double pixel = 1.0;
  double perceptual = 5e-5;
};

template <typename Scalar>
struct ReconLoss {
  Var<Scalar> pixel;       // mean squared error
  Var<Scalar> perceptual;  // perceptual_distance (zero when no phi)
  Var<Scalar> total;       // pixel_w * pixel + perceptual_w * perceptual
};

/// Full-image reconstruction: out vs target.
template <typename Scalar>
ReconLoss<Scalar> loss_rg(const Var<Scalar>& out, const Var<Scalar>& target, const PerceptualFn<Scalar>& phi,
                          const LossWeights& w = {});

/// Valid-pixel reconstruction: M * out vs the erased input; the mask is applied
/// before both the pixel and the perceptual term.
template <typename Scalar>
ReconLoss<Scalar> loss_rr(const Var<Scalar>& out, const Var<Scalar>& erased_input, const Var<Scalar>& mask,
                          const PerceptualFn<Scalar>& phi, const LossWeights& w = {});

enum class AdvSide { discriminator, generator };

/// Adversarial value V = 2 log D(real) + log(1 - D(fake_g)) + log(1 - D(fake_r)),
/// averaged over the batch, with D = sigmoid(logit).
/// Discriminator side returns -V (to minimise). Generator side returns the two
/// fake terms, log(1 - D(fake_g)) + log(1 - D(fake_r)), to minimise.
/// An undefined fake Var drops that term (and the real weight becomes the
/// number of fake terms present).
template <typename Scalar>
Var<Scalar> loss_adv(const Var<Scalar>& d_real, const Var<Scalar>& d_fake_g, const Var<Scalar>& d_fake_r,
                     AdvSide side);

/// V itself, evaluated in the stable softplus form.
double adversarial_value(const Tensor<double>& d_real, const Tensor<double>& d_fake_g, const Tensor<double>& d_fake_r);

struct LossBreakdown {
  double l_rg = 0, l_rr = 0, l_adv_d = 0, l_adv_g = 0, total = 0;
  double rg_pixel = 0, rg_perceptual = 0, rr_pixel = 0, rr_perceptual = 0;
};

/// adv * l_adv_g + rg * l_rg + rr * l_rr
double total_objective(const LossBreakdown& parts, const LossWeights& w = {});
template <typename Scalar>
Var<Scalar> total_objective(const Var<Scalar>& l_adv, const Var<Scalar>& l_rg, const Var<Scalar>& l_rr,
                            const LossWeights& w = {});

}  // namespace dip
