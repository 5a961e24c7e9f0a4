#pragma once

// Distribution and diversity metrics over embeddings of the frozen feature
// network: Fréchet distance, paired perceptual diversity, SVM-based
// discriminability scores, and per-mask-band sweeps.

#include "divinpaint/inpaint_model.hpp"
#include "divinpaint/masking.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace dip {

/// n × d embedding matrix.
using FeatureSet = Eigen::MatrixXd;

/// Embeddings of an image batch, computed in chunks of `batch`.
FeatureSet embed(const FeatureNet<float>& net, const Tensor<float>& images, int batch = 64);
/// Attribute classifier outputs [n, kAttributeOutputs] (binary logits first).
Tensor<float> attribute_outputs(const FeatureNet<float>& net, const Tensor<float>& images, int batch = 64);

/// Fréchet distance between Gaussian fits. Needs n ≥ d + 1 on both sides.
/// Negative eigenvalues of the covariance product are clipped; clips larger
/// than 1e-6 in magnitude are reported on `warn`.
double fid(const FeatureSet& a, const FeatureSet& b, std::ostream* warn = nullptr);

struct IdsScores {
  double u_ids = 0;  // balanced misclassification rate of a linear SVM
  double p_ids = 0;  // fraction of pairs where the fake scores more real (ties count half); 0 when unpaired
};
/// Throws NumericError on zero-variance features.
IdsScores ids_scores(const FeatureSet& real, const FeatureSet& fake, bool paired, std::uint64_t seed = 0);

/// Mean perceptual distance between two independent completions per input.
double diversity_lpips(const CompletionFn& complete, const PerceptualFn<float>& phi, const Tensor<float>& images,
                       const Tensor<float>& masks, Rng& rng, int batch = 32);

/// Mean full-image squared error of the raw generator output against
/// generated targets, mixing with the generating code (same_z) or a fresh one.
struct PathErrors {
  double same_z = 0;
  double fresh_z = 0;
};
PathErrors path_asymmetry(const InpaintModel& model, int n, const MaskBand& band, std::uint64_t seed, int batch = 32);

struct BandReport {
  MaskBand band;
  int samples = 0;
  double fid = 0;
  double lpips_diversity = 0;
  double u_ids = 0;
  double p_ids = 0;
};

struct MetricsReport {
  double fid = 0;
  double lpips_diversity = 0;
  double u_ids = 0;
  double p_ids = 0;
  int samples = 0;
  std::string config_hash;
  std::vector<BandReport> bands;

  /// Key-value text with one [band lo,hi] section per band.
  std::string to_text() const;
  static MetricsReport from_text(const std::string& text);
};

struct SweepOptions {
  int n_per_band = 500;
  int batch = 32;
  int resolution = 32;
  std::uint64_t seed = 1234;  // held-out inputs: disjoint from training streams
  bool with_ids = true;
};

/// Held-out toy faces for evaluation, identical for every model given the seed.
Tensor<float> held_out_images(int n, int resolution, std::uint64_t seed);

/// Completes the same held-out faces under each band's masks and scores
/// composites against the originals. Top-level fields pool all bands.
/// n_per_band must exceed the embedding width.
MetricsReport difficulty_sweep(const CompletionFn& complete, const FeatureNet<float>& features,
                               const std::vector<MaskBand>& bands, const SweepOptions& opt,
                               const std::string& config_hash = "");
MetricsReport difficulty_sweep(const InpaintModel& model, const std::vector<MaskBand>& bands, const SweepOptions& opt);

/// Hex digest over the model's parameter fingerprints and the sweep options.
std::string metrics_config_hash(const InpaintModel& model, const SweepOptions& opt);

}  // namespace dip
