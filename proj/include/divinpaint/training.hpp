#pragma once

#include "divinpaint/inpaint_model.hpp"
#include "divinpaint/masking.hpp"
#include "divinpaint/stylegan_lite.hpp"

#include <optional>
#include <ostream>

namespace dip {

struct TrainConfig {
  Stage stage = Stage::stage1;
  int total_steps = 3000;
  int batch = 8;
  double lr = 1e-4;    // encoder, mixer, refiner
  double lr_d = 1e-4;  // discriminator
  int lr_period = 0;   // 0: max(1, total_steps / 10)
  LossWeights weights;
  MaskBand band{0.0, 1.0};
  AblationFlags ablation;
  bool train_discriminator = true;
  std::uint64_t seed = 0;
  int log_every = 50;

  int period() const { return lr_period > 0 ? lr_period : std::max(1, total_steps / 10); }
  static TrainConfig from_config(const Config& c, Stage stage);
  void write_to(Config& c) const;
};

/// base_lr * 2^-floor(step / period)
double lr_schedule(int step, const TrainConfig& cfg);

struct StepOutcome {
  int step = 0;
  LossBreakdown losses;  // combined: l_rg from path (a), l_rr from path (b)
  LossBreakdown path_a;  // zeros when path (a) is disabled
  LossBreakdown path_b;
  double path_a_l2 = 0;  // full-image mean squared error of path (a)
  double grad_norm = 0;  // trained networks (encoder+mixer or refiner)
  double grad_norm_d = 0;
  double lr = 0;
};

/// Inputs pinned for overfitting runs; unset fields are sampled per step.
struct FixedInputs {
  std::optional<Tensor<float>> z_g;   // [N, z_dim]
  std::optional<Tensor<float>> mask;  // [N,1,R,R]
  std::optional<Tensor<float>> z_r;   // [N, z_dim]
};

/// Dual-path trainer for stage 1 (encoder + mixer) and stage 2 (skip refiner).
/// Path (a) mixes with the generating code and reconstructs the full image;
/// path (b) mixes with a fresh code and reconstructs only valid pixels. With
/// full_recons disabled, training images are rendered toy faces and path (a)
/// is skipped.
class Trainer {
 public:
  Trainer(InpaintModel& model, const TrainConfig& cfg);

  StepOutcome step();
  void set_fixed_inputs(FixedInputs fixed) { fixed_ = std::move(fixed); }
  int steps_done() const { return step_; }
  const Rng& rng() const { return rng_; }

 private:
  InpaintModel& model_;
  TrainConfig cfg_;
  Rng rng_;
  FixedInputs fixed_;
  Adam<float> opt_main_, opt_d_;
  int step_ = 0;
};

/// Runs cfg.total_steps steps, writing one JSON line per log_every steps.
/// Throws NumericError on a non-finite loss, naming last_good when given.
Checkpoint train_stage1(InpaintModel& model, const TrainConfig& cfg, std::ostream* log = nullptr,
                        const std::string& last_good = "");
Checkpoint train_stage2(InpaintModel& model, const TrainConfig& cfg, std::ostream* log = nullptr,
                        const std::string& last_good = "");

/// Base GAN plus feature network, as one base_gan checkpoint.
Checkpoint pretrain(const ModelConfig& mcfg, const PretrainConfig& pcfg, const FeatureTrainConfig& fcfg,
                    std::ostream* log = nullptr);

std::string outcome_json(const StepOutcome& o, Stage stage);

}  // namespace dip
