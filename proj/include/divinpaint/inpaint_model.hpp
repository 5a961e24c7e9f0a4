#pragma once

// The full inpainting pipeline: frozen base GAN (mapping, generator,
// discriminator), frozen feature network, and the trained encoder, mixer and
// skip refiner, plus their checkpoint layout and no-graph inference helpers.

#include "divinpaint/checkpoint.hpp"
#include "divinpaint/gated_mixer.hpp"
#include "divinpaint/inversion_encoder.hpp"
#include "divinpaint/objectives.hpp"
#include "divinpaint/skip_refiner.hpp"

#include <functional>
#include <memory>
#include <optional>

namespace dip {

/// Switches reproducing the ablation table rows.
struct AblationFlags {
  bool full_recons = true;
  bool gated_mixer = true;
  bool second_stage = true;

  /// 1: (-, gated, -)  2: (-, gated, stage2)  3: (full, -, -)  4: (full, gated, -)  5: all.
  static AblationFlags from_id(int id);
  /// Matching row id, or 0 when the combination is not a table row.
  int id() const;
  bool operator==(const AblationFlags&) const = default;
};

/// Optional rewrite of the mixer output before synthesis (used for edits).
using StyleTransform = std::function<Tensor<float>(const Tensor<float>&)>;

class InpaintModel {
 public:
  InpaintModel(const ModelConfig& cfg, const AblationFlags& flags, std::uint64_t seed = 0);
  InpaintModel(InpaintModel&&) = default;
  InpaintModel(const InpaintModel&) = delete;
  InpaintModel& operator=(const InpaintModel&) = delete;

  /// Fresh stage-1 model on top of a base checkpoint (mapping, generator,
  /// discriminator and feature network are loaded; the rest is initialised).
  static InpaintModel from_base(const Checkpoint& base, const AblationFlags& flags, std::uint64_t seed = 0);
  /// Restores a stage-1 or stage-2 checkpoint.
  static InpaintModel from_checkpoint(const Checkpoint& ck);

  void save_into(Checkpoint& ck) const;
  Checkpoint to_checkpoint() const;

  /// Marks which networks receive gradients for a training stage.
  void freeze_for(Stage stage);

  // ---- inference without graphs ------------------------------------------
  struct Completion {
    Tensor<float> final;         // composed output, [N,3,R,R]
    Tensor<float> raw;           // generator output before composition
    Tensor<float> stage1_final;  // composed first pass
    Tensor<float> w_out;         // [N,S,D] after the edit
  };

  /// Encodes (M * image, M).
  Tensor<float> encode(const Tensor<float>& image, const Tensor<float>& mask) const;
  Tensor<float> map_z(const Tensor<float>& z) const;
  /// Runs mixer (+ edit), generator, composition and, when the refiner is
  /// active, the second pass. compose=false returns the raw generator output
  /// as `final`.
  Completion complete_from_code(const Tensor<float>& image, const Tensor<float>& mask, const Tensor<float>& w_enc,
                                const Tensor<float>& z, const StyleTransform& edit = nullptr,
                                bool compose = true) const;
  Completion complete(const Tensor<float>& image, const Tensor<float>& mask, const Tensor<float>& z) const;
  Tensor<float> random_z(Rng& rng, int n) const;

  bool uses_refiner() const { return stage == Stage::stage2; }
  PerceptualFn<float> perceptual() const { return perceptual_of(features); }

  ModelConfig cfg;
  AblationFlags flags;
  Stage stage = Stage::stage1;
  MappingNet<float> mapping;
  Generator<float> generator;
  Discriminator<float> discriminator;
  FeatureNet<float> features;
  Encoder<float> encoder;
  Mixer<float> mixer;
  SkipRefiner<float> refiner;
};

/// Batch completion callback used by evaluation: (images, masks, rng) -> composites.
using CompletionFn = std::function<Tensor<float>(const Tensor<float>&, const Tensor<float>&, Rng&)>;
CompletionFn completion_fn(const InpaintModel& model);

}  // namespace dip
