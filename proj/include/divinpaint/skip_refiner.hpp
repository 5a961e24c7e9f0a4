#pragma once

#include "divinpaint/stylegan_lite.hpp"

namespace dip {

/// Second-stage skip encoder. Input: [stage-1 composite, erased image, mask]
/// (7 channels). A 3x3 stem to 32 channels, then three residual blocks
/// (48, 64, 96 channels) of three residual layers each; the first layer of a
/// block halves resolution by max pooling. Each residual layer is two
/// conv + batch norm + PReLU units plus a shortcut. Block outputs at the
/// generator's injection resolutions feed two conv units per resolution that
/// produce the multiplicative and additive maps.
///
/// G_mult = 2 * sigmoid(l) - 1 and G_add = a, where (l, a) come from a final
/// zero-initialised convolution, so a fresh refiner injects neutrally.
template <typename Scalar>
class SkipRefiner {
 public:
  static constexpr int kStemChannels = 32;
  static constexpr std::array<int, 3> kBlockChannels = {48, 64, 96};

  SkipRefiner(const ModelConfig& cfg, Rng& rng);

  SkipMaps<Scalar> refine(const Var<Scalar>& stage1_final, const Var<Scalar>& erased, const Var<Scalar>& mask) const;

  /// Training mode uses batch statistics and updates running statistics.
  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  ParamSet<Scalar>& params() { return ps_; }
  const ParamSet<Scalar>& params() const { return ps_; }

 private:
  struct Unit {
    Conv2d<Scalar> conv;
    BatchNorm2d<Scalar> bn;
    Var<Scalar> alpha;  // PReLU slopes
  };
  struct ResLayer {
    Unit a, b;
    Conv2d<Scalar> shortcut;  // 1x1 when channels change
    bool pool = false;
  };
  struct Head {
    Unit hidden;
    Conv2d<Scalar> out;  // -> 2 * C_r, zero-initialised
    int channels = 0;
  };

  Unit make_unit(const std::string& name, int in, int out, Rng& rng);
  Var<Scalar> run_unit(const Unit& u, const Var<Scalar>& x) const;

  ModelConfig cfg_;
  ParamSet<Scalar> ps_;
  Unit stem_;
  std::vector<std::vector<ResLayer>> blocks_;
  std::map<int, Head> heads_;
  bool training_ = false;
};

template <typename Scalar>
struct Stage2Result {
  Var<Scalar> stage1_raw;    // G(w_out)
  Var<Scalar> stage1_final;  // composed stage-1 output
  SkipMaps<Scalar> skips;
  Var<Scalar> raw;    // G(w_out, skips)
  Var<Scalar> final;  // composed second pass
};

/// synthesize(w_out) -> compose -> refine -> synthesize(w_out, skips) -> compose.
/// When skips_override is given it replaces the refiner's maps.
template <typename Scalar>
Stage2Result<Scalar> stage2_forward(const Generator<Scalar>& g, const SkipRefiner<Scalar>& s, const Var<Scalar>& input,
                                    const Var<Scalar>& mask, const Var<Scalar>& w_out,
                                    const SkipMaps<Scalar>* skips_override = nullptr);

/// All-zero maps over the injection resolutions for a batch of n.
template <typename Scalar>
SkipMaps<Scalar> zero_skip_maps(const Generator<Scalar>& g, int n);

}  // namespace dip
