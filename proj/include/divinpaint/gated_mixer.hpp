#pragma once

#include "divinpaint/model_config.hpp"
#include "divinpaint/nn.hpp"

namespace dip {

template <typename Scalar>
struct MixerOutput {
  Var<Scalar> w_out;   // [N, S, D]
  Var<Scalar> w_comb;  // [N, S, D]
  Var<Scalar> gate;    // logits g, [N, S, D]
};

/// sigmoid(g) * w_comb + sigmoid(-g) * w_rand, elementwise. The forward value is
/// clamped to the closed interval spanned by w_comb and w_rand so rounding can
/// never leave it; gradients are those of the unclamped expression.
template <typename Scalar>
Var<Scalar> combine(const Var<Scalar>& w_comb, const Var<Scalar>& w_rand, const Var<Scalar>& g);

/// Per style index i: [w_enc_i, w_rand_i] -> Linear(2D,2D) -> leaky ReLU ->
/// Linear(2D,2D) -> split into (delta_i, g_i), with w_comb_i = w_enc_i + delta_i.
/// With gating disabled w_out = w_comb and the gate is left undefined.
template <typename Scalar>
class Mixer {
 public:
  Mixer(const ModelConfig& cfg, Rng& rng, bool gated = true);

  MixerOutput<Scalar> forward(const Var<Scalar>& w_enc, const Var<Scalar>& w_rand) const;
  bool gated() const { return gated_; }

  ParamSet<Scalar>& params() { return ps_; }
  const ParamSet<Scalar>& params() const { return ps_; }

 private:
  ModelConfig cfg_;
  ParamSet<Scalar> ps_;
  std::vector<std::pair<Linear<Scalar>, Linear<Scalar>>> nets_;
  bool gated_;
};

}  // namespace dip
