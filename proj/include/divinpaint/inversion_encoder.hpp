#pragma once

#include "divinpaint/model_config.hpp"
#include "divinpaint/nn.hpp"

namespace dip {

/// Pyramid encoder from (erased image, mask) to a full style code. No feature
/// normalisation layers. Each style index has its own linear head reading an
/// average-pooled 4x4 view of one pyramid level: coarse styles from 4x4,
/// middle styles from 8x8, fine styles from resolution/2. The output is offset
/// by the mapping network's mean w, so an untrained encoder lands near it.
template <typename Scalar>
class Encoder {
 public:
  Encoder(const ModelConfig& cfg, Rng& rng);

  /// erased [N,3,R,R], mask [N,1,R,R] -> code [N, num_styles, w_dim].
  Var<Scalar> encode(const Var<Scalar>& erased, const Var<Scalar>& mask) const;

  /// Pyramid level each style head reads from.
  int level_of_style(int style) const;

  void set_w_avg(const Tensor<Scalar>& w_avg);

  ParamSet<Scalar>& params() { return ps_; }
  const ParamSet<Scalar>& params() const { return ps_; }

 private:
  ModelConfig cfg_;
  ParamSet<Scalar> ps_;
  Conv2d<Scalar> stem_;
  std::vector<std::pair<Conv2d<Scalar>, Conv2d<Scalar>>> down_;  // one per halving
  std::vector<Linear<Scalar>> heads_;
  Var<Scalar> w_avg_;
};

}  // namespace dip
