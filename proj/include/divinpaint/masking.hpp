#pragma once

// Pixel-domain mask algebra. Mask polarity: 1 = valid (kept) pixel, 0 = erased.
//   erase:          M * I
//   compose_final:  M * I + (1 - M) * G

#include "divinpaint/autograd.hpp"
#include "divinpaint/rng.hpp"

#include <string>

namespace dip {

class MaskSamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed interval of erased-pixel ratios.
struct MaskBand {
  double lo = 0.0;
  double hi = 1.0;

  void validate() const;
  bool contains(double ratio) const { return ratio >= lo && ratio <= hi; }
  std::string label() const;
  /// Parses "lo,hi".
  static MaskBand parse(const std::string& text);
};

inline const MaskBand kEasyBand{0.0, 0.4};
inline const MaskBand kDifficultBand{0.4, 1.0};

/// Fraction of erased pixels, 1 - mean(mask).
double erased_ratio(const Tensor<float>& mask);

/// Union of 1-4 rectangles and 0-4 thick strokes, rejection-sampled into the band.
/// Returns [1,res,res].
Tensor<float> sample_mask(const MaskBand& band, int res, Rng& rng, int max_attempts = 1000);
Tensor<float> sample_mask(const MaskBand& band, int res, std::uint64_t seed);
/// n masks stacked to [n,1,res,res].
Tensor<float> sample_mask_batch(const MaskBand& band, int res, int n, Rng& rng);

template <typename Scalar>
Tensor<Scalar> erase(const Tensor<Scalar>& image, const Tensor<Scalar>& mask);
template <typename Scalar>
Tensor<Scalar> compose_final(const Tensor<Scalar>& input, const Tensor<Scalar>& mask,
                             const Tensor<Scalar>& generated);

template <typename Scalar>
Var<Scalar> erase(const Var<Scalar>& image, const Var<Scalar>& mask);
template <typename Scalar>
Var<Scalar> compose_final(const Var<Scalar>& input, const Var<Scalar>& mask, const Var<Scalar>& generated);

/// True when mask entries are exactly 0 or 1.
bool is_binary(const Tensor<float>& mask);

}  // namespace dip
