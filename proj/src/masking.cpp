#include "divinpaint/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace dip {

void MaskBand::validate() const {
  if (!(lo >= 0.0 && lo < hi && hi <= 1.0)) {
    throw std::invalid_argument("mask band must satisfy 0 <= lo < hi <= 1, got " + label());
  }
}

std::string MaskBand::label() const {
  std::ostringstream os;
  os << lo << ',' << hi;
  return os.str();
}

MaskBand MaskBand::parse(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw std::invalid_argument("mask band must be 'lo,hi': " + text);
  MaskBand b;
  try {
    b.lo = std::stod(text.substr(0, comma));
    b.hi = std::stod(text.substr(comma + 1));
  } catch (const std::exception&) {
    throw std::invalid_argument("mask band must be 'lo,hi': " + text);
  }
  b.validate();
  return b;
}

double erased_ratio(const Tensor<float>& mask) {
  if (mask.size() == 0) return 0.0;
  return 1.0 - static_cast<double>(mask.array().template cast<double>().mean());
}

bool is_binary(const Tensor<float>& mask) {
  return ((mask.array() == 0.0f) || (mask.array() == 1.0f)).all();
}

namespace {

void fill_rect(Tensor<float>& m, int res, double x0, double y0, double x1, double y1) {
  const int ax = std::clamp(static_cast<int>(std::floor(x0)), 0, res);
  const int bx = std::clamp(static_cast<int>(std::ceil(x1)), 0, res);
  const int ay = std::clamp(static_cast<int>(std::floor(y0)), 0, res);
  const int by = std::clamp(static_cast<int>(std::ceil(y1)), 0, res);
  for (int y = ay; y < by; ++y)
    for (int x = ax; x < bx; ++x) m[y * res + x] = 0.0f;
}

void fill_disc(Tensor<float>& m, int res, double cx, double cy, double r) {
  const int ay = std::max(0, static_cast<int>(std::floor(cy - r)));
  const int by = std::min(res - 1, static_cast<int>(std::ceil(cy + r)));
  const int ax = std::max(0, static_cast<int>(std::floor(cx - r)));
  const int bx = std::min(res - 1, static_cast<int>(std::ceil(cx + r)));
  for (int y = ay; y <= by; ++y)
    for (int x = ax; x <= bx; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) m[y * res + x] = 0.0f;
    }
}

Tensor<float> draw_candidate(int res, Rng& rng) {
  Tensor<float> m = Tensor<float>::ones({1, res, res});
  // Overall size scale drawn first so both small and large holes are common.
  const double scale = rng.uniform(0.1, 1.0);
  const int rects = rng.uniform_int(1, 4);
  for (int i = 0; i < rects; ++i) {
    const double w = rng.uniform(0.25, 1.0) * scale * res;
    const double h = rng.uniform(0.25, 1.0) * scale * res;
    const double x0 = rng.uniform(-0.1 * res, res - 0.5 * w);
    const double y0 = rng.uniform(-0.1 * res, res - 0.5 * h);
    fill_rect(m, res, x0, y0, x0 + w, y0 + h);
  }
  const int strokes = rng.uniform_int(0, 4);
  for (int s = 0; s < strokes; ++s) {
    double x = rng.uniform(0.0, res), y = rng.uniform(0.0, res);
    const double radius = std::max(0.75, rng.uniform(0.03, 0.12) * res * std::sqrt(scale) * 1.5);
    const int segments = rng.uniform_int(2, 6);
    double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int k = 0; k < segments; ++k) {
      angle += rng.uniform(-1.2, 1.2);
      const double len = rng.uniform(0.1, 0.4) * res;
      const int steps = std::max(1, static_cast<int>(len / std::max(0.5, radius * 0.5)));
      for (int t = 0; t <= steps; ++t) {
        fill_disc(m, res, x + std::cos(angle) * len * t / steps, y + std::sin(angle) * len * t / steps, radius);
      }
      x = std::clamp(x + std::cos(angle) * len, 0.0, static_cast<double>(res));
      y = std::clamp(y + std::sin(angle) * len, 0.0, static_cast<double>(res));
    }
  }
  return m;
}

template <typename S>
void check_mask_shape(const Shape& img, const Shape& mask) {
  const bool ok = img.size() == mask.size() && img.size() >= 3 && mask[mask.size() - 3] == 1 &&
                  mask[mask.size() - 2] == img[img.size() - 2] && mask[mask.size() - 1] == img[img.size() - 1] &&
                  (img.size() == 3 || mask[0] == img[0]);
  if (!ok) throw DimensionError("mask " + shape_str(mask) + " incompatible with image " + shape_str(img));
}

}  // namespace

Tensor<float> sample_mask(const MaskBand& band, int res, Rng& rng, int max_attempts) {
  band.validate();
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Tensor<float> m = draw_candidate(res, rng);
    if (band.contains(erased_ratio(m))) return m;
  }
  throw MaskSamplingError("no mask with erased ratio in [" + band.label() + "] after " +
                          std::to_string(max_attempts) + " attempts");
}

Tensor<float> sample_mask(const MaskBand& band, int res, std::uint64_t seed) {
  Rng rng(seed);
  return sample_mask(band, res, rng);
}

Tensor<float> sample_mask_batch(const MaskBand& band, int res, int n, Rng& rng) {
  std::vector<Tensor<float>> parts;
  for (int i = 0; i < n; ++i) parts.push_back(sample_mask(band, res, rng).reshaped({1, 1, res, res}));
  return stack_batch(parts);
}

template <typename S>
Tensor<S> erase(const Tensor<S>& image, const Tensor<S>& mask) {
  check_mask_shape<S>(image.shape(), mask.shape());
  return mul(constant(image), constant(mask)).value();
}

template <typename S>
Tensor<S> compose_final(const Tensor<S>& input, const Tensor<S>& mask, const Tensor<S>& generated) {
  require_shape(generated.shape(), input.shape(), "compose_final generated");
  check_mask_shape<S>(input.shape(), mask.shape());
  const int hw = input.dim(-1) * input.dim(-2);
  const int channels = input.dim(-3);
  const int batch = input.size() / (static_cast<Eigen::Index>(hw) * channels);
  Tensor<S> out(input.shape());
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < channels; ++c)
      for (int p = 0; p < hw; ++p) {
        const Eigen::Index i = (static_cast<Eigen::Index>(n) * channels + c) * hw + p;
        out[i] = mask[static_cast<Eigen::Index>(n) * hw + p] > S(0.5) ? input[i] : generated[i];
      }
  return out;
}

template <typename S>
Var<S> erase(const Var<S>& image, const Var<S>& mask) {
  check_mask_shape<S>(image.shape(), mask.shape());
  return mul(image, mask);
}

template <typename S>
Var<S> compose_final(const Var<S>& input, const Var<S>& mask, const Var<S>& generated) {
  require_shape(generated.shape(), input.shape(), "compose_final generated");
  check_mask_shape<S>(input.shape(), mask.shape());
  Tensor<S> inv = mask.value();
  inv.array() = S(1) - inv.array();
  return add(mul(input, mask), mul(generated, constant(inv)));
}

template Tensor<float> erase(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> erase(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> compose_final(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> compose_final(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template Var<float> erase(const Var<float>&, const Var<float>&);
template Var<double> erase(const Var<double>&, const Var<double>&);
template Var<float> compose_final(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> compose_final(const Var<double>&, const Var<double>&, const Var<double>&);

}  // namespace dip
