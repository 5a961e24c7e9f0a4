#include "divinpaint/inversion_encoder.hpp"

namespace dip {

namespace {

int encoder_channels(const ModelConfig& cfg, int res) {
  return res >= 16 ? cfg.encoder_channels : 2 * cfg.encoder_channels;
}

}  // namespace

template <typename S>
Encoder<S>::Encoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int top = cfg_.resolution;
  stem_ = Conv2d<S>(ps_, "stem", 4, encoder_channels(cfg_, top), 3, rng, he_std(36));
  for (int r = top; r > 4; r /= 2) {
    const int c = encoder_channels(cfg_, r), c2 = encoder_channels(cfg_, r / 2);
    const std::string p = "d" + std::to_string(r);
    down_.emplace_back(Conv2d<S>(ps_, p + ".conv0", c, c, 3, rng, he_std(c * 9)),
                       Conv2d<S>(ps_, p + ".conv1", c, c2, 3, rng, he_std(c * 9)));
  }
  for (int i = 0; i < cfg_.num_styles(); ++i) {
    const int fan_in = encoder_channels(cfg_, level_of_style(i)) * 16;
    // Small heads so the initial code sits close to w_avg.
    heads_.emplace_back(ps_, "head" + std::to_string(i), fan_in, cfg_.w_dim, rng, 0.1 * he_std(fan_in));
  }
  w_avg_ = ps_.add_buffer("w_avg", Tensor<S>::zeros({cfg_.w_dim}));
}

template <typename S>
int Encoder<S>::level_of_style(int style) const {
  const int ns = cfg_.num_styles();
  const int coarse = std::min(3, ns);
  const int middle = (ns - coarse) / 2;
  if (style < coarse) return 4;
  if (style < coarse + middle) return std::min(8, cfg_.resolution / 2);
  return cfg_.resolution / 2;
}

template <typename S>
void Encoder<S>::set_w_avg(const Tensor<S>& w_avg) {
  require_shape(w_avg.shape(), {cfg_.w_dim}, "encoder w_avg");
  Var<S> buf = w_avg_;
  buf.mutable_value() = w_avg;
}

template <typename S>
Var<S> Encoder<S>::encode(const Var<S>& erased, const Var<S>& mask) const {
  const int r = cfg_.resolution;
  if (erased.shape().size() != 4 || erased.dim(1) != 3 || erased.dim(2) != r || erased.dim(3) != r) {
    throw DimensionError("encoder expects erased [N,3," + std::to_string(r) + "," + std::to_string(r) + "], got " +
                         shape_str(erased.shape()));
  }
  require_shape(mask.shape(), {erased.dim(0), 1, r, r}, "encoder mask");
  const int n = erased.dim(0);

  std::map<int, Var<S>> levels;
  Var<S> x = leaky_relu(stem_(concat<S>({erased, mask}, 1)));
  int res = r;
  for (const auto& [c0, c1] : down_) {
    x = leaky_relu(c0(avgpool2x(x)));
    x = leaky_relu(c1(x));
    res /= 2;
    levels[res] = x;
  }

  std::map<int, Var<S>> pooled;
  for (const auto& [lr, feat] : levels) {
    Var<S> p = feat;
    for (int s = lr; s > 4; s /= 2) p = avgpool2x(p);
    pooled[lr] = reshape(p, {n, p.dim(1) * 16});
  }

  std::vector<Var<S>> rows;
  const Var<S> offset = reshape(w_avg_, {1, cfg_.w_dim});
  for (int i = 0; i < cfg_.num_styles(); ++i) {
    Var<S> w = add(heads_[i](pooled.at(level_of_style(i))), offset);
    rows.push_back(reshape(w, {n, 1, cfg_.w_dim}));
  }
  Var<S> code = concat(rows, 1);
  if (!code.value().all_finite()) throw NumericError("encoder produced a non-finite style code");
  return code;
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace dip
