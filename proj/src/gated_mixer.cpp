#include "divinpaint/gated_mixer.hpp"

namespace dip {

template <typename S>
Var<S> combine(const Var<S>& w_comb, const Var<S>& w_rand, const Var<S>& g) {
  require_shape(w_rand.shape(), w_comb.shape(), "combine w_rand");
  require_shape(g.shape(), w_comb.shape(), "combine gate");
  Var<S> out = add(mul(sigmoid(g), w_comb), mul(sigmoid(scale(g, S(-1))), w_rand));
  auto& v = out.mutable_value().array();
  const auto& a = w_comb.value().array();
  const auto& b = w_rand.value().array();
  v = v.max(a.min(b)).min(a.max(b));
  return out;
}

template <typename S>
Mixer<S>::Mixer(const ModelConfig& cfg, Rng& rng, bool gated) : cfg_(cfg), gated_(gated) {
  cfg_.validate();
  const int d2 = 2 * cfg_.w_dim;
  for (int i = 0; i < cfg_.num_styles(); ++i) {
    const std::string p = "style" + std::to_string(i);
    Linear<S> fc0(ps_, p + ".fc0", d2, d2, rng, he_std(d2));
    Linear<S> fc1(ps_, p + ".fc1", d2, d2, rng, 0.1 * he_std(d2, 1.0));
    nets_.emplace_back(fc0, fc1);
  }
}

template <typename S>
MixerOutput<S> Mixer<S>::forward(const Var<S>& w_enc, const Var<S>& w_rand) const {
  const int ns = cfg_.num_styles(), d = cfg_.w_dim;
  if (w_enc.shape().size() != 3 || w_enc.dim(1) != ns || w_enc.dim(2) != d) {
    throw DimensionError("mixer expects codes [N," + std::to_string(ns) + "," + std::to_string(d) + "], got " +
                         shape_str(w_enc.shape()));
  }
  require_shape(w_rand.shape(), w_enc.shape(), "mixer w_rand");
  const int n = w_enc.dim(0);
  std::vector<Var<S>> comb_rows, gate_rows;
  for (int i = 0; i < ns; ++i) {
    Var<S> e = reshape(slice(w_enc, 1, i, i + 1), {n, d});
    Var<S> r = reshape(slice(w_rand, 1, i, i + 1), {n, d});
    Var<S> h = nets_[i].second(leaky_relu(nets_[i].first(concat<S>({e, r}, 1))));
    comb_rows.push_back(reshape(add(e, slice(h, 1, 0, d)), {n, 1, d}));
    gate_rows.push_back(reshape(slice(h, 1, d, 2 * d), {n, 1, d}));
  }
  MixerOutput<S> o;
  o.w_comb = concat(comb_rows, 1);
  if (gated_) {
    o.gate = concat(gate_rows, 1);
    o.w_out = combine(o.w_comb, w_rand, o.gate);
  } else {
    o.w_out = o.w_comb;
  }
  return o;
}

template Var<float> combine(const Var<float>&, const Var<float>&, const Var<float>&);
template Var<double> combine(const Var<double>&, const Var<double>&, const Var<double>&);
template class Mixer<float>;
template class Mixer<double>;

}  // namespace dip
