#include "divinpaint/skip_refiner.hpp"

#include "divinpaint/masking.hpp"

namespace dip {

template <typename S>
typename SkipRefiner<S>::Unit SkipRefiner<S>::make_unit(const std::string& name, int in, int out, Rng& rng) {
  Unit u;
  u.conv = Conv2d<S>(ps_, name + ".conv", in, out, 3, rng, he_std(in * 9), false);
  u.bn = BatchNorm2d<S>(ps_, name + ".bn", out);
  u.alpha = ps_.add(name + ".prelu", Tensor<S>({out}, S(0.25)));
  return u;
}

template <typename S>
Var<S> SkipRefiner<S>::run_unit(const Unit& u, const Var<S>& x) const {
  return prelu(u.bn(u.conv(x), training_), u.alpha);
}

template <typename S>
SkipRefiner<S>::SkipRefiner(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  stem_ = make_unit("stem", 7, kStemChannels, rng);
  int in = kStemChannels;
  for (std::size_t b = 0; b < kBlockChannels.size(); ++b) {
    const int c = kBlockChannels[b];
    std::vector<ResLayer> layers;
    for (int l = 0; l < 3; ++l) {
      const std::string p = "block" + std::to_string(b) + ".layer" + std::to_string(l);
      ResLayer rl;
      rl.pool = l == 0;
      rl.a = make_unit(p + ".a", in, c, rng);
      rl.b = make_unit(p + ".b", c, c, rng);
      if (in != c) rl.shortcut = Conv2d<S>(ps_, p + ".shortcut", in, c, 1, rng, he_std(in), false);
      layers.push_back(std::move(rl));
      in = c;
    }
    blocks_.push_back(std::move(layers));
  }
  // Block b ends at resolution R / 2^(b+1); the injection set is R/2, R/4, R/8.
  const auto inj = cfg_.injection_resolutions();
  for (std::size_t b = 0; b < kBlockChannels.size(); ++b) {
    const int r = cfg_.resolution >> (b + 1);
    if (std::find(inj.begin(), inj.end(), r) == inj.end()) continue;
    Head h;
    h.channels = cfg_.channels_at(r);
    const std::string p = "head" + std::to_string(r);
    h.hidden = make_unit(p + ".hidden", kBlockChannels[b], kBlockChannels[b], rng);
    h.out = Conv2d<S>(ps_, p + ".out", kBlockChannels[b], 2 * h.channels, 3, rng, 0.0);
    heads_.emplace(r, std::move(h));
  }
}

template <typename S>
SkipMaps<S> SkipRefiner<S>::refine(const Var<S>& stage1_final, const Var<S>& erased, const Var<S>& mask) const {
  const int r = cfg_.resolution;
  if (stage1_final.shape().size() != 4 || stage1_final.dim(1) != 3 || stage1_final.dim(2) != r ||
      stage1_final.dim(3) != r) {
    throw DimensionError("refine expects [N,3," + std::to_string(r) + "," + std::to_string(r) + "], got " +
                         shape_str(stage1_final.shape()));
  }
  const int n = stage1_final.dim(0);
  require_shape(erased.shape(), stage1_final.shape(), "refine erased");
  require_shape(mask.shape(), {n, 1, r, r}, "refine mask");

  Var<S> x = run_unit(stem_, concat<S>({stage1_final, erased, mask}, 1));
  int res = r;
  SkipMaps<S> maps;
  for (const auto& layers : blocks_) {
    for (const auto& l : layers) {
      Var<S> in = l.pool ? maxpool2x(x) : x;
      Var<S> y = run_unit(l.b, run_unit(l.a, in));
      x = add(y, l.shortcut.weight.defined() ? l.shortcut(in) : in);
    }
    res /= 2;
    auto it = heads_.find(res);
    if (it == heads_.end()) continue;
    const Head& h = it->second;
    Var<S> o = h.out(run_unit(h.hidden, x));
    Var<S> logits = slice(o, 1, 0, h.channels);
    maps[res].mult = add_scalar(scale(sigmoid(logits), S(2)), S(-1));
    maps[res].add = slice(o, 1, h.channels, 2 * h.channels);
  }
  return maps;
}

template <typename S>
Stage2Result<S> stage2_forward(const Generator<S>& g, const SkipRefiner<S>& s, const Var<S>& input, const Var<S>& mask,
                               const Var<S>& w_out, const SkipMaps<S>* skips_override) {
  Stage2Result<S> r;
  r.stage1_raw = g.synthesize(w_out).image;
  r.stage1_final = compose_final(input, mask, r.stage1_raw);
  r.skips = skips_override ? *skips_override : s.refine(r.stage1_final, erase(input, mask), mask);
  r.raw = g.synthesize(w_out, &r.skips).image;
  r.final = compose_final(input, mask, r.raw);
  return r;
}

template <typename S>
SkipMaps<S> zero_skip_maps(const Generator<S>& g, int n) {
  SkipMaps<S> maps;
  for (int r : g.config().injection_resolutions()) {
    Shape sh = g.feature_shape(r);
    sh.insert(sh.begin(), n);
    maps[r].mult = Var<S>(Tensor<S>::zeros(sh));
    maps[r].add = Var<S>(Tensor<S>::zeros(sh));
  }
  return maps;
}

template class SkipRefiner<float>;
template class SkipRefiner<double>;
template Stage2Result<float> stage2_forward(const Generator<float>&, const SkipRefiner<float>&, const Var<float>&,
                                           const Var<float>&, const Var<float>&, const SkipMaps<float>*);
template Stage2Result<double> stage2_forward(const Generator<double>&, const SkipRefiner<double>&, const Var<double>&,
                                            const Var<double>&, const Var<double>&, const SkipMaps<double>*);
template SkipMaps<float> zero_skip_maps(const Generator<float>&, int);
template SkipMaps<double> zero_skip_maps(const Generator<double>&, int);

}  // namespace dip
