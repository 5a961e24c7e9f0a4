#include "divinpaint/objectives.hpp"

#include "divinpaint/toy_faces.hpp"

#include <cmath>

namespace dip {

// ---------------------------------------------------------------- feature net

namespace {
int tap_channels(int feature_dim, int stage) {
  const int c = stage == 0 ? feature_dim / 4 : stage == 1 ? feature_dim / 2 : feature_dim;
  return std::max(4, c);
}
}  // namespace

template <typename S>
FeatureNet<S>::FeatureNet(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const int a = tap_channels(cfg_.feature_dim, 0), b = tap_channels(cfg_.feature_dim, 1),
            c = tap_channels(cfg_.feature_dim, 2);
  c0_ = Conv2d<S>(ps_, "conv0", 3, a, 3, rng, he_std(27));
  c1_ = Conv2d<S>(ps_, "conv1", a, a, 3, rng, he_std(a * 9));
  c2_ = Conv2d<S>(ps_, "conv2", a, b, 3, rng, he_std(a * 9));
  c3_ = Conv2d<S>(ps_, "conv3", b, c, 3, rng, he_std(b * 9));
  const int r = cfg_.resolution / 8;
  embed_ = Linear<S>(ps_, "embed", c * r * r, cfg_.feature_dim, rng, he_std(c * r * r));
  head_ = Linear<S>(ps_, "head", cfg_.feature_dim, kAttributeOutputs, rng, he_std(cfg_.feature_dim, 1.0));
}

template <typename S>
typename FeatureNet<S>::Output FeatureNet<S>::forward(const Var<S>& img) const {
  const int r = cfg_.resolution;
  if (img.shape().size() != 4 || img.dim(1) != 3 || img.dim(2) != r || img.dim(3) != r) {
    throw DimensionError("feature net expects [N,3," + std::to_string(r) + "," + std::to_string(r) + "], got " +
                         shape_str(img.shape()));
  }
  Output o;
  Var<S> x = leaky_relu(c0_(img));
  x = avgpool2x(leaky_relu(c1_(x)));
  o.taps.push_back(x);
  x = avgpool2x(leaky_relu(c2_(x)));
  o.taps.push_back(x);
  x = avgpool2x(leaky_relu(c3_(x)));
  o.taps.push_back(x);
  const int n = img.dim(0);
  o.embedding = leaky_relu(embed_(reshape(x, {n, x.dim(1) * x.dim(2) * x.dim(3)})));
  o.outputs = head_(o.embedding);
  return o;
}

namespace {

Tensor<float> targets_of(const std::vector<FaceParams>& params) {
  Tensor<float> t({static_cast<int>(params.size()), kAttributeOutputs});
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto row = attribute_targets(params[i]);
    for (int j = 0; j < kAttributeOutputs; ++j) t[static_cast<Eigen::Index>(i) * kAttributeOutputs + j] = row[j];
  }
  return t;
}

}  // namespace

FeatureTrainConfig FeatureTrainConfig::from_config(const Config& c) {
  FeatureTrainConfig f;
  f.steps = c.get_int("features.steps", f.steps);
  f.batch = c.get_int("features.batch", f.batch);
  f.lr = c.get_double("features.lr", f.lr);
  f.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<int>(f.seed)));
  return f;
}

std::vector<double> train_feature_net(FeatureNet<float>& net, const ModelConfig& cfg, const FeatureTrainConfig& tcfg,
                                      std::ostream* log) {
  Rng rng(tcfg.seed ^ 0x5bd1e995ULL);
  Adam<float> opt(net.params().trainable());
  const int nb = static_cast<int>(kBinaryAttributes.size());
  for (int step = 0; step < tcfg.steps; ++step) {
    FaceBatch batch = sample_face_batch(rng, tcfg.batch, cfg.resolution);
    Var<float> out = net.forward(constant(batch.images)).outputs;
    Tensor<float> tgt = targets_of(batch.params);
    Var<float> logits = slice(out, 1, 0, nb);
    Var<float> reg = slice(out, 1, nb, kAttributeOutputs);
    // Binary cross-entropy in logit form: softplus(l) - t * l.
    Var<float> bce = mean(sub(softplus(logits), mul(constant(slice(constant(tgt), 1, 0, nb).value()), logits)));
    Var<float> mse_reg = mse(reg, constant(slice(constant(tgt), 1, nb, kAttributeOutputs).value()));
    Var<float> loss = add(bce, mse_reg);
    if (!std::isfinite(loss.value()[0])) throw NumericError("feature net training diverged");
    backward(loss);
    const double lr = step < tcfg.steps * 3 / 4 ? tcfg.lr : tcfg.lr * 0.1;
    opt.step(lr);
    if (log && (step % 100 == 0 || step + 1 == tcfg.steps)) {
      *log << "{\"stage\":\"features\",\"step\":" << step << ",\"bce\":" << bce.value()[0]
           << ",\"mse\":" << mse_reg.value()[0] << "}\n";
    }
  }
  Rng eval_rng(tcfg.seed + 999);
  FaceBatch held = sample_face_batch(eval_rng, 256, cfg.resolution);
  const Tensor<float> out = net.forward(constant(held.images)).outputs.value();
  std::vector<double> acc(nb, 0.0);
  for (int i = 0; i < 256; ++i) {
    const auto t = attribute_targets(held.params[i]);
    for (int j = 0; j < nb; ++j) acc[j] += ((out[i * kAttributeOutputs + j] > 0) == (t[j] > 0.5f)) ? 1.0 : 0.0;
  }
  for (auto& a : acc) a /= 256.0;
  return acc;
}

// ---------------------------------------------------------------- losses

template <typename S>
Var<S> perceptual_distance(const std::vector<Var<S>>& a, const std::vector<Var<S>>& b) {
  if (a.size() != b.size()) throw DimensionError("perceptual_distance: tap count mismatch");
  Var<S> total(Tensor<S>({1}), false);
  for (std::size_t j = 0; j < a.size(); ++j) {
    require_shape(b[j].shape(), a[j].shape(), "perceptual tap");
    total = add(total, mean(square(sub(a[j], b[j]))));
  }
  return total;
}

template <typename S>
Var<S> perceptual_distance(const Var<S>& a, const Var<S>& b, const PerceptualFn<S>& phi) {
  require_shape(b.shape(), a.shape(), "perceptual_distance");
  return perceptual_distance(phi(a), phi(b));
}

template <typename S>
Tensor<S> perceptual_distance_per_sample(const Tensor<S>& a, const Tensor<S>& b, const PerceptualFn<S>& phi) {
  require_shape(b.shape(), a.shape(), "perceptual_distance_per_sample");
  const auto ta = phi(constant(a));
  const auto tb = phi(constant(b));
  const int n = a.dim(0);
  Tensor<S> out = Tensor<S>::zeros({n});
  for (std::size_t j = 0; j < ta.size(); ++j) {
    const auto& x = ta[j].value();
    const auto& y = tb[j].value();
    const Eigen::Index per = x.size() / n;
    for (int i = 0; i < n; ++i) {
      out[i] += (x.array().segment(i * per, per) - y.array().segment(i * per, per)).square().mean();
    }
  }
  return out;
}

namespace {

template <typename S>
ReconLoss<S> recon(const Var<S>& a, const Var<S>& b, const PerceptualFn<S>& phi, const LossWeights& w) {
  require_shape(b.shape(), a.shape(), "reconstruction loss");
  ReconLoss<S> r;
  r.pixel = mse(a, b);
  r.perceptual = phi ? perceptual_distance(a, b, phi) : Var<S>(Tensor<S>({1}), false);
  r.total = add(scale(r.pixel, S(w.pixel)), scale(r.perceptual, S(w.perceptual)));
  return r;
}

template <typename S>
void require_finite(const Var<S>& v, const char* what) {
  if (v.defined() && !v.value().all_finite()) throw NumericError(std::string("non-finite logit in ") + what);
}

}  // namespace

template <typename S>
ReconLoss<S> loss_rg(const Var<S>& out, const Var<S>& target, const PerceptualFn<S>& phi, const LossWeights& w) {
  return recon(out, target, phi, w);
}

template <typename S>
ReconLoss<S> loss_rr(const Var<S>& out, const Var<S>& erased_input, const Var<S>& mask, const PerceptualFn<S>& phi,
                     const LossWeights& w) {
  require_shape(erased_input.shape(), out.shape(), "loss_rr erased input");
  return recon(mul(out, mask), erased_input, phi, w);
}

template <typename S>
Var<S> loss_adv(const Var<S>& d_real, const Var<S>& d_fake_g, const Var<S>& d_fake_r, AdvSide side) {
  require_finite(d_real, "d_real");
  require_finite(d_fake_g, "d_fake_g");
  require_finite(d_fake_r, "d_fake_r");
  // log(1 - sigmoid(f)) = -softplus(f); log sigmoid(r) = -softplus(-r).
  Var<S> fakes;
  int n_fake = 0;
  for (const Var<S>* f : {&d_fake_g, &d_fake_r}) {
    if (!f->defined()) continue;
    Var<S> t = mean(softplus(*f));
    fakes = fakes.defined() ? add(fakes, t) : t;
    ++n_fake;
  }
  if (n_fake == 0) throw std::invalid_argument("loss_adv needs at least one fake logit set");
  if (side == AdvSide::generator) return scale(fakes, S(-1));
  if (!d_real.defined()) throw std::invalid_argument("loss_adv discriminator side needs real logits");
  return add(scale(mean(softplus(scale(d_real, S(-1)))), S(n_fake)), fakes);
}

double adversarial_value(const Tensor<double>& d_real, const Tensor<double>& d_fake_g, const Tensor<double>& d_fake_r) {
  return -loss_adv(constant(d_real), constant(d_fake_g), constant(d_fake_r), AdvSide::discriminator).value()[0];
}

double total_objective(const LossBreakdown& p, const LossWeights& w) {
  const double t = w.adv * p.l_adv_g + w.rg * p.l_rg + w.rr * p.l_rr;
  if (!std::isfinite(t)) throw NumericError("total objective is not finite");
  return t;
}

template <typename S>
Var<S> total_objective(const Var<S>& l_adv, const Var<S>& l_rg, const Var<S>& l_rr, const LossWeights& w) {
  Var<S> total(Tensor<S>({1}), false);
  if (l_adv.defined() && w.adv != 0.0) total = add(total, scale(l_adv, S(w.adv)));
  if (l_rg.defined() && w.rg != 0.0) total = add(total, scale(l_rg, S(w.rg)));
  if (l_rr.defined() && w.rr != 0.0) total = add(total, scale(l_rr, S(w.rr)));
  return total;
}

#define DIP_OBJECTIVES(S)                                                                                     \
  template class FeatureNet<S>;                                                                               \
  template Var<S> perceptual_distance(const std::vector<Var<S>>&, const std::vector<Var<S>>&);               \
  template Var<S> perceptual_distance(const Var<S>&, const Var<S>&, const PerceptualFn<S>&);                 \
  template Tensor<S> perceptual_distance_per_sample(const Tensor<S>&, const Tensor<S>&, const PerceptualFn<S>&); \
  template ReconLoss<S> loss_rg(const Var<S>&, const Var<S>&, const PerceptualFn<S>&, const LossWeights&);   \
  template ReconLoss<S> loss_rr(const Var<S>&, const Var<S>&, const Var<S>&, const PerceptualFn<S>&,         \
                                const LossWeights&);                                                          \
  template Var<S> loss_adv(const Var<S>&, const Var<S>&, const Var<S>&, AdvSide);                            \
  template Var<S> total_objective(const Var<S>&, const Var<S>&, const Var<S>&, const LossWeights&);

DIP_OBJECTIVES(float)
DIP_OBJECTIVES(double)

}  // namespace dip
