#include "divinpaint/stylegan_lite.hpp"

#include "divinpaint/toy_faces.hpp"

#include <cmath>

namespace dip {

template <typename S>
Var<S> inject(const Var<S>& g_f, const SkipPair<S>& maps) {
  require_shape(maps.mult.shape(), g_f.shape(), "inject G_mult");
  require_shape(maps.add.shape(), g_f.shape(), "inject G_add");
  return add(add(g_f, mul(g_f, maps.mult)), maps.add);
}

// ---------------------------------------------------------------- mapping

template <typename S>
MappingNet<S>::MappingNet(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  int in = cfg_.z_dim;
  for (int i = 0; i < cfg_.mapping_layers; ++i) {
    layers_.emplace_back(ps_, "fc" + std::to_string(i), in, cfg_.w_dim, rng, he_std(in), true, 0.0, true);
    in = cfg_.w_dim;
  }
  w_avg_ = ps_.add_buffer("w_avg", Tensor<S>::zeros({cfg_.w_dim}));
}

template <typename S>
Var<S> MappingNet<S>::forward(const Var<S>& z) const {
  if (z.shape().size() != 2 || z.dim(1) != cfg_.z_dim) {
    throw DimensionError("mapping expects z [N," + std::to_string(cfg_.z_dim) + "], got " + shape_str(z.shape()));
  }
  const int n = z.dim(0);
  // Pixel norm on z keeps the input on the sphere; eps makes z = 0 finite.
  Var<S> ms = scale(sum_axis(square(z), 1), S(1) / S(cfg_.z_dim));
  Var<S> x = mul(z, reshape(rsqrt(ms, S(1e-8)), {n, 1}));
  for (const auto& l : layers_) x = leaky_relu(l(x));
  return x;
}

template <typename S>
Var<S> MappingNet<S>::broadcast(const Var<S>& w) const {
  require_shape(w.shape(), {w.dim(0), cfg_.w_dim}, "broadcast w");
  const int n = w.dim(0);
  return expand(reshape(w, {n, 1, cfg_.w_dim}), {n, cfg_.num_styles(), cfg_.w_dim});
}

template <typename S>
Var<S> MappingNet<S>::map(const Var<S>& z) const {
  return broadcast(forward(z));
}

template <typename S>
void MappingNet<S>::update_w_avg(Rng& rng, int samples) {
  Tensor<S> acc = Tensor<S>::zeros({cfg_.w_dim});
  const int chunk = 256;
  for (int done = 0; done < samples; done += chunk) {
    const int n = std::min(chunk, samples - done);
    Tensor<S> w = forward(constant(rng.normal_tensor<S>({n, cfg_.z_dim}))).value();
    for (int i = 0; i < n; ++i) acc.array() += w.array().segment(static_cast<Eigen::Index>(i) * cfg_.w_dim, cfg_.w_dim);
  }
  acc.array() /= S(samples);
  Var<S> buf = w_avg_;
  buf.mutable_value() = acc;
}

// ---------------------------------------------------------------- generator

template <typename S>
Generator<S>::Generator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto res = cfg_.resolutions();
  const int c4 = cfg_.channels_at(4);
  const_input_ = ps_.add("const", rng.normal_tensor<S>({1, c4, 4, 4}));
  int prev = c4;
  for (int r : res) {
    const int c = cfg_.channels_at(r);
    const std::string p = "b" + std::to_string(r);
    Level lv;
    if (r > 4) lv.conv0 = ModulatedConv<S>(ps_, p + ".conv0", cfg_.w_dim, prev, c, 3, rng, true);
    lv.conv1 = ModulatedConv<S>(ps_, p + ".conv1", cfg_.w_dim, r > 4 ? c : prev, c, 3, rng, true);
    lv.to_rgb = ModulatedConv<S>(ps_, p + ".torgb", cfg_.w_dim, c, 3, 1, rng, false);
    levels_.push_back(std::move(lv));
    prev = c;
  }
}

template <typename S>
Shape Generator<S>::feature_shape(int res) const {
  return {cfg_.channels_at(res), res, res};
}

template <typename S>
Synthesis<S> Generator<S>::synthesize(const Var<S>& w, const SkipMaps<S>* skips) const {
  const int ns = cfg_.num_styles();
  if (w.shape().size() != 3 || w.dim(1) != ns || w.dim(2) != cfg_.w_dim) {
    throw DimensionError("synthesize expects w [N," + std::to_string(ns) + "," + std::to_string(cfg_.w_dim) +
                         "], got " + shape_str(w.shape()));
  }
  const int n = w.dim(0);
  if (skips) {
    const auto inj = cfg_.injection_resolutions();
    for (const auto& [r, pair] : *skips) {
      if (std::find(inj.begin(), inj.end(), r) == inj.end()) {
        throw DimensionError("skip maps at resolution " + std::to_string(r) + " outside the injection set");
      }
      Shape want = feature_shape(r);
      want.insert(want.begin(), n);
      require_shape(pair.mult.shape(), want, "skip G_mult");
      require_shape(pair.add.shape(), want, "skip G_add");
    }
  }
  auto style = [&](int i) { return reshape(slice(w, 1, i, i + 1), {n, cfg_.w_dim}); };

  Synthesis<S> out;
  const auto res = cfg_.resolutions();
  Var<S> x = expand(const_input_, {n, const_input_.dim(1), 4, 4});
  Var<S> rgb;
  for (std::size_t k = 0; k < res.size(); ++k) {
    const Level& lv = levels_[k];
    const int r = res[k];
    int s_idx;
    if (k == 0) {
      x = leaky_relu(lv.conv1(x, style(0)));
      s_idx = 1;
    } else {
      x = upsample2x(x);
      x = leaky_relu(lv.conv0(x, style(2 * static_cast<int>(k) - 1)));
      x = leaky_relu(lv.conv1(x, style(2 * static_cast<int>(k))));
      s_idx = 2 * static_cast<int>(k) + 1;
    }
    if (skips) {
      auto it = skips->find(r);
      if (it != skips->end()) x = inject(x, it->second);
    }
    out.features[r] = x;
    Var<S> y = lv.to_rgb(x, style(s_idx));
    rgb = k == 0 ? y : add(upsample2x(rgb), y);
  }
  out.image = tanh(rgb);
  return out;
}

// ---------------------------------------------------------------- discriminator

namespace {

// Mean over features of the across-batch standard deviation, as one extra
// constant channel; lets the critic see sample diversity.
template <typename S>
Var<S> batch_stddev(const Var<S>& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int f = c * h * w;
  Var<S> flat = reshape(x, {n, f});
  Var<S> mu = scale(sum_axis(flat, 0), S(1) / S(n));
  Var<S> centered = sub(flat, expand(reshape(mu, {1, f}), {n, f}));
  Var<S> var = scale(sum_axis(square(centered), 0), S(1) / S(n));
  const S eps = S(1e-8);
  Var<S> sd = mul(add_scalar(var, eps), rsqrt(var, eps));
  Var<S> m = reshape(mean(sd), {1, 1, 1, 1});
  return expand(m, {n, 1, h, w});
}

}  // namespace

template <typename S>
Discriminator<S>::Discriminator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto res = cfg_.resolutions();
  const int top = cfg_.resolution;
  from_rgb_ = Conv2d<S>(ps_, "fromrgb", 3, cfg_.channels_at(top), 1, rng, he_std(3), true, true);
  for (int r = top; r > 4; r /= 2) {
    const int c = cfg_.channels_at(r), c2 = cfg_.channels_at(r / 2);
    const std::string p = "b" + std::to_string(r);
    blocks_.emplace_back(Conv2d<S>(ps_, p + ".conv0", c, c, 3, rng, he_std(c * 9), true, true),
                         Conv2d<S>(ps_, p + ".conv1", c, c2, 3, rng, he_std(c * 9), true, true));
  }
  const int c4 = cfg_.channels_at(4);
  final_conv_ = Conv2d<S>(ps_, "b4.conv", c4 + 1, c4, 3, rng, he_std((c4 + 1) * 9), true, true);
  fc_ = Linear<S>(ps_, "fc", c4 * 16, c4, rng, he_std(c4 * 16), true, 0.0, true);
  out_ = Linear<S>(ps_, "out", c4, 1, rng, he_std(c4, 1.0), true, 0.0, true);
}

template <typename S>
Var<S> Discriminator<S>::forward(const Var<S>& img) const {
  const int r = cfg_.resolution;
  if (img.shape().size() != 4 || img.dim(1) != 3 || img.dim(2) != r || img.dim(3) != r) {
    throw DimensionError("discriminator expects [N,3," + std::to_string(r) + "," + std::to_string(r) + "], got " +
                         shape_str(img.shape()));
  }
  const int n = img.dim(0);
  Var<S> x = leaky_relu(from_rgb_(img));
  for (const auto& [c0, c1] : blocks_) {
    x = leaky_relu(c0(x));
    x = avgpool2x(leaky_relu(c1(x)));
  }
  x = concat(std::vector<Var<S>>{x, batch_stddev(x)}, 1);
  x = leaky_relu(final_conv_(x));
  x = leaky_relu(fc_(reshape(x, {n, x.dim(1) * 16})));
  return reshape(out_(x), {n});
}

// ---------------------------------------------------------------- base GAN

BaseGan::BaseGan(const ModelConfig& c, std::uint64_t seed)
    : cfg(c),
      mapping([&] {
        Rng r(seed);
        return MappingNet<float>(c, r);
      }()),
      generator([&] {
        Rng r(seed + 1);
        return Generator<float>(c, r);
      }()),
      discriminator([&] {
        Rng r(seed + 2);
        return Discriminator<float>(c, r);
      }()) {}

void BaseGan::save_into(Checkpoint& ck) const {
  ck.put("mapping", mapping.params());
  ck.put("generator", generator.params());
  ck.put("discriminator", discriminator.params());
  cfg.write_to(ck.config);
}

void BaseGan::load_from(const Checkpoint& ck) {
  ck.get("mapping", mapping.params());
  ck.get("generator", generator.params());
  ck.get("discriminator", discriminator.params());
}

Tensor<float> BaseGan::sample(Rng& rng, int n) const {
  Var<float> z = constant(rng.normal_tensor<float>({n, cfg.z_dim}));
  return generator.synthesize(mapping.map(z)).image.value();
}

PretrainConfig PretrainConfig::from_config(const Config& c) {
  PretrainConfig p;
  p.steps = c.get_int("pretrain.steps", p.steps);
  p.batch = c.get_int("pretrain.batch", p.batch);
  p.lr = c.get_double("pretrain.lr", p.lr);
  p.mapping_lr_mult = c.get_double("pretrain.mapping_lr_mult", p.mapping_lr_mult);
  p.r1_gamma = c.get_double("pretrain.r1_gamma", p.r1_gamma);
  p.r1_every = c.get_int("pretrain.r1_every", p.r1_every);
  p.r1_eps = c.get_double("pretrain.r1_eps", p.r1_eps);
  p.log_every = c.get_int("pretrain.log_every", p.log_every);
  p.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<int>(p.seed)));
  return p;
}

namespace {

void check_finite(double v, const char* what, int step) {
  if (!std::isfinite(v)) {
    throw NumericError(std::string("base GAN training diverged: ") + what + " is not finite at step " +
                       std::to_string(step));
  }
}

}  // namespace

Checkpoint pretrain_base_gan(const ModelConfig& mcfg, const PretrainConfig& pcfg, std::ostream* log) {
  BaseGan gan(mcfg, pcfg.seed);
  Rng rng(pcfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const AdamOptions gan_adam{0.0, 0.99, 1e-8};
  Adam<float> opt_map(gan.mapping.params().trainable(), gan_adam);
  Adam<float> opt_g(gan.generator.params().trainable(), gan_adam);
  Adam<float> opt_d(gan.discriminator.params().trainable(), gan_adam);
  const int n = pcfg.batch;
  const int res = mcfg.resolution;

  for (int step = 0; step < pcfg.steps; ++step) {
    // Discriminator: softplus(D(fake)) + softplus(-D(real)).
    FaceBatch real = sample_face_batch(rng, n, res);
    Var<float> z = constant(rng.normal_tensor<float>({n, mcfg.z_dim}));
    gan.generator.params().set_trainable(false);
    gan.mapping.params().set_trainable(false);
    Tensor<float> fake = gan.generator.synthesize(gan.mapping.map(z)).image.value();
    gan.generator.params().set_trainable(true);
    gan.mapping.params().set_trainable(true);
    Var<float> real_v = constant(real.images);
    Var<float> d_real = gan.discriminator.forward(real_v);
    Var<float> d_fake = gan.discriminator.forward(constant(fake));
    Var<float> loss_d = add(mean(softplus(d_fake)), mean(softplus(scale(d_real, -1.0f))));
    if (pcfg.r1_gamma > 0 && pcfg.r1_every > 0 && step % pcfg.r1_every == 0) {
      // E_u[((D(x + eps u) - D(x)) / eps)^2] approximates |grad_x D|^2.
      Tensor<float> u = rng.normal_tensor<float>(real.images.shape());
      Tensor<float> shifted = real.images;
      shifted.array() += static_cast<float>(pcfg.r1_eps) * u.array();
      Var<float> diff = scale(sub(gan.discriminator.forward(constant(shifted)), d_real),
                              static_cast<float>(1.0 / pcfg.r1_eps));
      loss_d = add(loss_d, scale(mean(square(diff)), static_cast<float>(0.5 * pcfg.r1_gamma * pcfg.r1_every)));
    }
    const double ld = loss_d.value()[0];
    check_finite(ld, "discriminator loss", step);
    backward(loss_d);
    opt_d.step(pcfg.lr);

    // Generator: softplus(-D(G(z))).
    gan.discriminator.params().set_trainable(false);
    Var<float> z2 = constant(rng.normal_tensor<float>({n, mcfg.z_dim}));
    Var<float> gen = gan.generator.synthesize(gan.mapping.map(z2)).image;
    Var<float> loss_g = mean(softplus(scale(gan.discriminator.forward(gen), -1.0f)));
    const double lg = loss_g.value()[0];
    check_finite(lg, "generator loss", step);
    backward(loss_g);
    gan.discriminator.params().set_trainable(true);
    opt_g.step(pcfg.lr);
    opt_map.step(pcfg.lr * pcfg.mapping_lr_mult);

    if (log && pcfg.log_every > 0 && (step % pcfg.log_every == 0 || step + 1 == pcfg.steps)) {
      *log << "{\"stage\":\"base_gan\",\"step\":" << step << ",\"loss_d\":" << ld << ",\"loss_g\":" << lg << "}\n";
      log->flush();
    }
  }
  if (pcfg.steps > 0) {
    Rng avg_rng(pcfg.seed + 17);
    gan.mapping.update_w_avg(avg_rng, 4096);
  }

  Checkpoint ck;
  ck.stage = Stage::base_gan;
  gan.save_into(ck);
  ck.config.set("pretrain.steps", std::to_string(pcfg.steps));
  ck.config.set("pretrain.batch", std::to_string(pcfg.batch));
  ck.config.set("seed", std::to_string(pcfg.seed));
  ck.rng_state = rng.state();
  return ck;
}

template Var<float> inject(const Var<float>&, const SkipPair<float>&);
template Var<double> inject(const Var<double>&, const SkipPair<double>&);
template class MappingNet<float>;
template class MappingNet<double>;
template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace dip
