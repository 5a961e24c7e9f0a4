#include "divinpaint/training.hpp"

#include "divinpaint/toy_faces.hpp"

#include <cmath>
#include <sstream>

namespace dip {

TrainConfig TrainConfig::from_config(const Config& c, Stage stage) {
  TrainConfig t;
  t.stage = stage;
  const std::string p = stage == Stage::stage2 ? "stage2." : "stage1.";
  t.total_steps = c.get_int(p + "steps", stage == Stage::stage2 ? 1500 : 3000);
  t.batch = c.get_int(p + "batch", t.batch);
  t.lr = c.get_double(p + "lr", t.lr);
  t.lr_d = c.get_double(p + "lr_d", t.lr_d);
  t.lr_period = c.get_int(p + "lr_period", t.lr_period);
  t.train_discriminator = c.get_bool(p + "train_discriminator", t.train_discriminator);
  t.log_every = c.get_int(p + "log_every", t.log_every);
  t.weights.adv = c.get_double("loss.lambda_adv", t.weights.adv);
  t.weights.rg = c.get_double("loss.lambda_rg", t.weights.rg);
  t.weights.rr = c.get_double("loss.lambda_rr", t.weights.rr);
  t.weights.pixel = c.get_double("loss.pixel", t.weights.pixel);
  t.weights.perceptual = c.get_double("loss.perceptual", t.weights.perceptual);
  if (c.has("train.mask_band")) t.band = MaskBand::parse(c.get_string("train.mask_band", ""));
  if (c.has("ablation.id")) {
    t.ablation = AblationFlags::from_id(c.get_int("ablation.id", 5));
  } else {
    t.ablation.full_recons = c.get_bool("ablation.full_recons", true);
    t.ablation.gated_mixer = c.get_bool("ablation.gated_mixer", true);
    t.ablation.second_stage = c.get_bool("ablation.second_stage", true);
  }
  t.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
  return t;
}

void TrainConfig::write_to(Config& c) const {
  const std::string p = stage == Stage::stage2 ? "stage2." : "stage1.";
  c.set(p + "steps", std::to_string(total_steps));
  c.set(p + "batch", std::to_string(batch));
  std::ostringstream lr_s, lrd_s;
  lr_s << lr;
  lrd_s << lr_d;
  c.set(p + "lr", lr_s.str());
  c.set(p + "lr_d", lrd_s.str());
  c.set(p + "lr_period", std::to_string(period()));
  c.set("train.mask_band", band.label());
  c.set("seed", std::to_string(seed));
}

double lr_schedule(int step, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
  return std::ldexp(cfg.lr, -(step / cfg.period()));
}

namespace {

std::vector<Var<float>> main_params(InpaintModel& m, Stage stage) {
  if (stage == Stage::stage2) return m.refiner.params().trainable();
  auto p = m.encoder.params().trainable();
  const auto q = m.mixer.params().trainable();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

const AdamOptions kAdam{0.9, 0.999, 1e-8};

}  // namespace

Trainer::Trainer(InpaintModel& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      rng_(cfg.seed * 0x100000001b3ULL + (cfg.stage == Stage::stage2 ? 2 : 1)),
      opt_main_(main_params(model, cfg.stage), kAdam),
      opt_d_(model.discriminator.params().trainable(), AdamOptions{0.0, 0.99, 1e-8}) {
  if (cfg.stage == Stage::base_gan) throw std::invalid_argument("Trainer handles stage1 and stage2 only");
  if (!(model.flags == cfg.ablation)) throw std::invalid_argument("model ablation flags differ from the train config");
  model_.freeze_for(cfg.stage);
  model_.refiner.set_training(cfg.stage == Stage::stage2);
}

StepOutcome Trainer::step() {
  InpaintModel& m = model_;
  const int n = cfg_.batch;
  const int res = m.cfg.resolution;
  const bool stage2 = cfg_.stage == Stage::stage2;
  const bool path_a = cfg_.ablation.full_recons;
  const PerceptualFn<float> phi = perceptual_of(m.features);

  StepOutcome out;
  out.step = step_;
  out.lr = lr_schedule(step_, cfg_);

  // Training images: frozen-GAN samples, or rendered faces for the real-image regime.
  Tensor<float> w_g, image;
  if (path_a) {
    const Tensor<float> z_g = fixed_.z_g ? *fixed_.z_g : m.random_z(rng_, n);
    w_g = m.map_z(z_g);
    image = m.generator.synthesize(constant(w_g)).image.value();
  } else {
    image = sample_face_batch(rng_, n, res).images;
  }
  const int nb = image.dim(0);
  const Tensor<float> mask = fixed_.mask ? *fixed_.mask : sample_mask_batch(cfg_.band, res, nb, rng_);
  const Tensor<float> erased = erase(image, mask);
  const Tensor<float> z_r = fixed_.z_r ? *fixed_.z_r : m.random_z(rng_, nb);
  const Tensor<float> w_r = m.map_z(z_r);

  const Var<float> image_v = constant(image), mask_v = constant(mask), erased_v = constant(erased);
  const Var<float> w_enc = m.encoder.encode(erased_v, mask_v);

  // Generator output and composite for one path.
  auto run_path = [&](const Tensor<float>& w_rand) -> std::pair<Var<float>, Var<float>> {
    const Var<float> w_out = m.mixer.forward(w_enc, constant(w_rand)).w_out;
    if (stage2) {
      const auto r = stage2_forward(m.generator, m.refiner, image_v, mask_v, w_out);
      return {r.raw, r.final};
    }
    const Var<float> raw = m.generator.synthesize(w_out).image;
    return {raw, compose_final(image_v, mask_v, raw)};
  };

  Var<float> l_rg, fin_a;
  if (path_a) {
    auto [raw_a, f_a] = run_path(w_g);
    fin_a = f_a;
    const auto rg = loss_rg(raw_a, image_v, phi, cfg_.weights);
    l_rg = rg.total;
    out.path_a.l_rg = rg.total.value()[0];
    out.path_a.rg_pixel = rg.pixel.value()[0];
    out.path_a.rg_perceptual = rg.perceptual.value()[0];
    out.path_a_l2 = rg.pixel.value()[0];
  }
  auto [raw_b, fin_b] = run_path(w_r);
  const auto rr = loss_rr(raw_b, erased_v, mask_v, phi, cfg_.weights);
  out.path_b.l_rr = rr.total.value()[0];
  out.path_b.rr_pixel = rr.pixel.value()[0];
  out.path_b.rr_perceptual = rr.perceptual.value()[0];

  // Encoder-side adversarial term through a frozen discriminator.
  const Var<float> d_fa = path_a ? m.discriminator.forward(fin_a) : Var<float>();
  const Var<float> d_fb = m.discriminator.forward(fin_b);
  const Var<float> l_adv_g = loss_adv(Var<float>(), d_fa, d_fb, AdvSide::generator);
  const Var<float> total = total_objective(l_adv_g, l_rg, rr.total, cfg_.weights);

  out.losses.l_rg = out.path_a.l_rg;
  out.losses.rg_pixel = out.path_a.rg_pixel;
  out.losses.rg_perceptual = out.path_a.rg_perceptual;
  out.losses.l_rr = out.path_b.l_rr;
  out.losses.rr_pixel = out.path_b.rr_pixel;
  out.losses.rr_perceptual = out.path_b.rr_perceptual;
  out.losses.l_adv_g = l_adv_g.value()[0];
  out.losses.total = total.value()[0];
  if (!std::isfinite(out.losses.total)) {
    throw NumericError("non-finite training loss at step " + std::to_string(step_));
  }
  backward(total);
  out.grad_norm = opt_main_.step(out.lr);

  if (cfg_.train_discriminator) {
    m.discriminator.params().set_trainable(true);
    const Var<float> d_real = m.discriminator.forward(image_v);
    const Var<float> dd_fa = path_a ? m.discriminator.forward(fin_a.detach()) : Var<float>();
    const Var<float> dd_fb = m.discriminator.forward(fin_b.detach());
    const Var<float> l_d = loss_adv(d_real, dd_fa, dd_fb, AdvSide::discriminator);
    out.losses.l_adv_d = l_d.value()[0];
    if (!std::isfinite(out.losses.l_adv_d)) {
      throw NumericError("non-finite discriminator loss at step " + std::to_string(step_));
    }
    backward(l_d);
    out.grad_norm_d = opt_d_.step(cfg_.lr_d * out.lr / cfg_.lr);
    m.discriminator.params().set_trainable(false);
  }
  out.path_a.l_adv_g = out.path_b.l_adv_g = out.losses.l_adv_g;
  out.path_a.l_adv_d = out.path_b.l_adv_d = out.losses.l_adv_d;
  out.path_a.total = total_objective(out.path_a, cfg_.weights);
  out.path_b.total = total_objective(out.path_b, cfg_.weights);
  ++step_;
  return out;
}

std::string outcome_json(const StepOutcome& o, Stage stage) {
  std::ostringstream os;
  os.precision(8);
  os << "{\"stage\":\"" << to_string(stage) << "\",\"step\":" << o.step << ",\"l_rg\":" << o.losses.l_rg
     << ",\"l_rr\":" << o.losses.l_rr << ",\"l_adv_d\":" << o.losses.l_adv_d << ",\"l_adv_g\":" << o.losses.l_adv_g
     << ",\"total\":" << o.losses.total << ",\"rg_pixel\":" << o.losses.rg_pixel
     << ",\"rg_perceptual\":" << o.losses.rg_perceptual << ",\"rr_pixel\":" << o.losses.rr_pixel
     << ",\"rr_perceptual\":" << o.losses.rr_perceptual << ",\"grad_norm\":" << o.grad_norm
     << ",\"grad_norm_d\":" << o.grad_norm_d << ",\"lr\":" << o.lr << "}";
  return os.str();
}

namespace {

Checkpoint run(InpaintModel& model, const TrainConfig& cfg, std::ostream* log, const std::string& last_good) {
  Trainer trainer(model, cfg);
  for (int s = 0; s < cfg.total_steps; ++s) {
    StepOutcome o;
    try {
      o = trainer.step();
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) +
                         (last_good.empty() ? "" : "; last good checkpoint: " + last_good));
    }
    if (log && cfg.log_every > 0 && (s % cfg.log_every == 0 || s + 1 == cfg.total_steps)) {
      *log << outcome_json(o, cfg.stage) << '\n';
      log->flush();
    }
  }
  model.refiner.set_training(false);
  model.stage = cfg.stage;
  model.freeze_for(cfg.stage);
  Checkpoint ck = model.to_checkpoint();
  cfg.write_to(ck.config);
  ck.rng_state = trainer.rng().state();
  return ck;
}

}  // namespace

Checkpoint train_stage1(InpaintModel& model, const TrainConfig& cfg, std::ostream* log, const std::string& last_good) {
  if (cfg.stage != Stage::stage1) throw std::invalid_argument("train_stage1 needs a stage1 config");
  return run(model, cfg, log, last_good);
}

Checkpoint train_stage2(InpaintModel& model, const TrainConfig& cfg, std::ostream* log, const std::string& last_good) {
  if (cfg.stage != Stage::stage2) throw std::invalid_argument("train_stage2 needs a stage2 config");
  if (model.stage != Stage::stage1) throw std::invalid_argument("train_stage2 starts from a stage1 model");
  if (!cfg.ablation.second_stage) throw std::invalid_argument("ablation flags disable the second stage");
  return run(model, cfg, log, last_good);
}

Checkpoint pretrain(const ModelConfig& mcfg, const PretrainConfig& pcfg, const FeatureTrainConfig& fcfg,
                    std::ostream* log) {
  Checkpoint ck = pretrain_base_gan(mcfg, pcfg, log);
  Rng rng(fcfg.seed + 3);
  FeatureNet<float> features(mcfg, rng);
  const auto acc = train_feature_net(features, mcfg, fcfg, log);
  ck.put("features", features.params());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    std::ostringstream v;
    v << acc[i];
    ck.config.set(std::string("features.accuracy.") + kBinaryAttributes[i], v.str());
  }
  return ck;
}

}  // namespace dip
