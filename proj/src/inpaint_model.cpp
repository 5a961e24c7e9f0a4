#include "divinpaint/inpaint_model.hpp"

#include "divinpaint/masking.hpp"

namespace dip {

AblationFlags AblationFlags::from_id(int id) {
  switch (id) {
    case 1: return {false, true, false};
    case 2: return {false, true, true};
    case 3: return {true, false, false};
    case 4: return {true, true, false};
    case 5: return {true, true, true};
    default: throw std::invalid_argument("ablation id must be in 1..5, got " + std::to_string(id));
  }
}

int AblationFlags::id() const {
  for (int i = 1; i <= 5; ++i)
    if (from_id(i) == *this) return i;
  return 0;
}

namespace {

template <typename T, typename... Args>
T seeded(std::uint64_t seed, const ModelConfig& cfg, Args... args) {
  Rng r(seed);
  return T(cfg, r, args...);
}

void write_flags(const AblationFlags& f, Config& c) {
  c.set("ablation.full_recons", f.full_recons ? "true" : "false");
  c.set("ablation.gated_mixer", f.gated_mixer ? "true" : "false");
  c.set("ablation.second_stage", f.second_stage ? "true" : "false");
}

AblationFlags read_flags(const Config& c) {
  AblationFlags f;
  f.full_recons = c.get_bool("ablation.full_recons", f.full_recons);
  f.gated_mixer = c.get_bool("ablation.gated_mixer", f.gated_mixer);
  f.second_stage = c.get_bool("ablation.second_stage", f.second_stage);
  return f;
}

}  // namespace

InpaintModel::InpaintModel(const ModelConfig& c, const AblationFlags& f, std::uint64_t seed)
    : cfg(c),
      flags(f),
      mapping(seeded<MappingNet<float>>(seed, c)),
      generator(seeded<Generator<float>>(seed + 1, c)),
      discriminator(seeded<Discriminator<float>>(seed + 2, c)),
      features(seeded<FeatureNet<float>>(seed + 3, c)),
      encoder(seeded<Encoder<float>>(seed + 4, c)),
      mixer(seeded<Mixer<float>>(seed + 5, c, f.gated_mixer)),
      refiner(seeded<SkipRefiner<float>>(seed + 6, c)) {
  freeze_for(Stage::stage1);
}

InpaintModel InpaintModel::from_base(const Checkpoint& base, const AblationFlags& flags, std::uint64_t seed) {
  if (base.stage != Stage::base_gan) throw CheckpointError("expected a base_gan checkpoint, got " + to_string(base.stage));
  if (!base.has_prefix("features")) throw CheckpointError("base checkpoint lacks the feature network");
  InpaintModel m(ModelConfig::from_config(base.config), flags, seed);
  base.get("mapping", m.mapping.params());
  base.get("generator", m.generator.params());
  base.get("discriminator", m.discriminator.params());
  base.get("features", m.features.params());
  m.encoder.set_w_avg(m.mapping.w_avg());
  m.stage = Stage::stage1;
  return m;
}

InpaintModel InpaintModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.stage == Stage::base_gan) throw CheckpointError("expected a stage1 or stage2 checkpoint, got base_gan");
  InpaintModel m(ModelConfig::from_config(ck.config), read_flags(ck.config));
  ck.get("mapping", m.mapping.params());
  ck.get("generator", m.generator.params());
  ck.get("discriminator", m.discriminator.params());
  ck.get("features", m.features.params());
  ck.get("encoder", m.encoder.params());
  ck.get("mixer", m.mixer.params());
  ck.get("refiner", m.refiner.params());
  m.stage = ck.stage;
  m.freeze_for(ck.stage);
  return m;
}

void InpaintModel::save_into(Checkpoint& ck) const {
  ck.stage = stage;
  ck.put("mapping", mapping.params());
  ck.put("generator", generator.params());
  ck.put("discriminator", discriminator.params());
  ck.put("features", features.params());
  ck.put("encoder", encoder.params());
  ck.put("mixer", mixer.params());
  ck.put("refiner", refiner.params());
  cfg.write_to(ck.config);
  write_flags(flags, ck.config);
}

Checkpoint InpaintModel::to_checkpoint() const {
  Checkpoint ck;
  save_into(ck);
  return ck;
}

void InpaintModel::freeze_for(Stage s) {
  mapping.params().set_trainable(false);
  generator.params().set_trainable(false);
  features.params().set_trainable(false);
  discriminator.params().set_trainable(false);
  encoder.params().set_trainable(s == Stage::stage1);
  mixer.params().set_trainable(s == Stage::stage1);
  refiner.params().set_trainable(s == Stage::stage2);
}

Tensor<float> InpaintModel::encode(const Tensor<float>& image, const Tensor<float>& mask) const {
  return encoder.encode(constant(erase(image, mask)), constant(mask)).value();
}

Tensor<float> InpaintModel::map_z(const Tensor<float>& z) const {
  return mapping.map(constant(z)).value();
}

Tensor<float> InpaintModel::random_z(Rng& rng, int n) const {
  return rng.normal_tensor<float>({n, cfg.z_dim});
}

InpaintModel::Completion InpaintModel::complete_from_code(const Tensor<float>& image, const Tensor<float>& mask,
                                                          const Tensor<float>& w_enc, const Tensor<float>& z,
                                                          const StyleTransform& edit, bool compose) const {
  Completion c;
  const Var<float> w_rand = constant(map_z(z));
  c.w_out = mixer.forward(constant(w_enc), w_rand).w_out.value();
  if (edit) c.w_out = edit(c.w_out);
  const Var<float> w = constant(c.w_out);
  const Var<float> in = constant(image), m = constant(mask);
  if (uses_refiner()) {
    const auto r = stage2_forward(generator, refiner, in, m, w);
    c.raw = r.raw.value();
    c.stage1_final = r.stage1_final.value();
  } else {
    c.raw = generator.synthesize(w).image.value();
    c.stage1_final = compose_final(image, mask, c.raw);
  }
  c.final = compose ? compose_final(image, mask, c.raw) : c.raw;
  return c;
}

InpaintModel::Completion InpaintModel::complete(const Tensor<float>& image, const Tensor<float>& mask,
                                                const Tensor<float>& z) const {
  return complete_from_code(image, mask, encode(image, mask), z);
}

CompletionFn completion_fn(const InpaintModel& model) {
  return [&model](const Tensor<float>& images, const Tensor<float>& masks, Rng& rng) {
    return model.complete(images, masks, model.random_z(rng, images.dim(0))).final;
  };
}

}  // namespace dip
