#include "cli.hpp"

#include "divinpaint/editing.hpp"
#include "divinpaint/evaluation.hpp"
#include "divinpaint/image_io.hpp"
#include "divinpaint/masking.hpp"
#include "divinpaint/service.hpp"
#include "divinpaint/toy_faces.hpp"
#include "divinpaint/training.hpp"

#include <CLI11.hpp>
#include <boost/iostreams/stream.hpp>
#include <boost/iostreams/tee.hpp>
#include <httplib.h>

#include <filesystem>
#include <fstream>
#include <optional>

namespace dip {

namespace {

namespace fs = std::filesystem;
using TeeStream = boost::iostreams::stream<boost::iostreams::tee_device<std::ostream, std::ofstream>>;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flags shared by every subcommand.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* sub, Common& c, const std::string& default_out) {
  sub->add_option("--config", c.config_path, "Flat key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override a config key (key=value), repeatable");
  sub->add_option("--seed", c.seed, "Seed; overrides the config key 'seed'");
  c.out_dir = default_out;
  sub->add_option("--out", c.out_dir, "Run directory")->capture_default_str();
}

/// File config, then --set overrides, then --seed.
Config resolve(const Common& c) {
  Config cfg = c.config_path.empty() ? Config{} : Config::load(c.config_path);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  if (!cfg.has("seed")) cfg.set("seed", "0");
  return cfg;
}

std::uint64_t seed_of(const Config& c) { return std::stoull(c.get_string("seed", "0")); }

/// Prints the resolved config and seed, creates the run directory and
/// snapshots the config into it.
fs::path start_run(const std::string& name, const Config& cfg, const Common& c, std::ostream& out) {
  out << "# " << name << " resolved config\n" << cfg.dump() << "# seed " << seed_of(cfg) << "\n";
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  write_file_atomic((dir / (name + ".conf")).string(), cfg.dump());
  out << "# run directory " << fs::absolute(dir).string() << "\n" << std::flush;
  return dir;
}

std::string flags_line(const AblationFlags& f) {
  auto mark = [](bool b) { return b ? "on" : "off"; };
  return std::string("full_recons=") + mark(f.full_recons) + " gated_mixer=" + mark(f.gated_mixer) +
         " second_stage=" + mark(f.second_stage);
}

AblationFlags flags_from(const Config& c) {
  return AblationFlags::from_id(c.get_int("ablation.id", 5));
}

std::vector<DirectionVector> directions_for(const std::string& explicit_path, const Checkpoint& ck) {
  const std::string path = explicit_path.empty() ? ck.config.get_string("editing.directions", "") : explicit_path;
  if (path.empty()) return {};
  return load_directions(path);
}

/// Rendered toy faces plus every test-corpus mask file.
int cmd_gen_corpus(const Common& c, int count, int res, std::ostream& out) {
  Config cfg = resolve(c);
  cfg.set("corpus.count", std::to_string(count));
  cfg.set("corpus.resolution", std::to_string(res));
  const auto dir = start_run("gen-corpus", cfg, c, out);
  write_corpus(dir.string(), count, res, seed_of(cfg));
  out << "wrote " << count << " faces to " << dir.string() << "\n";
  return 0;
}

int cmd_pretrain(const Common& c, std::ostream& out) {
  const Config cfg = resolve(c);
  const auto dir = start_run("pretrain", cfg, c, out);
  const ModelConfig mcfg = ModelConfig::from_config(cfg);
  PretrainConfig pcfg = PretrainConfig::from_config(cfg);
  FeatureTrainConfig fcfg = FeatureTrainConfig::from_config(cfg);
  std::ofstream log_file(dir / "pretrain.log");
  TeeStream log(boost::iostreams::tee_device<std::ostream, std::ofstream>(out, log_file));
  Checkpoint ck = pretrain(mcfg, pcfg, fcfg, &log);
  log.flush();

  // Directions are fitted on the frozen base so every later stage shares them.
  InpaintModel base = InpaintModel::from_base(ck, AblationFlags{});
  DirectionTrainConfig dcfg;
  dcfg.samples = cfg.get_int("editing.samples", dcfg.samples);
  dcfg.seed = seed_of(cfg) + 77;
  std::vector<std::string> names(kBinaryAttributes.begin(), kBinaryAttributes.end()), skipped;
  const auto dirs = learn_attribute_directions(base.mapping, base.generator, base.features, names, dcfg, &skipped);
  for (const auto& s : skipped) out << "warning: no direction for '" << s << "' (classifier sees one class only)\n";
  const auto dir_path = fs::absolute(dir / "directions.json").string();
  save_directions(dir_path, dirs);
  ck.config.merge(cfg);
  ck.config.set("editing.directions", dir_path);
  ck.save((dir / "base.ckpt").string());
  out << "saved " << (dir / "base.ckpt").string() << " with " << dirs.size() << " directions\n";
  return 0;
}

/// Trains stage 1 (and stage 2 when the flags ask for it) on top of a base checkpoint.
int train_from_base(const Config& cfg, const fs::path& dir, const std::string& base_path, const AblationFlags& flags,
                    bool run_stage2, std::ostream& out) {
  const Checkpoint base = Checkpoint::load(base_path);
  InpaintModel m = InpaintModel::from_base(base, flags, seed_of(cfg));
  const auto directions = base.config.get_string("editing.directions", "");
  std::ofstream log_file(dir / "train.log", std::ios::app);
  TeeStream log(boost::iostreams::tee_device<std::ostream, std::ofstream>(out, log_file));

  Config c1 = cfg;
  c1.set("ablation.id", std::to_string(flags.id()));
  Checkpoint ck = train_stage1(m, TrainConfig::from_config(c1, Stage::stage1), &log, base_path);
  log.flush();
  ck.config.merge(c1);
  if (!directions.empty()) ck.config.set("editing.directions", directions);
  ck.save((dir / "stage1.ckpt").string());
  out << "saved " << (dir / "stage1.ckpt").string() << "\n";
  if (!run_stage2) return 0;

  Checkpoint ck2 = train_stage2(m, TrainConfig::from_config(c1, Stage::stage2), &log, (dir / "stage1.ckpt").string());
  log.flush();
  ck2.config.merge(c1);
  if (!directions.empty()) ck2.config.set("editing.directions", directions);
  ck2.save((dir / "stage2.ckpt").string());
  out << "saved " << (dir / "stage2.ckpt").string() << "\n";
  return 0;
}

int cmd_train_stage1(const Common& c, const std::string& base, const std::string& band, std::ostream& out) {
  Config cfg = resolve(c);
  if (!band.empty()) cfg.set("train.mask_band", band);
  const auto flags = flags_from(cfg);
  const auto dir = start_run("train-stage1", cfg, c, out);
  out << "# ablation " << flags.id() << ": " << flags_line(flags) << "\n";
  return train_from_base(cfg, dir, base, flags, false, out);
}

int cmd_train_stage2(const Common& c, const std::string& stage1, const std::string& band, std::ostream& out) {
  Config cfg = resolve(c);
  if (!band.empty()) cfg.set("train.mask_band", band);
  const auto dir = start_run("train-stage2", cfg, c, out);
  const Checkpoint ck1 = Checkpoint::load(stage1);
  InpaintModel m = InpaintModel::from_checkpoint(ck1);
  std::ofstream log_file(dir / "train.log", std::ios::app);
  TeeStream log(boost::iostreams::tee_device<std::ostream, std::ofstream>(out, log_file));
  Config c2 = cfg;
  c2.set("ablation.id", std::to_string(m.flags.id()));
  Checkpoint ck = train_stage2(m, TrainConfig::from_config(c2, Stage::stage2), &log, stage1);
  log.flush();
  ck.config.merge(c2);
  const auto directions = ck1.config.get_string("editing.directions", "");
  if (!directions.empty()) ck.config.set("editing.directions", directions);
  ck.save((dir / "stage2.ckpt").string());
  out << "saved " << (dir / "stage2.ckpt").string() << "\n";
  return 0;
}

std::vector<MaskBand> parse_bands(const std::string& text) {
  std::vector<MaskBand> bands;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find(';', start);
    const auto part = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
    if (!part.empty()) bands.push_back(MaskBand::parse(part));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  if (bands.empty()) throw UsageError("--bands needs at least one lo,hi pair");
  return bands;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& bands_text, std::ostream& out) {
  const Config cfg = resolve(c);
  const auto bands = parse_bands(bands_text);
  const auto dir = start_run("eval", cfg, c, out);
  const InpaintModel m = InpaintModel::from_checkpoint(Checkpoint::load(checkpoint));
  SweepOptions opt;
  opt.n_per_band = cfg.get_int("eval.n_per_band", opt.n_per_band);
  opt.batch = cfg.get_int("eval.batch", opt.batch);
  opt.with_ids = cfg.get_bool("eval.ids", opt.with_ids);
  opt.resolution = m.cfg.resolution;
  opt.seed = seed_of(cfg);
  const MetricsReport report = difficulty_sweep(m, bands, opt);
  const std::string text = report.to_text();
  write_file_atomic((dir / "metrics.txt").string(), text);
  out << text;
  return 0;
}

struct ImageJob {
  std::string checkpoint, image, mask, band, output, directions, direction;
  double strength = 0;
  bool whole_image = false;
};

/// Loads the inputs, runs one completion with z drawn from the seed and writes the PNG.
int complete_one(const Common& c, const ImageJob& job, bool editing, std::ostream& out) {
  const Config cfg = resolve(c);
  const auto dir = start_run(editing ? "edit" : "inpaint", cfg, c, out);
  const Checkpoint ck = Checkpoint::load(job.checkpoint);
  const InpaintModel m = InpaintModel::from_checkpoint(ck);
  const int r = m.cfg.resolution;
  const auto image = decode_png_rgb(read_file(job.image));
  if (image.dim(-1) != r || image.dim(-2) != r) {
    throw ImageFormatError("image is " + shape_str(image.shape()) + ", the checkpoint expects " + std::to_string(r) +
                           "x" + std::to_string(r));
  }
  Tensor<float> mask;
  if (!job.mask.empty()) {
    mask = decode_png_mask(read_file(job.mask));
  } else {
    mask = sample_mask(MaskBand::parse(job.band), r, seed_of(cfg) ^ 0x6d61736bULL);
    write_file_atomic((dir / "mask.png").string(), encode_png_mask(mask));
  }
  if (mask.dim(-1) != r || mask.dim(-2) != r) throw ImageFormatError("mask size does not match the image");
  const auto img4 = image.reshaped({1, 3, r, r});
  const auto mask4 = mask.reshaped({1, 1, r, r});
  Rng zr(seed_of(cfg));
  const auto z = m.random_z(zr, 1);
  StyleTransform edit;
  std::vector<DirectionVector> dirs;
  if (editing) {
    dirs = directions_for(job.directions, ck);
    const DirectionVector d = find_direction(dirs, job.direction);
    edit = [d, s = job.strength * d.sigma](const Tensor<float>& w) { return apply_edit(w, d, s); };
  }
  const auto result = m.complete_from_code(img4, mask4, m.encode(img4, mask4), z, edit, !job.whole_image);
  const std::string path = job.output.empty() ? (dir / (editing ? "edit.png" : "inpaint.png")).string() : job.output;
  write_file_atomic(path, encode_png_rgb(result.final.reshaped({3, r, r})));
  out << "wrote " << path << "\n";
  return 0;
}

int cmd_serve(const Common& c, const std::string& checkpoint, const std::string& directions, const std::string& host,
              int port, const std::string& persist, int max_sessions, std::ostream& out) {
  const Config cfg = resolve(c);
  start_run("serve", cfg, c, out);
  std::shared_ptr<const InpaintModel> model;
  std::vector<DirectionVector> dirs;
  if (!checkpoint.empty()) {
    const Checkpoint ck = Checkpoint::load(checkpoint);
    model = std::make_shared<const InpaintModel>(InpaintModel::from_checkpoint(ck));
    dirs = directions_for(directions, ck);
  } else {
    out << "warning: no checkpoint; inference endpoints answer no_checkpoint\n";
  }
  ServiceOptions opt;
  opt.max_sessions = static_cast<std::size_t>(max_sessions);
  opt.persistence_path = persist;
  opt.seed = seed_of(cfg);
  InpaintService service(model, std::move(dirs), opt);
  httplib::Server server;
  bind_routes(server, service);
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  out << "listening on http://" << host << ":" << bound << "\n" << std::flush;
  server.listen_after_bind();
  return 0;
}

int cmd_ablation(const Common& c, int id, const std::string& base, bool dry_run, std::ostream& out) {
  Config cfg = resolve(c);
  cfg.set("ablation.id", std::to_string(id));
  const auto flags = AblationFlags::from_id(id);
  const auto dir = start_run("ablation", cfg, c, out);
  out << "ablation " << id << ": " << flags_line(flags) << "\n";
  if (dry_run) return 0;
  if (base.empty()) throw UsageError("ablation: --base is required unless --dry-run is given");
  return train_from_base(cfg, dir, base, flags, flags.second_stage, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Inpainting with a frozen style-based generator: data, training, evaluation, editing and serving.",
               "divinpaint"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-corpus", "Render a toy-face corpus with attribute labels");
  int count = 1000, res = 32;
  add_common(gen, common, "runs/corpus");
  gen->add_option("--count", count, "Number of faces")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--resolution", res, "Side length in pixels")->capture_default_str();

  auto* pre = app.add_subcommand("pretrain", "Train the base GAN, feature network and edit directions");
  add_common(pre, common, "runs/pretrain");

  std::string base, stage1_path, band;
  auto* s1 = app.add_subcommand("train-stage1", "Train encoder and mixer on a base checkpoint");
  add_common(s1, common, "runs/stage1");
  s1->add_option("--base", base, "Base checkpoint from pretrain")->required()->check(CLI::ExistingFile);
  s1->add_option("--mask-band", band, "Erased-ratio band lo,hi for training masks");

  auto* s2 = app.add_subcommand("train-stage2", "Train the skip refiner on a stage-1 checkpoint");
  add_common(s2, common, "runs/stage2");
  s2->add_option("--stage1", stage1_path, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  s2->add_option("--mask-band", band, "Erased-ratio band lo,hi for training masks");

  std::string checkpoint, bands = "0,0.4;0.4,1";
  auto* ev = app.add_subcommand("eval", "Difficulty sweep: FID, LPIPS diversity and IDS per mask band");
  add_common(ev, common, "runs/eval");
  ev->add_option("--checkpoint", checkpoint, "Stage-1 or stage-2 checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--bands", bands, "Semicolon-separated lo,hi bands")->capture_default_str();

  ImageJob job;
  job.band = "0.3,0.5";
  auto add_image_job = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", job.checkpoint, "Stage-1 or stage-2 checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--image", job.image, "Input RGB PNG")->required()->check(CLI::ExistingFile);
    sub->add_option("--mask", job.mask, "Mask PNG, white = keep")->check(CLI::ExistingFile);
    sub->add_option("--mask-band", job.band, "Band for a sampled mask when --mask is absent")->capture_default_str();
    sub->add_option("--output", job.output, "Output PNG (default: inside the run directory)");
  };
  auto* inp = app.add_subcommand("inpaint", "Complete the erased region of one image");
  add_common(inp, common, "runs/inpaint");
  add_image_job(inp);

  auto* ed = app.add_subcommand("edit", "Complete one image and shift an attribute");
  add_common(ed, common, "runs/edit");
  add_image_job(ed);
  ed->add_option("--direction", job.direction, "Direction name, e.g. hat")->required();
  ed->add_option("--strength", job.strength, "Shift in units of the direction's code std")->capture_default_str();
  ed->add_option("--directions", job.directions, "Directions file (default: the one named by the checkpoint)");
  ed->add_flag("--whole-image", job.whole_image, "Skip the final composition so the edit reaches known pixels");

  std::string host = "127.0.0.1", persist, serve_dirs;
  int port = 8080, max_sessions = 256;
  auto* sv = app.add_subcommand("serve", "HTTP inference service");
  add_common(sv, common, "runs/serve");
  sv->add_option("--checkpoint", checkpoint, "Checkpoint to serve")->check(CLI::ExistingFile);
  sv->add_option("--directions", serve_dirs, "Directions file (default: the one named by the checkpoint)");
  sv->add_option("--host", host, "Bind address")->capture_default_str();
  sv->add_option("--port", port, "Port, 0 for any")->capture_default_str()->check(CLI::Range(0, 65535));
  sv->add_option("--persist", persist, "Append-only session log to replay on start");
  sv->add_option("--max-sessions", max_sessions, "LRU capacity")->capture_default_str()->check(CLI::PositiveNumber);

  int ablation_id = 5;
  bool dry_run = false;
  auto* ab = app.add_subcommand("ablation", "Train one ablation row on a base checkpoint");
  add_common(ab, common, "runs/ablation");
  ab->add_option("--id", ablation_id, "Row 1..5")->required()->check(CLI::Range(1, 5));
  ab->add_option("--base", base, "Base checkpoint from pretrain")->check(CLI::ExistingFile);
  ab->add_flag("--dry-run", dry_run, "Print the resolved flags only");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << "\n";
    const auto parsed = app.get_subcommands();
    err << (parsed.empty() ? app.help() : parsed.front()->help());
    return 2;
  }

  try {
    if (*gen) return cmd_gen_corpus(common, count, res, out);
    if (*pre) return cmd_pretrain(common, out);
    if (*s1) return cmd_train_stage1(common, base, band, out);
    if (*s2) return cmd_train_stage2(common, stage1_path, band, out);
    if (*ev) return cmd_eval(common, checkpoint, bands, out);
    if (*inp) return complete_one(common, job, false, out);
    if (*ed) return complete_one(common, job, true, out);
    if (*sv) return cmd_serve(common, checkpoint, serve_dirs, host, port, persist, max_sessions, out);
    if (*ab) return cmd_ablation(common, ablation_id, base, dry_run, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dip
