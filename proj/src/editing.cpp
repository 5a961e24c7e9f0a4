#include "divinpaint/editing.hpp"

#include "divinpaint/evaluation.hpp"
#include "divinpaint/image_io.hpp"
#include "divinpaint/toy_faces.hpp"

#include <json.hpp>

#include <cmath>

namespace dip {

namespace {

void check_code(const Shape& s, const DirectionVector& d) {
  if ((s.size() != 2 && s.size() != 3) || s.back() != d.vector.size()) {
    throw DimensionError("edit: code shape " + shape_str(s) + " does not fit a direction of length " +
                         std::to_string(d.vector.size()));
  }
}

/// Binary logit of attribute `idx` for each image.
Eigen::VectorXd attribute_logit(const FeatureNet<float>& net, const Tensor<float>& images, int idx, int batch) {
  const auto out = attribute_outputs(net, images, batch);
  Eigen::VectorXd v(out.dim(0));
  for (int i = 0; i < out.dim(0); ++i) v[i] = out[static_cast<Eigen::Index>(i) * kAttributeOutputs + idx];
  return v;
}

Tensor<float> synthesize_rows(const MappingNet<float>& mapping, const Generator<float>& generator,
                              const Tensor<float>& w_single) {
  return generator.synthesize(mapping.broadcast(constant(w_single))).image.value();
}

}  // namespace

bool DirectionVector::touches(int style) const {
  if (scope == EditScope::all_styles) return true;
  return std::find(styles.begin(), styles.end(), style) != styles.end();
}

DirectionVector learn_direction(const std::string& name, const Eigen::MatrixXd& w, const std::vector<bool>& labels,
                                const SvmOptions& opt) {
  if (static_cast<Eigen::Index>(labels.size()) != w.rows()) throw DimensionError("learn_direction: label count");
  Eigen::VectorXd y(w.rows());
  int pos = 0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    y[i] = labels[i] ? 1.0 : -1.0;
    pos += labels[i];
  }
  if (pos < 2 || w.rows() - pos < 2) {
    throw std::invalid_argument("learn_direction: '" + name + "' needs at least two samples of each class (got " +
                                std::to_string(pos) + " positive of " + std::to_string(w.rows()) + ")");
  }
  const LinearSvm svm = fit_linear_svm(w, y, opt);
  DirectionVector d;
  d.name = name;
  d.vector = svm.normal().normalized();
  const Eigen::VectorXd proj = w * d.vector;
  d.sigma = std::sqrt((proj.array() - proj.mean()).square().mean());
  return d;
}

template <typename Scalar>
Tensor<Scalar> apply_edit(const Tensor<Scalar>& w, const DirectionVector& d, double strength) {
  check_code(w.shape(), d);
  Tensor<Scalar> out = w;
  const int dim = static_cast<int>(d.vector.size());
  const int styles = w.dim(-2);
  const Eigen::Index rows = w.size() / dim;
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!d.touches(static_cast<int>(r % styles))) continue;
    for (int j = 0; j < dim; ++j) out[r * dim + j] += static_cast<Scalar>(strength * d.vector[j]);
  }
  return out;
}

template Tensor<float> apply_edit(const Tensor<float>&, const DirectionVector&, double);
template Tensor<double> apply_edit(const Tensor<double>&, const DirectionVector&, double);

const DirectionVector& find_direction(const std::vector<DirectionVector>& dirs, const std::string& name) {
  for (const auto& d : dirs)
    if (d.name == name) return d;
  throw UnknownDirectionError("unknown direction '" + name + "'");
}

Tensor<float> apply_edits(const Tensor<float>& w, const std::vector<DirectionVector>& dirs,
                          const std::vector<AppliedEdit>& edits) {
  if (edits.empty()) return w;
  const int styles = w.dim(-2), dim = w.dim(-1);
  Eigen::MatrixXd offset = Eigen::MatrixXd::Zero(styles, dim);
  for (const auto& e : edits) {
    const auto& d = find_direction(dirs, e.direction);
    check_code(w.shape(), d);
    for (int s = 0; s < styles; ++s)
      if (d.touches(s)) offset.row(s) += e.strength * d.vector.transpose();
  }
  Tensor<float> out = w;
  const Eigen::Index rows = w.size() / dim;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (int j = 0; j < dim; ++j) {
      const double o = offset(static_cast<int>(r % styles), j);
      if (o != 0.0) out[r * dim + j] = static_cast<float>(out[r * dim + j] + o);
    }
  return out;
}

std::vector<DirectionVector> learn_attribute_directions(const MappingNet<float>& mapping,
                                                        const Generator<float>& generator,
                                                        const FeatureNet<float>& features,
                                                        const std::vector<std::string>& attributes,
                                                        const DirectionTrainConfig& cfg,
                                                        std::vector<std::string>* skipped) {
  const ModelConfig& mc = mapping.config();
  Rng rng(cfg.seed);
  Eigen::MatrixXd w(cfg.samples, mc.w_dim);
  std::vector<Eigen::VectorXd> logits(attributes.size(), Eigen::VectorXd(cfg.samples));
  std::vector<int> idx;
  for (const auto& a : attributes) {
    const int i = binary_attribute_index(a);
    if (i < 0) throw UnknownDirectionError("no binary attribute named '" + a + "'");
    idx.push_back(i);
  }
  for (int b = 0; b < cfg.samples; b += cfg.batch) {
    const int k = std::min(cfg.batch, cfg.samples - b);
    const auto ws = mapping.forward(constant(rng.normal_tensor<float>({k, mc.z_dim}))).value();
    const auto out = attribute_outputs(features, synthesize_rows(mapping, generator, ws), k);
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < mc.w_dim; ++j) w(b + i, j) = ws[static_cast<Eigen::Index>(i) * mc.w_dim + j];
      for (std::size_t a = 0; a < idx.size(); ++a)
        logits[a][b + i] = out[static_cast<Eigen::Index>(i) * kAttributeOutputs + idx[a]];
    }
  }
  std::vector<DirectionVector> dirs;
  for (std::size_t a = 0; a < attributes.size(); ++a) {
    std::vector<bool> labels(cfg.samples);
    int pos = 0;
    for (int i = 0; i < cfg.samples; ++i) pos += labels[i] = logits[a][i] > 0.0;
    if (skipped && (pos < 2 || cfg.samples - pos < 2)) {
      skipped->push_back(attributes[a]);
      continue;
    }
    SvmOptions opt;
    opt.seed = cfg.seed + a;
    dirs.push_back(learn_direction(attributes[a], w, labels, opt));
  }
  return dirs;
}

FlipProbe attribute_flip_rate(const MappingNet<float>& mapping, const Generator<float>& generator,
                              const FeatureNet<float>& features, const DirectionVector& d, double sigmas, int probes,
                              std::uint64_t seed, int batch) {
  const int idx = binary_attribute_index(d.name);
  if (idx < 0) throw UnknownDirectionError("no binary attribute named '" + d.name + "'");
  const ModelConfig& mc = mapping.config();
  Rng rng(seed);
  FlipProbe fp;
  int flipped = 0;
  for (int guard = 0; fp.probes < probes && guard < 1000; ++guard) {
    const auto ws = mapping.forward(constant(rng.normal_tensor<float>({batch, mc.z_dim}))).value();
    const auto before = attribute_logit(features, synthesize_rows(mapping, generator, ws), idx, batch);
    const auto after =
        attribute_logit(features, synthesize_rows(mapping, generator, apply_edit(ws.reshaped({batch, 1, mc.w_dim}), d,
                                                                                 sigmas * d.sigma)
                                                                          .reshaped({batch, mc.w_dim})),
                        idx, batch);
    for (int i = 0; i < batch && fp.probes < probes; ++i) {
      if (before[i] > 0.0) continue;
      ++fp.probes;
      flipped += after[i] > 0.0;
    }
  }
  if (fp.probes == 0) throw std::runtime_error("flip probe: every sample already has '" + d.name + "'");
  fp.flip_rate = static_cast<double>(flipped) / fp.probes;
  return fp;
}

std::string directions_to_json(const std::vector<DirectionVector>& dirs) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["directions"] = nlohmann::json::array();
  for (const auto& d : dirs) {
    j["directions"].push_back({{"name", d.name},
                               {"scope", d.scope == EditScope::all_styles ? "all_styles" : "style_subset"},
                               {"styles", d.styles},
                               {"sigma", d.sigma},
                               {"vector", std::vector<double>(d.vector.data(), d.vector.data() + d.vector.size())}});
  }
  return j.dump(1);
}

std::vector<DirectionVector> directions_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("format_version", 0) != 1) throw std::invalid_argument("directions file: unsupported format_version");
  std::vector<DirectionVector> out;
  for (const auto& e : j.at("directions")) {
    DirectionVector d;
    d.name = e.at("name").get<std::string>();
    const auto scope = e.value("scope", std::string("all_styles"));
    if (scope == "all_styles") d.scope = EditScope::all_styles;
    else if (scope == "style_subset") d.scope = EditScope::style_subset;
    else throw std::invalid_argument("directions file: unknown scope '" + scope + "'");
    d.styles = e.value("styles", std::vector<int>{});
    d.sigma = e.value("sigma", 1.0);
    const auto v = e.at("vector").get<std::vector<double>>();
    d.vector = Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    if (std::abs(d.vector.norm() - 1.0) > 1e-9) {
      throw std::invalid_argument("directions file: '" + d.name + "' is not unit length");
    }
    out.push_back(std::move(d));
  }
  return out;
}

void save_directions(const std::string& path, const std::vector<DirectionVector>& dirs) {
  write_file_atomic(path, directions_to_json(dirs));
}

std::vector<DirectionVector> load_directions(const std::string& path) { return directions_from_json(read_file(path)); }

}  // namespace dip
