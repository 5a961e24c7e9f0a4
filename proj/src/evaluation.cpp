#include "divinpaint/evaluation.hpp"

#include "divinpaint/linear_svm.hpp"
#include "divinpaint/toy_faces.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <ostream>
#include <sstream>

namespace dip {

namespace {

template <typename F>
void for_chunks(int n, int batch, F&& f) {
  if (batch <= 0) throw std::invalid_argument("batch must be positive");
  for (int b = 0; b < n; b += batch) f(b, std::min(n, b + batch));
}

Eigen::MatrixXd to_matrix(const Tensor<float>& t) {
  const int n = t.dim(0), d = static_cast<int>(t.size() / std::max(1, n));
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = t[static_cast<Eigen::Index>(i) * d + j];
  return m;
}

void check_moments_input(const FeatureSet& x, const char* side) {
  if (x.rows() < x.cols() + 1) {
    throw std::invalid_argument(std::string("fid: ") + side + " set has " + std::to_string(x.rows()) +
                                " samples, needs at least " + std::to_string(x.cols() + 1));
  }
  if (!x.allFinite()) throw NumericError(std::string("fid: non-finite features in ") + side + " set");
}

Eigen::MatrixXd covariance(const FeatureSet& x, Eigen::RowVectorXd& mean) {
  mean = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mean;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

}  // namespace

FeatureSet embed(const FeatureNet<float>& net, const Tensor<float>& images, int batch) {
  const int n = images.dim(0);
  FeatureSet out;
  for_chunks(n, batch, [&](int b, int e) {
    const auto emb = to_matrix(net.forward(constant(images.batch_slice(b, e))).embedding.value());
    if (out.size() == 0) out.resize(n, emb.cols());
    out.middleRows(b, e - b) = emb;
  });
  return out;
}

Tensor<float> attribute_outputs(const FeatureNet<float>& net, const Tensor<float>& images, int batch) {
  std::vector<Tensor<float>> parts;
  for_chunks(images.dim(0), batch,
             [&](int b, int e) { parts.push_back(net.forward(constant(images.batch_slice(b, e))).outputs.value()); });
  return stack_batch(parts);
}

double fid(const FeatureSet& a, const FeatureSet& b, std::ostream* warn) {
  if (a.cols() != b.cols()) throw DimensionError("fid: feature widths differ");
  check_moments_input(a, "first");
  check_moments_input(b, "second");
  Eigen::RowVectorXd mu_a, mu_b;
  const Eigen::MatrixXd sa = covariance(a, mu_a), sb = covariance(b, mu_b);

  // Tr((Sa Sb)^1/2) = Tr((Sa^1/2 Sb Sa^1/2)^1/2), whose argument is symmetric PSD.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  if (ea.info() != Eigen::Success) throw NumericError("fid: eigendecomposition of the first covariance failed");
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd root_a = ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd prod = root_a * sb * root_a;
  prod = 0.5 * (prod + prod.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ep(prod, Eigen::EigenvaluesOnly);
  if (ep.info() != Eigen::Success) throw NumericError("fid: eigendecomposition of the covariance product failed");
  const double most_negative = std::min(0.0, ep.eigenvalues().minCoeff());
  if (most_negative < -1e-6 && warn) {
    *warn << "fid: clipped negative eigenvalue " << most_negative << " of the covariance product\n";
  }
  const double tr_root = ep.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
}

IdsScores ids_scores(const FeatureSet& real, const FeatureSet& fake, bool paired, std::uint64_t seed) {
  if (real.cols() != fake.cols()) throw DimensionError("ids: feature widths differ");
  if (paired && real.rows() != fake.rows()) throw DimensionError("ids: paired mode needs equal counts");
  if (real.rows() < 2 || fake.rows() < 2) throw std::invalid_argument("ids: needs at least two samples per side");
  const Eigen::Index nr = real.rows(), nf = fake.rows();
  Eigen::MatrixXd x(nr + nf, real.cols());
  x << real, fake;
  Eigen::VectorXd y(nr + nf);
  y.head(nr).setOnes();
  y.tail(nf).setConstant(-1.0);
  SvmOptions opt;
  opt.seed = seed;
  const LinearSvm svm = fit_linear_svm(x, y, opt);
  const Eigen::VectorXd sr = svm.decision(real), sf = svm.decision(fake);

  auto wrong = [](double score, bool is_real) {
    if (score == 0.0) return 0.5;
    return (score > 0.0) == is_real ? 0.0 : 1.0;
  };
  double err_r = 0, err_f = 0;
  for (Eigen::Index i = 0; i < nr; ++i) err_r += wrong(sr[i], true);
  for (Eigen::Index i = 0; i < nf; ++i) err_f += wrong(sf[i], false);
  IdsScores s;
  s.u_ids = 0.5 * (err_r / static_cast<double>(nr) + err_f / static_cast<double>(nf));
  if (paired) {
    double hits = 0;
    for (Eigen::Index i = 0; i < nr; ++i) hits += sf[i] > sr[i] ? 1.0 : (sf[i] == sr[i] ? 0.5 : 0.0);
    s.p_ids = hits / static_cast<double>(nr);
  }
  return s;
}

double diversity_lpips(const CompletionFn& complete, const PerceptualFn<float>& phi, const Tensor<float>& images,
                       const Tensor<float>& masks, Rng& rng, int batch) {
  if (images.dim(0) != masks.dim(0)) throw DimensionError("diversity: image and mask counts differ");
  const int n = images.dim(0);
  if (n == 0) throw std::invalid_argument("diversity: no inputs");
  double total = 0;
  for_chunks(n, batch, [&](int b, int e) {
    const auto img = images.batch_slice(b, e), m = masks.batch_slice(b, e);
    const auto first = complete(img, m, rng);
    const auto second = complete(img, m, rng);
    total += perceptual_distance_per_sample(first, second, phi).array().template cast<double>().sum();
  });
  return total / n;
}

PathErrors path_asymmetry(const InpaintModel& model, int n, const MaskBand& band, std::uint64_t seed, int batch) {
  if (n <= 0) throw std::invalid_argument("path_asymmetry: n must be positive");
  Rng rng(seed);
  PathErrors e;
  for_chunks(n, batch, [&](int b, int end) {
    const int k = end - b;
    const auto z_g = model.random_z(rng, k);
    const auto target = model.generator.synthesize(constant(model.map_z(z_g))).image.value();
    const auto mask = sample_mask_batch(band, model.cfg.resolution, k, rng);
    const auto z_r = model.random_z(rng, k);
    const auto w_enc = model.encode(target, mask);
    const auto per_image = static_cast<double>(target.size() / k);
    const auto a = model.complete_from_code(target, mask, w_enc, z_g, nullptr, false).raw;
    const auto r = model.complete_from_code(target, mask, w_enc, z_r, nullptr, false).raw;
    e.same_z += (a.array() - target.array()).square().template cast<double>().sum() / per_image;
    e.fresh_z += (r.array() - target.array()).square().template cast<double>().sum() / per_image;
  });
  e.same_z /= n;
  e.fresh_z /= n;
  return e;
}

Tensor<float> held_out_images(int n, int resolution, std::uint64_t seed) {
  Rng rng(seed ^ 0x5eedf00dULL);
  return sample_face_batch(rng, n, resolution).images;
}

MetricsReport difficulty_sweep(const CompletionFn& complete, const FeatureNet<float>& features,
                               const std::vector<MaskBand>& bands, const SweepOptions& opt,
                               const std::string& config_hash) {
  if (bands.empty()) throw std::invalid_argument("difficulty_sweep: no bands");
  const PerceptualFn<float> phi = perceptual_of(features);
  const Tensor<float> images = held_out_images(opt.n_per_band, opt.resolution, opt.seed);
  const FeatureSet real = embed(features, images, opt.batch);
  if (opt.n_per_band < real.cols() + 1) {
    throw std::invalid_argument("difficulty_sweep: n_per_band " + std::to_string(opt.n_per_band) +
                                " is below the embedding width + 1 (" + std::to_string(real.cols() + 1) + ")");
  }
  for (const auto& band : bands) band.validate();

  MetricsReport report;
  report.config_hash = config_hash;
  FeatureSet all_real(real.rows() * static_cast<Eigen::Index>(bands.size()), real.cols());
  FeatureSet all_fake(all_real.rows(), real.cols());
  double div_sum = 0;
  for (std::size_t k = 0; k < bands.size(); ++k) {
    Rng mask_rng(opt.seed + 101 * (k + 1));
    const Tensor<float> masks = sample_mask_batch(bands[k], opt.resolution, opt.n_per_band, mask_rng);
    Rng z_rng(opt.seed + 7919 * (k + 1));
    std::vector<Tensor<float>> parts;
    for_chunks(opt.n_per_band, opt.batch, [&](int b, int e) {
      parts.push_back(complete(images.batch_slice(b, e), masks.batch_slice(b, e), z_rng));
    });
    const FeatureSet fake = embed(features, stack_batch(parts), opt.batch);

    BandReport br;
    br.band = bands[k];
    br.samples = opt.n_per_band;
    br.fid = fid(real, fake, &std::cerr);
    br.lpips_diversity = diversity_lpips(complete, phi, images, masks, z_rng, opt.batch);
    if (opt.with_ids) {
      const auto ids = ids_scores(real, fake, true, opt.seed);
      br.u_ids = ids.u_ids;
      br.p_ids = ids.p_ids;
    }
    report.bands.push_back(br);
    all_real.middleRows(k * real.rows(), real.rows()) = real;
    all_fake.middleRows(k * real.rows(), real.rows()) = fake;
    div_sum += br.lpips_diversity;
  }
  report.samples = static_cast<int>(all_fake.rows());
  report.fid = fid(all_real, all_fake, &std::cerr);
  report.lpips_diversity = div_sum / static_cast<double>(bands.size());
  if (opt.with_ids) {
    const auto ids = ids_scores(all_real, all_fake, true, opt.seed);
    report.u_ids = ids.u_ids;
    report.p_ids = ids.p_ids;
  }
  return report;
}

std::string metrics_config_hash(const InpaintModel& model, const SweepOptions& opt) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ULL;
    }
  };
  for (const auto* ps : {&model.mapping.params(), &model.generator.params(), &model.features.params(),
                         &model.encoder.params(), &model.mixer.params(), &model.refiner.params()}) {
    mix(ps->fingerprint());
  }
  mix(static_cast<std::uint64_t>(model.stage));
  mix(static_cast<std::uint64_t>(opt.n_per_band));
  mix(static_cast<std::uint64_t>(opt.resolution));
  mix(opt.seed);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

MetricsReport difficulty_sweep(const InpaintModel& model, const std::vector<MaskBand>& bands,
                               const SweepOptions& opt) {
  SweepOptions o = opt;
  o.resolution = model.cfg.resolution;
  return difficulty_sweep(completion_fn(model), model.features, bands, o, metrics_config_hash(model, o));
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(10);
  auto metrics = [&os](double f, double d, double u, double p, int n) {
    os << "samples = " << n << "\nfid = " << f << "\nlpips_diversity = " << d << "\nu_ids = " << u
       << "\np_ids = " << p << '\n';
  };
  os << "config_hash = " << config_hash << '\n';
  metrics(fid, lpips_diversity, u_ids, p_ids, samples);
  for (const auto& b : bands) {
    os << "\n[band " << b.band.label() << "]\n";
    metrics(b.fid, b.lpips_diversity, b.u_ids, b.p_ids, b.samples);
  }
  return os.str();
}

MetricsReport MetricsReport::from_text(const std::string& text) {
  MetricsReport r;
  std::istringstream in(text);
  std::string line;
  BandReport* band = nullptr;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("[band ", 0) == 0 && line.back() == ']') {
      r.bands.push_back({});
      band = &r.bands.back();
      band->band = MaskBand::parse(line.substr(6, line.size() - 7));
      continue;
    }
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw std::invalid_argument("metrics report: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    if (key == "config_hash") {
      r.config_hash = value;
      continue;
    }
    double* dst = nullptr;
    if (key == "fid") dst = band ? &band->fid : &r.fid;
    else if (key == "lpips_diversity") dst = band ? &band->lpips_diversity : &r.lpips_diversity;
    else if (key == "u_ids") dst = band ? &band->u_ids : &r.u_ids;
    else if (key == "p_ids") dst = band ? &band->p_ids : &r.p_ids;
    if (dst) *dst = std::stod(value);
    else if (key == "samples") (band ? band->samples : r.samples) = std::stoi(value);
    else throw std::invalid_argument("metrics report: unknown key '" + key + "'");
  }
  return r;
}

}  // namespace dip
