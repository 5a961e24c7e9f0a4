#include "divinpaint/toy_faces.hpp"

#include "divinpaint/image_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dip {

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = (h - std::floor(h)) * 6.0;
  const int i = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

constexpr std::array<Rgb, 4> kHatColors = {{{0.55, 0.05, 0.08}, {0.08, 0.12, 0.5}, {0.06, 0.06, 0.06}, {0.05, 0.38, 0.12}}};

bool in_ellipse(double u, double v, double cx, double cy, double rx, double ry) {
  const double a = (u - cx) / rx, b = (v - cy) / ry;
  return a * a + b * b <= 1.0;
}

Rgb shade(const FaceParams& p, double u, double v) {
  const double rx = p.face_radius;
  const double ry = p.round_face ? rx : rx * 1.28;
  const double cx = p.center_x, cy = p.center_y;

  Rgb c = hsv(p.background_hue, 0.45, 0.85);

  const Rgb hair = p.dark_hair ? Rgb{0.22, 0.13, 0.07} : Rgb{0.93, 0.8, 0.42};
  if (v < cy + 0.1 * ry && in_ellipse(u, v, cx, cy - 0.04, rx * 1.15, ry * 1.12)) c = hair;

  const Rgb skin{0.98 - 0.35 * p.skin_tone, 0.82 - 0.4 * p.skin_tone, 0.7 - 0.42 * p.skin_tone};
  if (in_ellipse(u, v, cx, cy + 0.03 * ry, rx, ry * 0.97)) c = skin;

  const double eye_y = cy - 0.12 * ry;
  const double eye_dx = p.eye_spacing * rx;
  const double eye_r = 0.055;
  if (in_ellipse(u, v, cx - eye_dx, eye_y, eye_r, eye_r) || in_ellipse(u, v, cx + eye_dx, eye_y, eye_r, eye_r)) {
    c = {0.05, 0.05, 0.1};
  }

  const double mouth_half = 0.5 * rx;
  const double du = u - cx;
  if (std::abs(du) < mouth_half) {
    const double base = cy + 0.5 * ry;
    const double curve = 1.6 / rx * (du * du - mouth_half * mouth_half / 2.0);
    const double mouth_v = p.smile ? base - curve : base + curve;
    if (std::abs(v - mouth_v) < 0.03) c = {0.65, 0.08, 0.1};
  }

  if (p.hat) {
    const double brim_v = cy - 0.62 * ry;
    const Rgb hc = kHatColors[static_cast<std::size_t>(p.hat_color) % kHatColors.size()];
    if (std::abs(u - cx) < 1.3 * rx && std::abs(v - brim_v) < 0.04) c = hc;
    if (std::abs(u - cx) < 0.85 * rx && v <= brim_v && v > brim_v - 0.24) c = hc;
  }
  return c;
}

}  // namespace

FaceParams sample_face(Rng& rng) {
  FaceParams p;
  p.background_hue = rng.uniform();
  p.round_face = rng.bernoulli(0.5);
  p.eye_spacing = rng.uniform(0.25, 0.5);
  p.smile = rng.bernoulli(0.5);
  p.hat = rng.bernoulli(0.5);
  p.dark_hair = rng.bernoulli(0.5);
  p.center_x = 0.5 + rng.uniform(-0.04, 0.04);
  p.center_y = 0.56 + rng.uniform(-0.03, 0.03);
  p.face_radius = rng.uniform(0.23, 0.28);
  p.skin_tone = rng.uniform();
  p.hat_color = rng.uniform_int(0, static_cast<int>(kHatColors.size()) - 1);
  return p;
}

Tensor<float> render_face(const FaceParams& p, int res) {
  constexpr int ss = 4;
  Tensor<float> img({1, 3, res, res});
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      double r = 0, g = 0, b = 0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double u = (x + (sx + 0.5) / ss) / res;
          const double v = (y + (sy + 0.5) / ss) / res;
          const Rgb c = shade(p, u, v);
          r += c.r;
          g += c.g;
          b += c.b;
        }
      const double k = 2.0 / (ss * ss);
      img.at(0, 0, y, x) = static_cast<float>(r * k - 1.0);
      img.at(0, 1, y, x) = static_cast<float>(g * k - 1.0);
      img.at(0, 2, y, x) = static_cast<float>(b * k - 1.0);
    }
  return img.reshaped({3, res, res});
}

std::array<float, kAttributeOutputs> attribute_targets(const FaceParams& p) {
  const double angle = 2.0 * std::numbers::pi * p.background_hue;
  return {p.hat ? 1.0f : 0.0f,
          p.smile ? 1.0f : 0.0f,
          p.round_face ? 1.0f : 0.0f,
          p.dark_hair ? 1.0f : 0.0f,
          static_cast<float>((p.eye_spacing - 0.375) / 0.072),
          static_cast<float>(std::cos(angle)),
          static_cast<float>(std::sin(angle))};
}

int binary_attribute_index(const std::string& name) {
  for (std::size_t i = 0; i < kBinaryAttributes.size(); ++i)
    if (name == kBinaryAttributes[i]) return static_cast<int>(i);
  return -1;
}

FaceBatch sample_face_batch(Rng& rng, int n, int res) {
  FaceBatch b;
  std::vector<Tensor<float>> imgs;
  for (int i = 0; i < n; ++i) {
    b.params.push_back(sample_face(rng));
    imgs.push_back(render_face(b.params.back(), res).reshaped({1, 3, res, res}));
  }
  b.images = stack_batch(imgs);
  return b;
}

std::string attributes_csv_header() {
  return "filename,background_hue,round_face,eye_spacing,smile,hat,dark_hair";
}

std::string attributes_csv_row(const std::string& filename, const FaceParams& p) {
  std::ostringstream os;
  os.precision(6);
  os << filename << ',' << p.background_hue << ',' << p.round_face << ',' << p.eye_spacing << ',' << p.smile
     << ',' << p.hat << ',' << p.dark_hair;
  return os.str();
}

void write_corpus(const std::string& dir, int count, int res, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  Rng rng(seed);
  std::ofstream csv(std::filesystem::path(dir) / "attributes.csv");
  csv << attributes_csv_header() << '\n';
  for (int i = 0; i < count; ++i) {
    const FaceParams p = sample_face(rng);
    char name[32];
    std::snprintf(name, sizeof(name), "face_%05d.png", i);
    write_file_atomic((std::filesystem::path(dir) / name).string(), encode_png_rgb(render_face(p, res)));
    csv << attributes_csv_row(name, p) << '\n';
  }
}

}  // namespace dip
