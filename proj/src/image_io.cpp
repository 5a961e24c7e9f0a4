#include "divinpaint/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

namespace dip {

namespace {

struct DecodedPng {
  int width = 0, height = 0, channels = 0;
  std::vector<unsigned char> pixels;
};

DecodedPng decode(const std::string& bytes, png_uint_32 format, int channels) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw ImageFormatError(std::string("not a PNG: ") + img.message);
  }
  img.format = format;
  DecodedPng out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw ImageFormatError("PNG decode failed: " + msg);
  }
  return out;
}

void write_to_string(png_structp png, png_bytep data, png_size_t len) {
  auto* s = static_cast<std::string*>(png_get_io_ptr(png));
  s->append(reinterpret_cast<const char*>(data), len);
}

std::string encode(int width, int height, int bit_depth, int color_type,
                   const std::vector<std::vector<unsigned char>>& rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw ImageFormatError("libpng allocation failed");
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageFormatError("PNG encode failed");
  }
  png_set_write_fn(png, &out, write_to_string, nullptr);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (const auto& r : rows) png_write_row(png, r.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

unsigned char to_byte(float v) {
  const float b = std::round((v + 1.0f) * 127.5f);
  return static_cast<unsigned char>(std::clamp(b, 0.0f, 255.0f));
}

}  // namespace

Tensor<float> decode_png_rgb(const std::string& bytes) {
  const DecodedPng d = decode(bytes, PNG_FORMAT_RGB, 3);
  Tensor<float> t({1, 3, d.height, d.width});
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) = d.pixels[(static_cast<std::size_t>(y) * d.width + x) * 3 + c] / 127.5f - 1.0f;
  return t.reshaped({3, d.height, d.width});
}

std::string encode_png_rgb(const Tensor<float>& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("encode_png_rgb expects [3,H,W], got " + shape_str(image.shape()));
  }
  const int h = image.dim(1), w = image.dim(2);
  std::vector<std::vector<unsigned char>> rows(h, std::vector<unsigned char>(3 * w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) rows[y][3 * x + c] = to_byte(image[(c * h + y) * w + x]);
  return encode(w, h, 8, PNG_COLOR_TYPE_RGB, rows);
}

Tensor<float> decode_png_mask(const std::string& bytes) {
  const DecodedPng d = decode(bytes, PNG_FORMAT_GRAY, 1);
  Tensor<float> t({1, d.height, d.width});
  for (std::size_t i = 0; i < d.pixels.size(); ++i) {
    const unsigned char p = d.pixels[i];
    if (p != 0 && p != 255) throw ImageFormatError("mask is not binary (gray level " + std::to_string(p) + ")");
    t[static_cast<Eigen::Index>(i)] = p == 255 ? 1.0f : 0.0f;
  }
  return t;
}

std::string encode_png_mask(const Tensor<float>& mask) {
  if (mask.rank() != 3 || mask.dim(0) != 1) {
    throw DimensionError("encode_png_mask expects [1,H,W], got " + shape_str(mask.shape()));
  }
  const int h = mask.dim(1), w = mask.dim(2);
  std::vector<std::vector<unsigned char>> rows(h, std::vector<unsigned char>((w + 7) / 8, 0));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask[y * w + x] > 0.5f) rows[y][x / 8] |= static_cast<unsigned char>(0x80u >> (x % 8));
  return encode(w, h, 1, PNG_COLOR_TYPE_GRAY, rows);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                       (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  int lut[256];
  std::fill(std::begin(lut), std::end(lut), -1);
  for (int i = 0; i < 64; ++i) lut[static_cast<unsigned char>(kB64[i])] = i;
  std::string out;
  unsigned acc = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=' || ch == '\n' || ch == '\r' || ch == ' ') continue;
    const int v = lut[static_cast<unsigned char>(ch)];
    if (v < 0) throw ImageFormatError("invalid base64 character");
    acc = (acc << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += static_cast<char>((acc >> bits) & 0xFF);
    }
  }
  return out;
}

}  // namespace dip
