#pragma once

#include "divinpaint/tensor.hpp"

#include <string>

namespace dip {

class ImageFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit RGB PNG -> [3,H,W] in [-1,1]. Gray or palette inputs are expanded to RGB.
Tensor<float> decode_png_rgb(const std::string& bytes);
/// [3,H,W] in [-1,1] -> 8-bit RGB PNG (values clamped).
std::string encode_png_rgb(const Tensor<float>& image);

/// Mask PNG -> [1,H,W] in {0,1} (1 = valid). Any gray level other than full
/// black or full white raises ImageFormatError.
Tensor<float> decode_png_mask(const std::string& bytes);
/// [1,H,W] in {0,1} -> 1-bit grayscale PNG.
std::string encode_png_mask(const Tensor<float>& mask);

std::string read_file(const std::string& path);
/// Writes to path via a temporary sibling and rename.
void write_file_atomic(const std::string& path, const std::string& bytes);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

}  // namespace dip
