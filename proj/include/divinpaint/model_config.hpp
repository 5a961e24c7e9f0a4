#pragma once

#include "divinpaint/config.hpp"

#include <string>
#include <vector>

namespace dip {

/// Architecture sizes shared by every network in a run.
struct ModelConfig {
  int resolution = 32;
  int z_dim = 64;
  int w_dim = 128;
  int mapping_layers = 4;
  // Generator / discriminator channels at resolution r: min(channel_max, channel_base / r).
  int channel_base = 512;
  int channel_max = 64;
  int encoder_channels = 32;
  int feature_dim = 64;

  int log2_res() const;
  /// 2*log2(resolution/4) + 2
  int num_styles() const;
  int channels_at(int res) const;
  /// 4, 8, ..., resolution
  std::vector<int> resolutions() const;
  /// The three largest internal resolutions strictly below the output.
  std::vector<int> injection_resolutions() const;

  void validate() const;
  static ModelConfig profile(const std::string& name);
  /// Reads `model.*` keys, starting from the profile named by `model.profile` (default cpu).
  static ModelConfig from_config(const Config& c);
  void write_to(Config& c) const;
};

}  // namespace dip
