#include "divinpaint/model_config.hpp"

#include "divinpaint/tensor.hpp"

#include <algorithm>

namespace dip {

int ModelConfig::log2_res() const {
  int l = 0;
  while ((1 << l) < resolution) ++l;
  return l;
}

int ModelConfig::num_styles() const { return 2 * (log2_res() - 2) + 2; }

int ModelConfig::channels_at(int res) const { return std::max(1, std::min(channel_max, channel_base / res)); }

std::vector<int> ModelConfig::resolutions() const {
  std::vector<int> r;
  for (int s = 4; s <= resolution; s *= 2) r.push_back(s);
  return r;
}

std::vector<int> ModelConfig::injection_resolutions() const {
  std::vector<int> r;
  for (int s = resolution / 8; s < resolution; s *= 2)
    if (s >= 4) r.push_back(s);
  return r;
}

void ModelConfig::validate() const {
  if (resolution < 16 || (resolution & (resolution - 1)) != 0) {
    throw ConfigError("model.resolution must be a power of two >= 16");
  }
  if (z_dim <= 0 || w_dim <= 0 || mapping_layers <= 0 || feature_dim <= 0 || encoder_channels <= 0) {
    throw ConfigError("model dimensions must be positive");
  }
}

ModelConfig ModelConfig::profile(const std::string& name) {
  ModelConfig m;
  if (name == "cpu") return m;
  if (name == "gpu") {
    m.resolution = 64;
    m.channel_base = 2048;
    m.channel_max = 128;
    m.encoder_channels = 48;
    return m;
  }
  if (name == "tiny") {
    m.resolution = 16;
    m.z_dim = 8;
    m.w_dim = 8;
    m.mapping_layers = 2;
    m.channel_base = 32;
    m.channel_max = 4;
    m.encoder_channels = 4;
    m.feature_dim = 6;
    return m;
  }
  throw ConfigError("unknown model profile " + name + " (expected cpu, gpu or tiny)");
}

ModelConfig ModelConfig::from_config(const Config& c) {
  ModelConfig m = profile(c.get_string("model.profile", "cpu"));
  m.resolution = c.get_int("model.resolution", m.resolution);
  m.z_dim = c.get_int("model.z_dim", m.z_dim);
  m.w_dim = c.get_int("model.w_dim", m.w_dim);
  m.mapping_layers = c.get_int("model.mapping_layers", m.mapping_layers);
  m.channel_base = c.get_int("model.channel_base", m.channel_base);
  m.channel_max = c.get_int("model.channel_max", m.channel_max);
  m.encoder_channels = c.get_int("model.encoder_channels", m.encoder_channels);
  m.feature_dim = c.get_int("model.feature_dim", m.feature_dim);
  m.validate();
  return m;
}

void ModelConfig::write_to(Config& c) const {
  c.set("model.resolution", std::to_string(resolution));
  c.set("model.z_dim", std::to_string(z_dim));
  c.set("model.w_dim", std::to_string(w_dim));
  c.set("model.mapping_layers", std::to_string(mapping_layers));
  c.set("model.channel_base", std::to_string(channel_base));
  c.set("model.channel_max", std::to_string(channel_max));
  c.set("model.encoder_channels", std::to_string(encoder_channels));
  c.set("model.feature_dim", std::to_string(feature_dim));
}

}  // namespace dip
