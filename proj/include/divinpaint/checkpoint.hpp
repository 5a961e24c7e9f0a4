#pragma once

#include "divinpaint/config.hpp"
#include "divinpaint/nn.hpp"

#include <map>
#include <string>

namespace dip {

enum class Stage { base_gan, stage1, stage2 };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-file container: 8-byte magic "DIPCKPT\n", u64 little-endian length of a
/// JSON manifest, the manifest, then raw little-endian array payloads. The
/// manifest lists every array's name, dtype, shape, byte offset and size, so
/// the file can be read without this library.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  Stage stage = Stage::base_gan;
  Config config;
  std::string rng_state;
  std::map<std::string, Tensor<float>> arrays;

  /// Stores every entry of ps under "<prefix>/<name>".
  void put(const std::string& prefix, const ParamSet<float>& ps);
  /// Loads every entry of ps from "<prefix>/<name>"; missing or misshapen arrays throw.
  void get(const std::string& prefix, ParamSet<float>& ps) const;
  bool has_prefix(const std::string& prefix) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  bool operator==(const Checkpoint& o) const;
};

}  // namespace dip
