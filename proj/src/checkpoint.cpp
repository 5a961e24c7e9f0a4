#include "divinpaint/checkpoint.hpp"

#include "divinpaint/image_io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>

namespace dip {

namespace {

constexpr char kMagic[8] = {'D', 'I', 'P', 'C', 'K', 'P', 'T', '\n'};

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume little-endian hosts");

}  // namespace

std::string to_string(Stage s) {
  switch (s) {
    case Stage::base_gan: return "base_gan";
    case Stage::stage1: return "stage1";
    case Stage::stage2: return "stage2";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& s) {
  if (s == "base_gan") return Stage::base_gan;
  if (s == "stage1") return Stage::stage1;
  if (s == "stage2") return Stage::stage2;
  throw CheckpointError("unknown stage tag: " + s);
}

void Checkpoint::put(const std::string& prefix, const ParamSet<float>& ps) {
  for (const auto& e : ps.entries()) arrays[prefix + "/" + e.name] = e.var.value();
}

void Checkpoint::get(const std::string& prefix, ParamSet<float>& ps) const {
  for (const auto& e : ps.entries()) {
    const std::string key = prefix + "/" + e.name;
    auto it = arrays.find(key);
    if (it == arrays.end()) throw CheckpointError("checkpoint lacks array " + key);
    if (it->second.shape() != e.var.shape()) {
      throw CheckpointError("checkpoint array " + key + " has shape " + shape_str(it->second.shape()) +
                            ", network expects " + shape_str(e.var.shape()));
    }
    Var<float> v = e.var;
    v.mutable_value() = it->second;
  }
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  auto it = arrays.lower_bound(prefix + "/");
  return it != arrays.end() && it->first.rfind(prefix + "/", 0) == 0;
}

std::string Checkpoint::serialize() const {
  nlohmann::ordered_json manifest;
  manifest["format_version"] = format_version;
  manifest["stage"] = to_string(stage);
  manifest["config"] = config.values();
  manifest["rng_state"] = rng_state;
  auto list = nlohmann::ordered_json::array();
  std::string blob;
  for (const auto& [name, t] : arrays) {
    const std::size_t nbytes = sizeof(float) * static_cast<std::size_t>(t.size());
    list.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"offset", blob.size()},
                    {"nbytes", nbytes}});
    blob.append(reinterpret_cast<const char*>(t.data()), nbytes);
  }
  manifest["arrays"] = list;
  const std::string m = manifest.dump();
  std::string out(kMagic, sizeof(kMagic));
  const std::uint64_t len = m.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += m;
  out += blob;
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (16 + len > bytes.size()) throw CheckpointError("truncated checkpoint manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  Checkpoint c;
  if (!manifest.contains("format_version")) throw CheckpointError("checkpoint lacks format_version");
  c.format_version = manifest["format_version"].get<int>();
  if (c.format_version != kFormatVersion) {
    throw CheckpointError("unsupported checkpoint format_version " + std::to_string(c.format_version));
  }
  c.stage = stage_from_string(manifest.at("stage").get<std::string>());
  for (const auto& [k, v] : manifest.at("config").items()) c.config.set(k, v.get<std::string>());
  c.rng_state = manifest.value("rng_state", "");
  const std::size_t base = 16 + len;
  for (const auto& a : manifest.at("arrays")) {
    const auto shape = a.at("shape").get<Shape>();
    const auto offset = a.at("offset").get<std::size_t>();
    const auto nbytes = a.at("nbytes").get<std::size_t>();
    const auto dtype = a.at("dtype").get<std::string>();
    if (base + offset + nbytes > bytes.size()) throw CheckpointError("truncated checkpoint payload");
    Tensor<float> t(shape);
    if (dtype == "f32") {
      if (nbytes != sizeof(float) * static_cast<std::size_t>(t.size())) throw CheckpointError("bad array size");
      std::memcpy(t.data(), bytes.data() + base + offset, nbytes);
    } else if (dtype == "f64") {
      if (nbytes != sizeof(double) * static_cast<std::size_t>(t.size())) throw CheckpointError("bad array size");
      for (Eigen::Index i = 0; i < t.size(); ++i) {
        double d;
        std::memcpy(&d, bytes.data() + base + offset + i * sizeof(double), sizeof(double));
        t[i] = static_cast<float>(d);
      }
    } else {
      throw CheckpointError("unsupported dtype " + dtype);
    }
    c.arrays[a.at("name").get<std::string>()] = std::move(t);
  }
  return c;
}

void Checkpoint::save(const std::string& path) const { write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) { return deserialize(read_file(path)); }

bool Checkpoint::operator==(const Checkpoint& o) const {
  return format_version == o.format_version && stage == o.stage && config.values() == o.config.values() &&
         rng_state == o.rng_state && arrays == o.arrays;
}

}  // namespace dip
