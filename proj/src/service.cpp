#include "divinpaint/service.hpp"

#include "divinpaint/image_io.hpp"

#include <httplib.h>

#include <cstdio>
#include <fstream>

namespace dip {

using nlohmann::json;

std::string to_string(ApiErrorCode c) {
  switch (c) {
    case ApiErrorCode::bad_request: return "bad_request";
    case ApiErrorCode::bad_image: return "bad_image";
    case ApiErrorCode::bad_mask: return "bad_mask";
    case ApiErrorCode::no_checkpoint: return "no_checkpoint";
    case ApiErrorCode::unknown_session: return "unknown_session";
    case ApiErrorCode::unknown_direction: return "unknown_direction";
    case ApiErrorCode::internal: return "internal";
  }
  return "internal";
}

int http_status(ApiErrorCode c) {
  switch (c) {
    case ApiErrorCode::bad_request:
    case ApiErrorCode::bad_image:
    case ApiErrorCode::bad_mask: return 400;
    case ApiErrorCode::unknown_session:
    case ApiErrorCode::unknown_direction: return 404;
    case ApiErrorCode::no_checkpoint: return 503;
    case ApiErrorCode::internal: return 500;
  }
  return 500;
}

json ok_envelope(json data) { return {{"ok", true}, {"data", std::move(data)}}; }

json error_envelope(ApiErrorCode code, const std::string& message) {
  return {{"ok", false}, {"error", {{"code", to_string(code)}, {"message", message}}}};
}

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string decode_b64(const std::string& text, ApiErrorCode code, const char* what) {
  try {
    return base64_decode(text);
  } catch (const std::exception& e) {
    throw ApiError(code, std::string(what) + " is not valid base64: " + e.what());
  }
}

std::optional<std::uint64_t> optional_seed(const json& body) {
  if (!body.contains("seed") || body["seed"].is_null()) return std::nullopt;
  if (!body["seed"].is_number_unsigned()) {
    throw ApiError(ApiErrorCode::bad_request, "seed must be a non-negative integer");
  }
  return body["seed"].get<std::uint64_t>();
}

std::string required_string(const json& body, const char* key, ApiErrorCode code) {
  if (!body.contains(key) || !body[key].is_string()) {
    throw ApiError(code, std::string("request needs a string field '") + key + "'");
  }
  return body[key].get<std::string>();
}

}  // namespace

InpaintService::InpaintService(std::shared_ptr<const InpaintModel> model, std::vector<DirectionVector> directions,
                               ServiceOptions opt)
    : model_(std::move(model)), directions_(std::move(directions)), opt_(std::move(opt)), rng_(opt_.seed) {
  if (opt_.max_sessions == 0) throw std::invalid_argument("max_sessions must be positive");
  if (model_) {
    for (const auto& d : directions_) {
      if (d.vector.size() != model_->cfg.w_dim) {
        throw std::invalid_argument("direction '" + d.name + "' does not match the model's style width");
      }
    }
  }
  if (!opt_.persistence_path.empty() && model_) replay();
}

const InpaintModel& InpaintService::model() const {
  if (!model_) throw ApiError(ApiErrorCode::no_checkpoint, "the service was started without a checkpoint");
  return *model_;
}

std::uint64_t InpaintService::draw_seed() {
  std::lock_guard<std::mutex> lk(store_mu_);
  return rng_.next_u64() >> 11;  // exact in a JSON double
}

std::string InpaintService::new_id() {
  std::lock_guard<std::mutex> lk(store_mu_);
  char buf[40];
  std::snprintf(buf, sizeof buf, "s%04llx%012llx", static_cast<unsigned long long>(++counter_ & 0xffff),
                static_cast<unsigned long long>(rng_.next_u64() & 0xffffffffffffULL));
  return buf;
}

std::size_t InpaintService::session_count() const {
  std::lock_guard<std::mutex> lk(store_mu_);
  return sessions_.size();
}

std::shared_ptr<InpaintService::Slot> InpaintService::lookup(const std::string& id) {
  std::lock_guard<std::mutex> lk(store_mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ApiError(ApiErrorCode::unknown_session, "no session '" + id + "'");
  lru_.splice(lru_.begin(), lru_, it->second.second);
  return it->second.first;
}

std::shared_ptr<InpaintService::Slot> InpaintService::insert(Session s) {
  auto slot = std::make_shared<Slot>();
  slot->s = std::move(s);
  std::lock_guard<std::mutex> lk(store_mu_);
  const std::string id = slot->s.id;
  if (sessions_.count(id)) throw ApiError(ApiErrorCode::internal, "duplicate session id " + id);
  lru_.push_front(id);
  sessions_.emplace(id, std::make_pair(slot, lru_.begin()));
  while (sessions_.size() > opt_.max_sessions) {
    sessions_.erase(lru_.back());
    lru_.pop_back();
  }
  return slot;
}

void InpaintService::render(Session& s) const {
  const InpaintModel& m = model();
  Rng zr(s.seed);
  const Tensor<float> z = m.random_z(zr, 1);
  StyleTransform edit;
  if (!s.edits.empty()) {
    // Session strengths are in units of each direction's sigma.
    std::vector<AppliedEdit> scaled = s.edits;
    for (auto& e : scaled) e.strength *= find_direction(directions_, e.direction).sigma;
    edit = [this, scaled](const Tensor<float>& w) { return apply_edits(w, directions_, scaled); };
  }
  const auto out = m.complete_from_code(s.image, s.mask, s.w_enc, z, edit).final;
  const int r = m.cfg.resolution;
  s.composite_png = encode_png_rgb(out.reshaped({3, r, r}));
  s.updated_ms = now_ms();
}

json InpaintService::summary(const Session& s) const {
  json edits = json::array();
  for (const auto& e : s.edits) edits.push_back({{"direction", e.direction}, {"strength", e.strength}});
  return {{"id", s.id},
          {"seed", s.seed},
          {"edits", edits},
          {"resolution", s.image.dim(-1)},
          {"created_ms", s.created_ms},
          {"updated_ms", s.updated_ms},
          {"image", base64_encode(s.composite_png)}};
}

json InpaintService::create_session(const std::string& image_png, const std::string& mask_png,
                                    std::optional<std::uint64_t> seed) {
  const InpaintModel& m = model();
  const int r = m.cfg.resolution;
  Session s;
  try {
    s.image = decode_png_rgb(image_png);
  } catch (const std::exception& e) {
    throw ApiError(ApiErrorCode::bad_image, std::string("cannot decode image: ") + e.what());
  }
  if (s.image.dim(1) != r || s.image.dim(2) != r) {
    throw ApiError(ApiErrorCode::bad_image, "image must be " + std::to_string(r) + "x" + std::to_string(r) +
                                                ", got " + shape_str(s.image.shape()));
  }
  try {
    s.mask = decode_png_mask(mask_png);
  } catch (const std::exception& e) {
    throw ApiError(ApiErrorCode::bad_mask, std::string("cannot decode mask: ") + e.what());
  }
  if (s.mask.dim(1) != r || s.mask.dim(2) != r) {
    throw ApiError(ApiErrorCode::bad_mask, "mask must be " + std::to_string(r) + "x" + std::to_string(r) +
                                               ", got " + shape_str(s.mask.shape()));
  }
  s.image = s.image.reshaped({1, 3, r, r});
  s.mask = s.mask.reshaped({1, 1, r, r});
  s.w_enc = m.encode(s.image, s.mask);
  s.seed = seed ? *seed : draw_seed();
  s.id = new_id();
  s.created_ms = now_ms();
  render(s);
  const json out = summary(s);
  persist({{"op", "create"},
           {"id", s.id},
           {"seed", s.seed},
           {"created_ms", s.created_ms},
           {"image", base64_encode(image_png)},
           {"mask", base64_encode(mask_png)}});
  insert(std::move(s));
  return out;
}

json InpaintService::resample(const std::string& id, std::optional<std::uint64_t> seed) {
  model();
  const auto slot = lookup(id);
  const std::uint64_t sd = seed ? *seed : draw_seed();
  std::lock_guard<std::mutex> lk(slot->mu);
  slot->s.seed = sd;
  render(slot->s);
  persist({{"op", "resample"}, {"id", id}, {"seed", sd}});
  return summary(slot->s);
}

json InpaintService::edit(const std::string& id, const std::string& direction, double strength) {
  model();
  const auto slot = lookup(id);
  try {
    find_direction(directions_, direction);
  } catch (const UnknownDirectionError& e) {
    throw ApiError(ApiErrorCode::unknown_direction, e.what());
  }
  if (!std::isfinite(strength)) throw ApiError(ApiErrorCode::bad_request, "strength must be finite");
  std::lock_guard<std::mutex> lk(slot->mu);
  slot->s.edits.push_back({direction, strength});
  render(slot->s);
  persist({{"op", "edit"}, {"id", id}, {"direction", direction}, {"strength", strength}});
  return summary(slot->s);
}

json InpaintService::get(const std::string& id) {
  model();
  const auto slot = lookup(id);
  std::lock_guard<std::mutex> lk(slot->mu);
  return summary(slot->s);
}

json InpaintService::directions() const {
  json list = json::array();
  for (const auto& d : directions_) {
    list.push_back({{"name", d.name},
                    {"sigma", d.sigma},
                    {"scope", d.scope == EditScope::all_styles ? "all_styles" : "style_subset"}});
  }
  return {{"directions", list}};
}

json InpaintService::health() const {
  json h = {{"status", "ok"}, {"checkpoint", model_ != nullptr}, {"sessions", session_count()}};
  if (model_) {
    h["resolution"] = model_->cfg.resolution;
    h["stage"] = dip::to_string(model_->stage);
  }
  return h;
}

void InpaintService::persist(const json& record) {
  if (opt_.persistence_path.empty() || replaying_) return;
  std::lock_guard<std::mutex> lk(persist_mu_);
  std::ofstream out(opt_.persistence_path, std::ios::app | std::ios::binary);
  out << record.dump() << '\n';
  out.flush();
  if (!out) throw ApiError(ApiErrorCode::internal, "cannot append to " + opt_.persistence_path);
}

void InpaintService::replay() {
  std::ifstream in(opt_.persistence_path, std::ios::binary);
  if (!in) return;
  replaying_ = true;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json r = json::parse(line);
      const std::string op = r.at("op"), id = r.at("id");
      if (op == "create") {
        const InpaintModel& m = model();
        const int res = m.cfg.resolution;
        Session s;
        s.id = id;
        s.image = decode_png_rgb(base64_decode(r.at("image"))).reshaped({1, 3, res, res});
        s.mask = decode_png_mask(base64_decode(r.at("mask"))).reshaped({1, 1, res, res});
        s.w_enc = m.encode(s.image, s.mask);
        s.seed = r.at("seed");
        s.created_ms = r.value("created_ms", std::int64_t{0});
        render(s);
        insert(std::move(s));
        ++counter_;
      } else {
        std::shared_ptr<Slot> slot;
        try {
          slot = lookup(id);
        } catch (const ApiError&) {
          continue;  // evicted before this record
        }
        if (op == "resample") slot->s.seed = r.at("seed");
        else if (op == "edit") slot->s.edits.push_back({r.at("direction"), r.at("strength")});
        else throw std::invalid_argument("unknown op " + op);
        render(slot->s);
      }
    } catch (const std::exception& e) {
      replaying_ = false;
      throw std::runtime_error(opt_.persistence_path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  replaying_ = false;
}

std::pair<int, json> InpaintService::handle(const std::string& method, const std::string& path,
                                            const std::string& body) {
  try {
    auto parse_body = [&body]() -> json {
      if (body.empty()) return json::object();
      try {
        json j = json::parse(body);
        if (!j.is_object()) throw ApiError(ApiErrorCode::bad_request, "request body must be a JSON object");
        return j;
      } catch (const json::parse_error& e) {
        throw ApiError(ApiErrorCode::bad_request, std::string("malformed JSON: ") + e.what());
      }
    };
    std::vector<std::string> parts;
    for (std::size_t b = 1; b <= path.size();) {
      const auto e = path.find('/', b);
      parts.push_back(path.substr(b, (e == std::string::npos ? path.size() : e) - b));
      if (e == std::string::npos) break;
      b = e + 1;
    }
    if (method == "GET" && path == "/healthz") return {200, ok_envelope(health())};
    if (method == "GET" && path == "/directions") return {200, ok_envelope(directions())};
    if (!parts.empty() && parts[0] == "sessions") {
      if (method == "POST" && parts.size() == 1) {
        const json b = parse_body();
        const std::string img = decode_b64(required_string(b, "image", ApiErrorCode::bad_image),
                                           ApiErrorCode::bad_image, "image");
        const std::string mask = decode_b64(required_string(b, "mask", ApiErrorCode::bad_mask),
                                            ApiErrorCode::bad_mask, "mask");
        return {200, ok_envelope(create_session(img, mask, optional_seed(b)))};
      }
      if (method == "GET" && parts.size() == 2) return {200, ok_envelope(get(parts[1]))};
      if (method == "POST" && parts.size() == 3 && parts[2] == "resample") {
        return {200, ok_envelope(resample(parts[1], optional_seed(parse_body())))};
      }
      if (method == "POST" && parts.size() == 3 && parts[2] == "edit") {
        const json b = parse_body();
        const std::string dir = required_string(b, "direction", ApiErrorCode::bad_request);
        if (!b.contains("strength") || !b["strength"].is_number()) {
          throw ApiError(ApiErrorCode::bad_request, "edit needs a numeric 'strength'");
        }
        return {200, ok_envelope(edit(parts[1], dir, b["strength"].get<double>()))};
      }
    }
    return {404, error_envelope(ApiErrorCode::bad_request, "no route for " + method + " " + path)};
  } catch (const ApiError& e) {
    return {http_status(e.code()), error_envelope(e.code(), e.what())};
  } catch (const std::exception& e) {
    return {500, error_envelope(ApiErrorCode::internal, e.what())};
  }
}

void bind_routes(httplib::Server& server, InpaintService& service) {
  auto handler = [&service](const httplib::Request& req, httplib::Response& res) {
    const auto [status, body] = service.handle(req.method, req.path, req.body);
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  server.Get(".*", handler);
  server.Post(".*", handler);
}

}  // namespace dip
