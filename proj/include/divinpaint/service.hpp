#pragma once

// Session-based inference service: per-session inversion, diverse resampling
// and editing over a read-only model, plus its HTTP binding.

#include "divinpaint/editing.hpp"
#include "divinpaint/inpaint_model.hpp"

#include <json.hpp>

#include <chrono>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace httplib {
class Server;
}

namespace dip {

enum class ApiErrorCode { bad_request, bad_image, bad_mask, no_checkpoint, unknown_session, unknown_direction, internal };

std::string to_string(ApiErrorCode c);
int http_status(ApiErrorCode c);

class ApiError : public std::runtime_error {
 public:
  ApiError(ApiErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}
  ApiErrorCode code() const { return code_; }

 private:
  ApiErrorCode code_;
};

struct ServiceOptions {
  std::size_t max_sessions = 256;
  std::string persistence_path;  // empty: in-memory only
  std::uint64_t seed = 0;        // draws seeds for requests that omit one
};

/// One user's inpainting state. The composite is re-rendered from
/// (image, mask, w_enc, seed, edits) after every change.
struct Session {
  std::string id;
  Tensor<float> image;  // [1,3,R,R]
  Tensor<float> mask;   // [1,1,R,R]
  Tensor<float> w_enc;  // [1,S,D]
  std::uint64_t seed = 0;
  std::vector<AppliedEdit> edits;
  std::string composite_png;
  std::int64_t created_ms = 0, updated_ms = 0;
};

class InpaintService {
 public:
  /// model may be null; every session call then fails with no_checkpoint.
  InpaintService(std::shared_ptr<const InpaintModel> model, std::vector<DirectionVector> directions,
                 ServiceOptions opt = {});

  // Each call returns the session summary JSON (see docs/api.md).
  nlohmann::json create_session(const std::string& image_png, const std::string& mask_png,
                                std::optional<std::uint64_t> seed = std::nullopt);
  nlohmann::json resample(const std::string& id, std::optional<std::uint64_t> seed = std::nullopt);
  /// Appends an edit; strength is in units of the direction's sigma and edits accumulate.
  nlohmann::json edit(const std::string& id, const std::string& direction, double strength);
  nlohmann::json get(const std::string& id);
  nlohmann::json directions() const;
  nlohmann::json health() const;

  std::size_t session_count() const;

  /// Parses a request body and dispatches; returns (HTTP status, envelope).
  std::pair<int, nlohmann::json> handle(const std::string& method, const std::string& path, const std::string& body);

 private:
  struct Slot {
    std::mutex mu;
    Session s;
  };

  std::shared_ptr<Slot> lookup(const std::string& id);
  std::shared_ptr<Slot> insert(Session s);
  void render(Session& s) const;
  nlohmann::json summary(const Session& s) const;
  std::uint64_t draw_seed();
  std::string new_id();
  void persist(const nlohmann::json& record);
  void replay();
  const InpaintModel& model() const;

  std::shared_ptr<const InpaintModel> model_;
  std::vector<DirectionVector> directions_;
  ServiceOptions opt_;

  mutable std::mutex store_mu_;
  std::unordered_map<std::string, std::pair<std::shared_ptr<Slot>, std::list<std::string>::iterator>> sessions_;
  std::list<std::string> lru_;  // front = most recent
  Rng rng_;
  std::uint64_t counter_ = 0;
  std::mutex persist_mu_;
  bool replaying_ = false;
};

nlohmann::json ok_envelope(nlohmann::json data);
nlohmann::json error_envelope(ApiErrorCode code, const std::string& message);

/// Registers every endpoint on `server`, delegating to service.handle.
void bind_routes(httplib::Server& server, InpaintService& service);

}  // namespace dip
