#include "divinpaint/image_io.hpp"
#include "divinpaint/masking.hpp"
#include "divinpaint/service.hpp"
#include "divinpaint/toy_faces.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <filesystem>
#include <thread>

using namespace dip;
using nlohmann::json;

namespace {

std::shared_ptr<const InpaintModel> tiny_model(Stage stage = Stage::stage2) {
  auto m = std::make_shared<InpaintModel>(ModelConfig::profile("tiny"), AblationFlags::from_id(5), 3);
  m->stage = stage;
  return m;
}

std::vector<DirectionVector> dirs(int dim) {
  DirectionVector d;
  d.name = "hat";
  d.vector = Eigen::VectorXd::LinSpaced(dim, -1.0, 2.0).normalized();
  d.sigma = 0.5;
  return {d};
}

struct Inputs {
  std::string image, mask;
  Tensor<float> image_t, mask_t;
};

Inputs inputs(int res, std::uint64_t seed, MaskBand band = {0.3, 0.6}) {
  Rng rng(seed);
  Inputs in;
  in.image_t = render_face(sample_face(rng), res);
  in.mask_t = sample_mask(band, res, rng);
  in.image = encode_png_rgb(in.image_t);
  in.mask = encode_png_mask(in.mask_t);
  // Quantised values as the service sees them.
  in.image_t = decode_png_rgb(in.image);
  return in;
}

Tensor<float> image_of(const json& summary) { return decode_png_rgb(base64_decode(summary.at("image"))); }

Tensor<float> mask3(const Tensor<float>& m) {
  const int r = m.dim(-1);
  return m.reshaped({1, 1, r, r});
}

bool valid_pixels_equal(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& mask) {
  const int r = mask.dim(-1);
  return erase(a.reshaped({1, 3, r, r}), mask3(mask)) == erase(b.reshaped({1, 3, r, r}), mask3(mask));
}

json body(const std::string& image, const std::string& mask) {
  return {{"image", base64_encode(image)}, {"mask", base64_encode(mask)}};
}

}  // namespace

TEST(Service, CreateComposesAndValidates) {
  InpaintService svc(tiny_model(), dirs(8));
  const auto in = inputs(16, 1);
  const auto s = svc.create_session(in.image, in.mask, 5);
  EXPECT_TRUE(valid_pixels_equal(image_of(s), in.image_t, in.mask_t));
  EXPECT_EQ(s.at("seed"), 5u);

  const auto full = svc.create_session(in.image, encode_png_mask(Tensor<float>::ones({1, 16, 16})));
  EXPECT_EQ(image_of(full), in.image_t);

  const auto again = svc.create_session(in.image, in.mask, 5);
  EXPECT_NE(again.at("id"), s.at("id"));
  EXPECT_EQ(again.at("image"), s.at("image"));

  const auto r1 = svc.handle("POST", "/sessions", body(in.image, encode_png_rgb(Tensor<float>({3, 16, 16}))).dump());
  EXPECT_EQ(r1.first, 400);
  EXPECT_EQ(r1.second["error"]["code"], "bad_mask");
  const auto r2 = svc.handle("POST", "/sessions", body("not a png", in.mask).dump());
  EXPECT_EQ(r2.second["error"]["code"], "bad_image");
  const auto r3 = svc.handle("POST", "/sessions", body(encode_png_rgb(Tensor<float>({3, 8, 8})), in.mask).dump());
  EXPECT_EQ(r3.second["error"]["code"], "bad_image");
  const auto r4 = svc.handle("POST", "/sessions", R"({"image":"@@@","mask":""})");
  EXPECT_EQ(r4.second["error"]["code"], "bad_image");
  const auto r5 = svc.handle("POST", "/sessions", "{not json");
  EXPECT_EQ(r5.second["error"]["code"], "bad_request");
}

TEST(Service, GrayMaskIsRejected) {
  InpaintService svc(tiny_model(), dirs(8));
  const auto in = inputs(16, 2);
  // An RGB PNG with mid-gray pixels is not a binary mask.
  const auto gray = encode_png_rgb(Tensor<float>({3, 16, 16}, 0.0f));
  const auto r = svc.handle("POST", "/sessions", body(in.image, gray).dump());
  EXPECT_EQ(r.second["error"]["code"], "bad_mask");
}

TEST(Service, ResampleIsSeededAndTouchesOnlyHoles) {
  InpaintService svc(tiny_model(), dirs(8));
  const auto in = inputs(16, 3);
  const std::string id = svc.create_session(in.image, in.mask).at("id");
  const auto a = svc.resample(id, 11), b = svc.resample(id, 11), c = svc.resample(id, 12);
  EXPECT_EQ(a.at("image"), b.at("image"));
  EXPECT_NE(a.at("image"), c.at("image"));
  EXPECT_TRUE(valid_pixels_equal(image_of(a), image_of(c), in.mask_t));
  EXPECT_EQ(svc.get(id).at("seed"), 12u);
  const auto unseeded = svc.resample(id);
  EXPECT_TRUE(unseeded.at("seed").is_number_unsigned());

  // Mean pairwise distance in the hole over several resamples.
  std::vector<Tensor<float>> outs;
  for (int s = 0; s < 6; ++s) outs.push_back(image_of(svc.resample(id, 100 + s)));
  double dist = 0;
  for (std::size_t i = 0; i < outs.size(); ++i)
    for (std::size_t j = i + 1; j < outs.size(); ++j) dist += (outs[i].array() - outs[j].array()).abs().sum();
  EXPECT_GT(dist, 0.0);
  EXPECT_EQ(svc.handle("POST", "/sessions/nope/resample", "").second["error"]["code"], "unknown_session");
}

TEST(Service, EditsAreCumulativeAndReversible) {
  InpaintService svc(tiny_model(), dirs(8));
  const auto in = inputs(16, 4);
  const std::string id = svc.create_session(in.image, in.mask, 9).at("id");
  const auto base = svc.get(id).at("image");
  EXPECT_EQ(svc.edit(id, "hat", 0.0).at("image"), base);
  const auto moved = svc.edit(id, "hat", 3.0);
  EXPECT_NE(moved.at("image"), base);
  EXPECT_TRUE(valid_pixels_equal(image_of(moved), in.image_t, in.mask_t));
  const auto back = svc.edit(id, "hat", -3.0);
  EXPECT_EQ(back.at("image"), base);
  EXPECT_EQ(back.at("edits").size(), 3u);

  const auto r = svc.handle("POST", "/sessions/" + id + "/edit", R"({"direction":"beard","strength":1})");
  EXPECT_EQ(r.first, 404);
  EXPECT_EQ(r.second["error"]["code"], "unknown_direction");
  const auto r2 = svc.handle("POST", "/sessions/" + id + "/edit", R"({"direction":"hat"})");
  EXPECT_EQ(r2.second["error"]["code"], "bad_request");
  EXPECT_EQ(svc.handle("POST", "/sessions/zzz/edit", R"({"direction":"hat","strength":1})").second["error"]["code"],
            "unknown_session");
}

TEST(Service, SessionsAreIsolatedAndEvictedLru) {
  ServiceOptions opt;
  opt.max_sessions = 2;
  InpaintService svc(tiny_model(), dirs(8), opt);
  const auto in = inputs(16, 5);
  const std::string a = svc.create_session(in.image, in.mask, 1).at("id");
  const std::string b = svc.create_session(in.image, in.mask, 2).at("id");
  const auto b_before = svc.get(b);
  svc.edit(a, "hat", 2.0);
  EXPECT_EQ(svc.get(b).at("image"), b_before.at("image"));
  EXPECT_TRUE(svc.get(b).at("edits").empty());
  svc.get(a);  // a becomes most recent
  const std::string c = svc.create_session(in.image, in.mask, 3).at("id");
  EXPECT_EQ(svc.session_count(), 2u);
  EXPECT_NO_THROW(svc.get(a));
  EXPECT_NO_THROW(svc.get(c));
  EXPECT_THROW(svc.get(b), ApiError);
}

TEST(Service, NoCheckpointAndRoutes) {
  InpaintService svc(nullptr, {});
  const auto in = inputs(16, 6);
  const auto r = svc.handle("POST", "/sessions", body(in.image, in.mask).dump());
  EXPECT_EQ(r.first, 503);
  EXPECT_EQ(r.second["error"]["code"], "no_checkpoint");
  const auto h = svc.handle("GET", "/healthz", "");
  EXPECT_EQ(h.first, 200);
  EXPECT_EQ(h.second["data"]["checkpoint"], false);
  EXPECT_EQ(svc.handle("GET", "/nowhere", "").first, 404);

  InpaintService with(tiny_model(), dirs(8));
  const auto d = with.handle("GET", "/directions", "");
  ASSERT_EQ(d.second["data"]["directions"].size(), 1u);
  EXPECT_EQ(d.second["data"]["directions"][0]["name"], "hat");
  EXPECT_THROW(InpaintService(tiny_model(), dirs(5)), std::invalid_argument);
}

TEST(Service, PersistenceReplaysSessions) {
  const auto path = (std::filesystem::temp_directory_path() / "dip_service_test.jsonl").string();
  std::filesystem::remove(path);
  ServiceOptions opt;
  opt.persistence_path = path;
  const auto in = inputs(16, 7);
  std::string id;
  json last;
  {
    InpaintService svc(tiny_model(), dirs(8), opt);
    id = svc.create_session(in.image, in.mask, 4).at("id");
    svc.resample(id, 8);
    last = svc.edit(id, "hat", 1.5);
  }
  InpaintService restored(tiny_model(), dirs(8), opt);
  const auto s = restored.get(id);
  EXPECT_EQ(s.at("image"), last.at("image"));
  EXPECT_EQ(s.at("seed"), 8u);
  EXPECT_EQ(s.at("edits"), last.at("edits"));
  const std::string fresh = restored.create_session(in.image, in.mask).at("id");
  EXPECT_NE(fresh, id);
  std::filesystem::remove(path);
}

TEST(Service, HttpRoundTrip) {
  InpaintService svc(tiny_model(), dirs(8));
  httplib::Server server;
  bind_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  const auto health = cli.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_TRUE(json::parse(health->body)["ok"].get<bool>());

  const auto in = inputs(16, 8);
  auto b = body(in.image, in.mask);
  b["seed"] = 21;
  const auto created = cli.Post("/sessions", b.dump(), "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 200);
  const auto cj = json::parse(created->body);
  const std::string id = cj["data"]["id"];
  EXPECT_TRUE(valid_pixels_equal(image_of(cj["data"]), in.image_t, in.mask_t));

  const auto res = cli.Post("/sessions/" + id + "/resample", R"({"seed":3})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body)["data"]["seed"], 3);
  const auto ed = cli.Post("/sessions/" + id + "/edit", R"({"direction":"hat","strength":0})", "application/json");
  ASSERT_TRUE(ed);
  EXPECT_EQ(json::parse(ed->body)["data"]["image"], json::parse(res->body)["data"]["image"]);
  const auto missing = cli.Get("/sessions/absent");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["error"]["code"], "unknown_session");

  server.stop();
  t.join();
}
