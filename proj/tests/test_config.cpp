#include <fstream>

#include <gtest/gtest.h>
#include <unistd.h>

#include "facetrack/config.hpp"
#include "facetrack/scene.hpp"
#include "test_support.hpp"

using namespace facetrack;
using facetrack::fixtures::tracking_model;

TEST(Config, DefaultsCarryTheModelConstants) {
  const PipelineConfig c;
  EXPECT_EQ(c.track.rvs.sigma_o_sq, 25.0);
  EXPECT_DOUBLE_EQ(c.track.rvs.u_o, 1.0 / 2500.0);
  EXPECT_EQ(c.track.sigma_t_sq, 75.0);
  EXPECT_EQ(c.track.sigma_s_sq, 0.04);
  EXPECT_EQ(c.adaptation.stride, 5);
  EXPECT_EQ(c.n_id, 28);
  EXPECT_EQ(c.n_exp, 7);
}

TEST(Config, JsonRoundTripReproducesEveryKey) {
  PipelineConfig c;
  c.track.sigma_t_sq = 60;
  c.track.use_pso = false;
  c.track.pso.seed = 99;
  c.adaptation.stride = 3;
  c.n_id = 20;
  c.localize.min_score = 0.25;
  const nlohmann::json j = config_to_json(c);
  const PipelineConfig back = config_from_json(j);
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.track.sigma_t_sq, 60);
  EXPECT_FALSE(back.track.use_pso);
  EXPECT_EQ(back.track.pso.seed, 99u);
  EXPECT_EQ(back.adaptation.stride, 3);
  EXPECT_EQ(back.n_id, 20);
  EXPECT_EQ(config_to_json(config_from_json(config_to_json(PipelineConfig{}))), config_to_json(PipelineConfig{}));
}

TEST(Config, PartialFileOverridesOnlyNamedKeys) {
  const PipelineConfig c = config_from_json(nlohmann::json::parse(R"({"rvs": {"u_o": 0.001}, "temporal": {"enabled": false}})"));
  EXPECT_EQ(c.track.rvs.u_o, 0.001);
  EXPECT_DOUBLE_EQ(c.track.rvs.occlusion_range, 1000.0);
  EXPECT_FALSE(c.track.use_temporal);
  EXPECT_EQ(c.track.rvs.sigma_o_sq, 25.0);
  EXPECT_TRUE(c.track.use_pso);
}

TEST(Config, UnknownKeysAreRejectedByName) {
  try {
    config_from_json(nlohmann::json::parse(R"({"temporal": {"sigma_t": 75}})"));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("temporal.sigma_t"), std::string::npos);
  }
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"trackr": {}})")), FormatError);
}

TEST(Config, WrongTypesAndInvalidValuesThrow) {
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"adaptation": {"stride": "five"}})")), FormatError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"adaptation": {"stride": 0}})")), DomainError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"scale": {"sigma_s_sq": -1}})")), DomainError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"rvs": 3})")), FormatError);
}

TEST(Config, LoadFromFile) {
  const fs::path p = fs::temp_directory_path() / ("facetrack_cfg_" + std::to_string(::getpid()) + ".json");
  write_file_atomic(p, R"({"model": {"n_id": 12, "n_exp": 4}})");
  const PipelineConfig c = load_config(p);
  fs::remove(p);
  EXPECT_EQ(c.n_id, 12);
  EXPECT_EQ(c.n_exp, 4);
  EXPECT_THROW(load_config(p), IoError);
}

TEST(Scene, ParsesOrbitAndExplicitPoses) {
  const auto& model = tracking_model();
  const auto j = nlohmann::json::parse(R"({
    "seed": 4, "width": 320, "height": 240, "camera": {"f": 300, "u0": 159.5, "v0": 119.5},
    "noise": {"sigma_mm": 0.5, "quant_mm": 1},
    "clips": [
      {"identity": {"training_index": 3}, "orbit": {"frames": 5, "yaw_deg": 20, "drift": [0, 0, 30]},
       "occluders": [{"coverage": 0.2, "first_frame": 1}]},
      {"poses": [{"yaw_deg": 10, "t": [0, 0, 900]}, {"pitch_deg": -5, "t": [5, 0, 900]}]}
    ]})");
  const SceneSpec s = scene_from_json(j, model);
  EXPECT_EQ(s.seed, 4u);
  EXPECT_EQ(s.width, 320);
  EXPECT_EQ(s.camera.f, 300.0);
  EXPECT_EQ(s.noise.sigma, 0.5);
  ASSERT_EQ(s.clips.size(), 2u);
  EXPECT_TRUE(s.clips[0].w_id.isApprox(model.u_id.row(3).transpose()));
  EXPECT_EQ(s.clips[0].trajectory.size(), 5u);
  ASSERT_EQ(s.clips[0].occluders.size(), 1u);
  EXPECT_EQ(s.clips[0].occluders[0].coverage, 0.2);
  EXPECT_EQ(s.clips[1].w_id, model.mu_id);
  ASSERT_EQ(s.clips[1].trajectory.size(), 2u);
  EXPECT_NEAR(pose_record(0, s.clips[1].trajectory[0]).yaw_deg, 10.0, 1e-9);
  EXPECT_EQ(s.clips[1].trajectory[1].t, Vec3(5, 0, 900));
}

TEST(Scene, RejectsMalformedDescriptions) {
  const auto& model = tracking_model();
  auto bad = [&](const char* text) { return scene_from_json(nlohmann::json::parse(text), model); };
  EXPECT_THROW(bad(R"({"clips": []})"), FormatError);
  EXPECT_THROW(bad(R"({"clips": [{}]})"), FormatError);
  EXPECT_THROW(bad(R"({"clips": [{"orbit": {}, "poses": []}]})"), FormatError);
  EXPECT_THROW(bad(R"({"clips": [{"orbit": {"frames": 0}}]})"), FormatError);
  EXPECT_THROW(bad(R"({"clips": [{"orbit": {}, "identity": "average"}]})"), FormatError);
  EXPECT_THROW(bad(R"({"clips": [{"orbit": {}, "identity": {"training_index": 9999}}]})"), FormatError);
  EXPECT_THROW(bad(R"({"clips": [{"orbit": {}, "identity": {"weights": [1, 2]}}]})"), FormatError);
  EXPECT_THROW(bad(R"({"clips": [{"orbit": {}, "occluders": [{"coverage": 1.5}]}]})"), FormatError);
  EXPECT_THROW(bad(R"({"clips": [{"orbit": {"yaw": 3}}]})"), FormatError);
  EXPECT_THROW(bad(R"({"clips": [{"poses": [{"t": [0, 0]}]}]})"), FormatError);
}

TEST(Scene, WrittenSequenceReloadsBitIdentical) {
  const auto& model = tracking_model();
  const auto j = nlohmann::json::parse(R"({"noise": {"sigma_mm": 1, "quant_mm": 1},
    "clips": [{"orbit": {"frames": 3}}, {"identity": {"training_index": 1}, "orbit": {"frames": 2}}]})");
  const SceneSpec spec = scene_from_json(j, model);
  const RenderedScene scene = render_scene_spec(model, spec);
  ASSERT_EQ(scene.frames.size(), 5u);
  EXPECT_EQ(scene.clip_starts, (std::vector<int>{0, 3}));
  const fs::path dir = fs::temp_directory_path() / ("facetrack_scene_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  write_rendered_scene(scene, spec, dir);
  const SequenceManifest m = load_manifest(dir / "manifest.json");
  EXPECT_EQ(m.clips, scene.clip_starts);
  const auto seq = load_sequence(m);
  for (int i = 0; i < seq->size(); ++i) EXPECT_EQ(seq->frame(i), scene.frames[static_cast<size_t>(i)]);
  const auto truth = read_pose_csv(dir / *m.truth);
  ASSERT_EQ(truth.size(), 5u);
  EXPECT_EQ(truth[4].frame, 4);
  EXPECT_NEAR(truth[3].yaw_deg, scene.truth[3].yaw_deg, 1e-6);
  fs::remove_all(dir);
}
