#pragma once

// JSON scene descriptions for the renderer; schema in docs/scene_format.md.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "facetrack/config.hpp"
#include "facetrack/io.hpp"
#include "facetrack/synth.hpp"

namespace facetrack {

struct SceneClip {
  VecX w_id;
  VecX w_exp;
  std::vector<Pose> trajectory;
  std::vector<Occluder> occluders;
};

struct SceneSpec {
  std::vector<SceneClip> clips;
  NoiseModel noise;
  CameraIntrinsics camera;
  int width = 640;
  int height = 480;
  uint64_t seed = 1;
};

struct RenderedScene {
  std::vector<DepthFrame> frames;
  std::vector<PoseRecord> truth;
  std::vector<int> clip_starts;
};

namespace detail {

inline Vec3 vec3_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw FormatError("scene: expected a 3-vector");
  return Vec3(v[0], v[1], v[2]);
}

// "mean", {"training_index": i} or {"weights": [...]}.
inline VecX weights_from_json(const nlohmann::json& j, const VecX& mean, const MatX& training, const char* what) {
  if (j.is_string()) {
    if (j.get<std::string>() != "mean") throw FormatError(std::string("scene: unknown ") + what + " '" + j.get<std::string>() + "'");
    return mean;
  }
  check_keys(j, what, {"training_index", "weights"});
  if (j.contains("training_index")) {
    const int i = j.at("training_index").get<int>();
    if (i < 0 || i >= training.rows()) throw FormatError(std::string("scene: ") + what + " training index out of range");
    return training.row(i).transpose();
  }
  const auto w = j.at("weights").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(w.size()) != mean.size()) throw FormatError(std::string("scene: ") + what + " weight length does not match the model");
  return Eigen::Map<const VecX>(w.data(), static_cast<Eigen::Index>(w.size()));
}

}  // namespace detail

inline SceneSpec scene_from_json(const nlohmann::json& j, const MultilinearModel& model) {
  using detail::check_keys;
  SceneSpec s;
  try {
    check_keys(j, "", {"seed", "camera", "width", "height", "noise", "clips"});
    s.seed = j.value("seed", s.seed);
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    if (j.contains("camera")) {
      const auto& c = j["camera"];
      check_keys(c, "camera", {"f", "u0", "v0"});
      s.camera.f = c.value("f", s.camera.f);
      s.camera.u0 = c.value("u0", s.camera.u0);
      s.camera.v0 = c.value("v0", s.camera.v0);
    }
    if (j.contains("noise")) {
      const auto& n = j["noise"];
      check_keys(n, "noise", {"sigma_mm", "quant_mm"});
      s.noise.sigma = n.value("sigma_mm", s.noise.sigma);
      s.noise.quant = n.value("quant_mm", s.noise.quant);
    }
    for (const auto& c : j.at("clips")) {
      check_keys(c, "clips[]", {"identity", "expression", "orbit", "poses", "occluders"});
      SceneClip clip;
      clip.w_id = detail::weights_from_json(c.value("identity", nlohmann::json("mean")), model.mu_id, model.u_id, "identity");
      clip.w_exp = detail::weights_from_json(c.value("expression", nlohmann::json("mean")), model.mu_exp, model.u_exp, "expression");
      if (c.contains("orbit") == c.contains("poses")) throw FormatError("scene: each clip needs exactly one of 'orbit' or 'poses'");
      if (c.contains("orbit")) {
        const auto& o = c["orbit"];
        check_keys(o, "orbit", {"frames", "yaw_deg", "pitch_deg", "roll_deg", "start", "drift", "periodic"});
        OrbitOptions opts;
        opts.frames = o.value("frames", opts.frames);
        opts.yaw_deg = o.value("yaw_deg", opts.yaw_deg);
        opts.pitch_deg = o.value("pitch_deg", opts.pitch_deg);
        opts.roll_deg = o.value("roll_deg", opts.roll_deg);
        if (o.contains("start")) opts.start = detail::vec3_from_json(o["start"]);
        if (o.contains("drift")) opts.drift = detail::vec3_from_json(o["drift"]);
        opts.periodic = o.value("periodic", opts.periodic);
        if (opts.frames < 1) throw FormatError("scene: orbit needs at least one frame");
        clip.trajectory = orbit_trajectory(opts);
      } else {
        for (const auto& p : c["poses"]) {
          check_keys(p, "poses[]", {"yaw_deg", "pitch_deg", "roll_deg", "t"});
          PoseRecord r;
          r.yaw_deg = p.value("yaw_deg", 0.0);
          r.pitch_deg = p.value("pitch_deg", 0.0);
          r.roll_deg = p.value("roll_deg", 0.0);
          r.t = detail::vec3_from_json(p.at("t"));
          clip.trajectory.push_back(pose_from_record(r));
        }
        if (clip.trajectory.empty()) throw FormatError("scene: clip has no poses");
      }
      if (c.contains("occluders")) {
        for (const auto& o : c["occluders"]) {
          check_keys(o, "occluders[]", {"coverage", "depth_offset_mm", "first_frame", "last_frame"});
          Occluder occ;
          occ.coverage = o.value("coverage", occ.coverage);
          occ.depth_offset = o.value("depth_offset_mm", occ.depth_offset);
          occ.first_frame = o.value("first_frame", occ.first_frame);
          occ.last_frame = o.value("last_frame", occ.last_frame);
          if (occ.coverage < 0 || occ.coverage > 1) throw FormatError("scene: occluder coverage outside [0, 1]");
          clip.occluders.push_back(occ);
        }
      }
      s.clips.push_back(std::move(clip));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene: ") + e.what());
  }
  if (s.clips.empty()) throw FormatError("scene: no clips");
  if (s.width <= 0 || s.height <= 0) throw FormatError("scene: image size must be positive");
  if (s.noise.sigma < 0 || s.noise.quant < 0) throw FormatError("scene: noise parameters must be non-negative");
  return s;
}

inline SceneSpec load_scene(const std::filesystem::path& path, const MultilinearModel& model) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return scene_from_json(j, model);
}

/// Renders the clips back to back; clip c draws its noise and occluders from
/// seed + c.
inline RenderedScene render_scene_spec(const MultilinearModel& model, const SceneSpec& spec) {
  RenderedScene out;
  for (size_t c = 0; c < spec.clips.size(); ++c) {
    const auto& clip = spec.clips[c];
    SyntheticScene s;
    s.w_id = clip.w_id;
    s.w_exp = clip.w_exp;
    s.trajectory = clip.trajectory;
    s.occluders = clip.occluders;
    s.noise = spec.noise;
    s.camera = spec.camera;
    s.width = spec.width;
    s.height = spec.height;
    s.seed = spec.seed + c;
    auto seq = render_scene(model, s);
    out.clip_starts.push_back(static_cast<int>(out.frames.size()));
    for (size_t i = 0; i < seq.frames.size(); ++i) {
      out.truth.push_back(pose_record(static_cast<int>(out.frames.size()), seq.truth[i]));
      out.frames.push_back(std::move(seq.frames[i]));
    }
  }
  return out;
}

/// Writes frames, ground truth and a manifest into `dir`.
inline SequenceManifest write_rendered_scene(const RenderedScene& scene, const SceneSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SequenceManifest m;
  m.root = dir;
  m.count = static_cast<int>(scene.frames.size());
  m.intrinsics = spec.camera;
  m.unit_scale = 1.0;
  m.truth = "truth.csv";
  m.clips = scene.clip_starts;
  for (int i = 0; i < m.count; ++i) write_depth_png(m.frame_path(i), scene.frames[static_cast<size_t>(i)], m.unit_scale);
  write_pose_csv(dir / "truth.csv", scene.truth);
  save_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace facetrack
