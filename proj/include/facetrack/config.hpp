#pragma once

// Pipeline configuration and its JSON form. Every key is optional; unknown
// keys are rejected so that typos do not silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "facetrack/errors.hpp"
#include "facetrack/io.hpp"
#include "facetrack/tracker.hpp"

namespace facetrack {

struct AdaptationConfig {
  bool enabled = true;
  int stride = 5;             // frames between identity samples
  int clip_frames = 30;       // adaptation round length inside a clip
  size_t min_visible_rays = 50;
};

struct PipelineConfig {
  TrackConfig track;
  LocalizeOptions localize;
  AdaptationConfig adaptation;
  int n_id = 28;              // identity components kept from the model
  int n_exp = 7;
  int max_consecutive_failures = 30;

  void validate() const {
    track.validate();
    if (adaptation.stride < 1 || adaptation.clip_frames < 1) throw DomainError("adaptation stride and clip length must be positive");
    if (n_id < 1 || n_exp < 1) throw DomainError("model truncation sizes must be positive");
    if (max_consecutive_failures < 1) throw DomainError("max_consecutive_failures must be positive");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw FormatError("config: '" + where + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.contains(key)) throw FormatError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json config_to_json(const PipelineConfig& c) {
  const auto& t = c.track;
  nlohmann::json j;
  j["rvs"] = {{"sigma_o_sq", t.rvs.sigma_o_sq}, {"u_o", t.rvs.u_o}};
  j["temporal"] = {{"enabled", t.use_temporal},
                   {"sigma_t_sq", t.sigma_t_sq},
                   {"gate_mm", t.temporal_gate_mm},
                   {"max_gradient_mm_per_px", t.temporal_max_gradient}};
  j["scale"] = {{"enabled", t.use_scale}, {"sigma_s_sq", t.sigma_s_sq}, {"fix_alpha", t.fix_alpha}};
  j["solver"] = {{"max_iterations", t.max_inner_iters}, {"step_tol", t.step_tol}, {"value_tol", t.value_tol}};
  j["failure"] = {{"max_rotation_change_rad", t.max_rotation_change},
                  {"max_translation_change_mm", t.max_translation_change},
                  {"max_occluded_fraction", t.max_occluded_fraction},
                  {"max_consecutive_failures", c.max_consecutive_failures}};
  j["pso"] = {{"enabled", t.use_pso},
              {"particles", t.pso.particles},
              {"iterations", t.pso.iterations},
              {"inertia", t.pso.inertia},
              {"cognitive", t.pso.cognitive},
              {"social", t.pso.social},
              {"rotation_range_rad", t.pso.rotation_range},
              {"translation_range_mm", t.pso.translation_range},
              {"seed", t.pso.seed},
              {"recovery_min_facing_cos", t.recovery_min_facing_cos}};
  j["correspondence"] = {{"cull_back_facing", t.correspondence.cull_back_facing},
                         {"subpixel", t.correspondence.subpixel},
                         {"max_depth_jump_mm", t.correspondence.max_depth_jump},
                         {"roi_margin_px", t.roi_margin},
                         {"normal_window", t.normals.window},
                         {"normal_min_valid", t.normals.min_valid},
                         {"normal_max_depth_jump_mm", t.normals.max_depth_jump}};
  j["adaptation"] = {{"enabled", c.adaptation.enabled},
                     {"stride", c.adaptation.stride},
                     {"clip_frames", c.adaptation.clip_frames},
                     {"min_visible_rays", c.adaptation.min_visible_rays}};
  j["model"] = {{"n_id", c.n_id}, {"n_exp", c.n_exp}};
  j["localization"] = {{"roi_height_mm", c.localize.roi_height_mm},
                       {"roi_width_mm", c.localize.roi_width_mm},
                       {"head_width_mm", c.localize.head_width_mm},
                       {"head_height_mm", c.localize.head_height_mm},
                       {"depth_band_mm", c.localize.depth_band_mm},
                       {"min_score", c.localize.min_score},
                       {"coarse_stride", c.localize.coarse_stride}};
  return j;
}

inline PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  using detail::check_keys;
  using detail::read_key;
  auto& t = c.track;
  try {
    check_keys(j, "", {"rvs", "temporal", "scale", "solver", "failure", "pso", "correspondence", "adaptation", "model", "localization"});
    if (j.contains("rvs")) {
      const auto& s = j["rvs"];
      check_keys(s, "rvs", {"sigma_o_sq", "u_o"});
      read_key(s, "sigma_o_sq", t.rvs.sigma_o_sq);
      read_key(s, "u_o", t.rvs.u_o);
      if (t.rvs.u_o > 0) t.rvs.occlusion_range = 1.0 / t.rvs.u_o;
    }
    if (j.contains("temporal")) {
      const auto& s = j["temporal"];
      check_keys(s, "temporal", {"enabled", "sigma_t_sq", "gate_mm", "max_gradient_mm_per_px"});
      read_key(s, "enabled", t.use_temporal);
      read_key(s, "sigma_t_sq", t.sigma_t_sq);
      read_key(s, "gate_mm", t.temporal_gate_mm);
      read_key(s, "max_gradient_mm_per_px", t.temporal_max_gradient);
    }
    if (j.contains("scale")) {
      const auto& s = j["scale"];
      check_keys(s, "scale", {"enabled", "sigma_s_sq", "fix_alpha"});
      read_key(s, "enabled", t.use_scale);
      read_key(s, "sigma_s_sq", t.sigma_s_sq);
      read_key(s, "fix_alpha", t.fix_alpha);
    }
    if (j.contains("solver")) {
      const auto& s = j["solver"];
      check_keys(s, "solver", {"max_iterations", "step_tol", "value_tol"});
      read_key(s, "max_iterations", t.max_inner_iters);
      read_key(s, "step_tol", t.step_tol);
      read_key(s, "value_tol", t.value_tol);
    }
    if (j.contains("failure")) {
      const auto& s = j["failure"];
      check_keys(s, "failure", {"max_rotation_change_rad", "max_translation_change_mm", "max_occluded_fraction", "max_consecutive_failures"});
      read_key(s, "max_rotation_change_rad", t.max_rotation_change);
      read_key(s, "max_translation_change_mm", t.max_translation_change);
      read_key(s, "max_occluded_fraction", t.max_occluded_fraction);
      read_key(s, "max_consecutive_failures", c.max_consecutive_failures);
    }
    if (j.contains("pso")) {
      const auto& s = j["pso"];
      check_keys(s, "pso", {"enabled", "particles", "iterations", "inertia", "cognitive", "social", "rotation_range_rad",
                            "translation_range_mm", "seed", "recovery_min_facing_cos"});
      read_key(s, "enabled", t.use_pso);
      read_key(s, "particles", t.pso.particles);
      read_key(s, "iterations", t.pso.iterations);
      read_key(s, "inertia", t.pso.inertia);
      read_key(s, "cognitive", t.pso.cognitive);
      read_key(s, "social", t.pso.social);
      read_key(s, "rotation_range_rad", t.pso.rotation_range);
      read_key(s, "translation_range_mm", t.pso.translation_range);
      read_key(s, "seed", t.pso.seed);
      read_key(s, "recovery_min_facing_cos", t.recovery_min_facing_cos);
    }
    if (j.contains("correspondence")) {
      const auto& s = j["correspondence"];
      check_keys(s, "correspondence", {"cull_back_facing", "subpixel", "max_depth_jump_mm", "roi_margin_px", "normal_window",
                                       "normal_min_valid", "normal_max_depth_jump_mm"});
      read_key(s, "cull_back_facing", t.correspondence.cull_back_facing);
      read_key(s, "subpixel", t.correspondence.subpixel);
      read_key(s, "max_depth_jump_mm", t.correspondence.max_depth_jump);
      read_key(s, "roi_margin_px", t.roi_margin);
      read_key(s, "normal_window", t.normals.window);
      read_key(s, "normal_min_valid", t.normals.min_valid);
      read_key(s, "normal_max_depth_jump_mm", t.normals.max_depth_jump);
    }
    if (j.contains("adaptation")) {
      const auto& s = j["adaptation"];
      check_keys(s, "adaptation", {"enabled", "stride", "clip_frames", "min_visible_rays"});
      read_key(s, "enabled", c.adaptation.enabled);
      read_key(s, "stride", c.adaptation.stride);
      read_key(s, "clip_frames", c.adaptation.clip_frames);
      read_key(s, "min_visible_rays", c.adaptation.min_visible_rays);
    }
    if (j.contains("model")) {
      const auto& s = j["model"];
      check_keys(s, "model", {"n_id", "n_exp"});
      read_key(s, "n_id", c.n_id);
      read_key(s, "n_exp", c.n_exp);
    }
    if (j.contains("localization")) {
      const auto& s = j["localization"];
      check_keys(s, "localization", {"roi_height_mm", "roi_width_mm", "head_width_mm", "head_height_mm", "depth_band_mm",
                                     "min_score", "coarse_stride"});
      read_key(s, "roi_height_mm", c.localize.roi_height_mm);
      read_key(s, "roi_width_mm", c.localize.roi_width_mm);
      read_key(s, "head_width_mm", c.localize.head_width_mm);
      read_key(s, "head_height_mm", c.localize.head_height_mm);
      read_key(s, "depth_band_mm", c.localize.depth_band_mm);
      read_key(s, "min_score", c.localize.min_score);
      read_key(s, "coarse_stride", c.localize.coarse_stride);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace facetrack
