#pragma once

// Rigid face tracking on depth frames: head localization, the per-frame
// objective (ray visibility score + temporal coherence + scale
// accumulation), a damped Gauss-Newton trust-region solver, failure
// detection and particle-swarm recovery.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "facetrack/face_model.hpp"
#include "facetrack/geometry.hpp"
#include "facetrack/visibility.hpp"

namespace facetrack {

// ---------------------------------------------------------------------------
// Localization

struct LocalizeOptions {
  double roi_height_mm = 240.0;
  double roi_width_mm = 320.0;
  double head_width_mm = 160.0;
  double head_height_mm = 220.0;
  double depth_band_mm = 150.0;  // depth consistency with the candidate centre
  double min_score = 0.5;
  int coarse_stride = 4;
  double depth_offset_mm = 0.0;  // face surface to model origin, along the view axis
};

struct Localization {
  Roi roi;
  Pose pose;
  Vec2 center = Vec2::Zero();
  double score = 0.0;
};

namespace detail {

struct TemplateSample {
  double x_mm, y_mm;
};

// Head ellipse (positive) and the flanking background bands beside and above
// the head (negative), as offsets in mm at the candidate's depth.
inline void head_template(const LocalizeOptions& o, std::vector<TemplateSample>& head,
                          std::vector<TemplateSample>& background) {
  const double ax = o.head_width_mm / 2, ay = o.head_height_mm / 2;
  const int n = 13;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = ax * (-1.0 + 2.0 * (i + 0.5) / n);
      const double y = ay * (-1.0 + 2.0 * (j + 0.5) / n);
      if ((x / ax) * (x / ax) + (y / ay) * (y / ay) <= 0.8) head.push_back({x, y});
    }
  const double hw = o.roi_width_mm / 2, hh = o.roi_height_mm / 2;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = hw * (-1.0 + 2.0 * (i + 0.5) / n);
      const double y = hh * (-1.0 + 2.0 * (j + 0.5) / n);
      if (y > 0.3 * hh) continue;  // shoulders may appear below the head
      const double r = (x / (1.25 * ax)) * (x / (1.25 * ax)) + (y / (1.25 * ay)) * (y / (1.25 * ay));
      if (r > 1.0) background.push_back({x, y});
    }
}

inline double template_score(const DepthFrame& frame, const CameraIntrinsics& k, int u, int v,
                             const std::vector<TemplateSample>& head, const std::vector<TemplateSample>& background,
                             double band) {
  if (!frame.valid(u, v)) return -1.0;
  const double d = frame.at(u, v);
  const double s = k.f / d;
  auto consistent = [&](const TemplateSample& t) {
    const int uu = u + static_cast<int>(std::lround(t.x_mm * s));
    const int vv = v + static_cast<int>(std::lround(t.y_mm * s));
    return frame.valid(uu, vv) && std::abs(frame.at(uu, vv) - d) < band;
  };
  int in = 0, out = 0, seen = 0;
  for (const auto& t : head) in += consistent(t);
  for (const auto& t : background) {
    const int uu = u + static_cast<int>(std::lround(t.x_mm * s));
    const int vv = v + static_cast<int>(std::lround(t.y_mm * s));
    if (!frame.bounds().contains(uu, vv)) continue;  // beyond the image says nothing
    ++seen;
    out += consistent(t);
  }
  if (2 * seen < static_cast<int>(background.size())) return -1.0;
  return static_cast<double>(in) / static_cast<double>(head.size()) -
         static_cast<double>(out) / static_cast<double>(seen);
}

}  // namespace detail

/// Finds the head by correlating a depth-scaled head template with the
/// depth-validity mask. Coarse search on a pixel grid, then a dense search
/// around the best coarse candidate. The initial pose has no rotation and
/// unit scale; its translation is the back-projected centre pushed back by
/// `depth_offset_mm`.
inline Localization localize_face(const DepthFrame& frame, const CameraIntrinsics& k, const LocalizeOptions& o = {}) {
  std::vector<detail::TemplateSample> head, background;
  detail::head_template(o, head, background);
  double best = -2.0;
  int bu = -1, bv = -1;
  const int stride = std::max(1, o.coarse_stride);
  for (int v = 0; v < frame.height(); v += stride)
    for (int u = 0; u < frame.width(); u += stride) {
      const double s = detail::template_score(frame, k, u, v, head, background, o.depth_band_mm);
      if (s > best) {
        best = s;
        bu = u;
        bv = v;
      }
    }
  if (bu < 0) throw LocalizationError("no valid depth in the frame");
  const int cu = bu, cv = bv;
  for (int v = cv - stride; v <= cv + stride; ++v)
    for (int u = cu - stride; u <= cu + stride; ++u) {
      const double s = detail::template_score(frame, k, u, v, head, background, o.depth_band_mm);
      if (s > best) {
        best = s;
        bu = u;
        bv = v;
      }
    }
  if (best < o.min_score) throw LocalizationError("no head-shaped region found (best template score " + std::to_string(best) + ")");

  // Face depth: median of consistent depths in a small central window.
  const double d0 = frame.at(bu, bv);
  const int half = std::max(1, static_cast<int>(std::lround(k.f * 20.0 / d0)));
  std::vector<double> depths;
  for (int v = bv - half; v <= bv + half; ++v)
    for (int u = bu - half; u <= bu + half; ++u)
      if (frame.valid(u, v) && std::abs(frame.at(u, v) - d0) < o.depth_band_mm) depths.push_back(frame.at(u, v));
  std::nth_element(depths.begin(), depths.begin() + static_cast<std::ptrdiff_t>(depths.size() / 2), depths.end());
  const double d = depths[depths.size() / 2];

  Localization loc;
  loc.center = Vec2(bu, bv);
  loc.score = best;
  loc.roi = depth_adaptive_roi(loc.center, d, k, frame.width(), frame.height(), o.roi_height_mm, o.roi_width_mm);
  loc.pose.t = backproject(loc.center, d + o.depth_offset_mm, k);
  return loc;
}

/// Depth of the model origin behind the frontal face surface near the
/// view axis, for the mean shape of `dist`.
inline double face_depth_offset(const FaceDistribution& dist, double radius_mm = 20.0) {
  std::vector<double> z;
  double zmin = 0.0;
  for (int i = 0; i < dist.vertex_count(); ++i) {
    const Vec3 p = dist.mean(i);
    zmin = std::min(zmin, p.z());
    const bool front = dist.normals.empty() || dist.normals[static_cast<size_t>(i)].z() < -0.5;
    if (front && std::abs(p.x()) < radius_mm && std::abs(p.y()) < radius_mm) z.push_back(-p.z());
  }
  if (z.empty()) return -zmin;
  std::nth_element(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(z.size() / 2), z.end());
  return z[z.size() / 2];
}

// ---------------------------------------------------------------------------
// Configuration and state

struct PsoConfig {
  int particles = 32;
  int iterations = 20;
  double inertia = 0.72;
  double cognitive = 1.49;
  double social = 1.49;
  double rotation_range = 15.0 * std::numbers::pi / 180.0;  // rad, per axis
  double translation_range = 50.0;                         // mm, per axis
  uint64_t seed = 1;
};

struct TrackConfig {
  RvsParams rvs;
  double sigma_t_sq = 75.0;
  double sigma_s_sq = 0.04;
  // Temporal samples farther than the gate from the current surface, or on
  // a depth edge (bilinear gradient above the limit), are dropped.
  double temporal_gate_mm = 50.0;
  double temporal_max_gradient = 20.0;  // mm per pixel
  int max_inner_iters = 20;
  double step_tol = 1e-6;
  double value_tol = 1e-7;  // relative decrease of an accepted step below which the solve stops
  double max_rotation_change = std::numbers::pi / 4;
  double max_translation_change = 100.0;
  double max_occluded_fraction = 0.5;
  bool use_temporal = true;
  bool use_scale = true;
  bool use_pso = true;
  bool fix_alpha = false;
  bool force_visible = false;  // label every matched ray visible
  CorrespondOptions correspondence;
  double recovery_min_facing_cos = 0.2;
  int roi_margin = 40;         // px around the projected face when building the cloud
  NormalOptions normals;
  PsoConfig pso;

  void validate() const {
    rvs.validate();
    if (!(sigma_t_sq > 0) || !(sigma_s_sq > 0) || !(temporal_gate_mm > 0) || !(temporal_max_gradient > 0) || max_inner_iters < 1 || !(step_tol > 0) || !(value_tol >= 0) ||
        !(max_rotation_change > 0) || !(max_translation_change > 0) || !(max_occluded_fraction > 0) ||
        pso.particles < 1 || pso.iterations < 0)
      throw DomainError("tracker configuration values must be positive");
  }
};

struct TrackerState {
  Pose pose;
  std::vector<PixelIndex> visible_pixels;
  double lambda_s = 0.0;
  std::optional<DepthFrame> prev_frame;
  int frame_index = 0;
};

/// State for the first frame of a track: temporal and scale terms inactive.
inline TrackerState initial_state(const Pose& pose, int frame_index = 0) {
  TrackerState s;
  s.pose = pose;
  s.frame_index = frame_index;
  return s;
}

inline double scale_cost(double delta_alpha, double lambda_s) { return 0.5 * lambda_s * delta_alpha * delta_alpha; }

// ---------------------------------------------------------------------------
// Per-frame objective

/// L(d) = L_rvs(base + d) + L_t(d) + L_s(d) over the 7-vector increment
/// d = (omega, t, alpha), where base + d means R = R(d_omega) R_base,
/// t = t_base + d_t, alpha = alpha_base + d_alpha.
class FrameObjective {
public:
  /// Everything frozen while the pose moves inside one solver step.
  struct Linearization {
    std::vector<RayCorrespondence> rays;
    VisibilityLabels labels;
    std::vector<uint8_t> temporal_active;
  };

  FrameObjective(const Pose& base, const DepthFrame& frame, const FaceDistribution& dist, const CameraIntrinsics& k,
                 const TrackConfig& cfg, const TrackerState* temporal_source, double lambda_s)
      : base_(base), frame_(&frame), dist_(&dist), k_(k), cfg_(cfg), lambda_s_(lambda_s) {
    Roi roi = projected_bounds(dist, base, k, frame.width(), frame.height(), cfg.roi_margin);
    if (roi.area() > 0) {
      try {
        cloud_ = cloud_from_frame(frame, roi, k, cfg.normals);
      } catch (const EmptyCloudError&) {
      }
    }
    if (temporal_source != nullptr && temporal_source->prev_frame.has_value()) {
      const DepthFrame& prev = *temporal_source->prev_frame;
      for (const auto& px : temporal_source->visible_pixels)
        if (prev.valid(px.u, px.v)) samples_.push_back(backproject(Vec2(px.u, px.v), prev.at(px.u, px.v), k));
    }
  }

  // The objective refers to the frame and distribution; temporaries would dangle.
  FrameObjective(const Pose&, DepthFrame&&, const FaceDistribution&, const CameraIntrinsics&, const TrackConfig&,
                 const TrackerState*, double) = delete;
  FrameObjective(const Pose&, const DepthFrame&, FaceDistribution&&, const CameraIntrinsics&, const TrackConfig&,
                 const TrackerState*, double) = delete;

  const Pose& base() const { return base_; }
  Pose pose_at(const Vec7& d) const { return apply_increment(base_, Pose::from_vector(d)); }
  size_t temporal_sample_count() const { return samples_.size(); }
  const PointCloud& cloud() const { return cloud_; }

  Linearization linearize(const Vec7& d) const {
    Linearization lin;
    const Pose pose = pose_at(d);
    if (cloud_.empty()) {
      lin.rays.resize(static_cast<size_t>(dist_->vertex_count()));
      for (int i = 0; i < dist_->vertex_count(); ++i) lin.rays[static_cast<size_t>(i)].vertex = i;
    } else {
      lin.rays = correspond(*dist_, pose, cloud_, k_, cfg_.correspondence);
    }
    lin.labels = classify_visibility(lin.rays, pose, *dist_, cfg_.rvs);
    if (cfg_.force_visible)
      for (auto& g : lin.labels.gamma)
        if (g != Visibility::excluded) g = Visibility::visible;
    lin.temporal_active.assign(samples_.size(), 0);
    const Pose dp = Pose::from_vector(d);
    const Mat3 rd = dp.rotation();
    const double sd = dp.scale();
    for (size_t m = 0; m < samples_.size(); ++m) {
      const Vec3 q = sd * (rd * (samples_[m] - base_.t)) + base_.t + dp.t;
      if (!(q.z() > 0)) continue;
      const auto depth = sample_bilinear_with_gradient(*frame_, project(q, k_));
      if (depth && std::abs(depth->depth - q.z()) <= cfg_.temporal_gate_mm && depth->gradient.norm() <= cfg_.temporal_max_gradient) lin.temporal_active[m] = 1;
    }
    return lin;
  }

  /// Temporal coherence term alone. Samples are active when their warped
  /// position lands on smooth surface within the gate at linearization;
  /// active samples
  /// that lose their depth during a step are dropped.
  ObjectiveTerms temporal_terms(const Vec7& d, const std::vector<uint8_t>& active, bool derivs) const {
    ObjectiveTerms out;
    if (samples_.empty()) return out;
    const Pose dp = Pose::from_vector(d);
    const Mat3 rd = dp.rotation();
    const double sd = dp.scale();
    std::array<Mat3, 3> drd{};
    if (derivs) drd = rotation_derivatives(dp.omega);
    const double w = 1.0 / cfg_.sigma_t_sq;
    for (size_t m = 0; m < samples_.size(); ++m) {
      if (!active[m]) continue;
      const Vec3 rel = samples_[m] - base_.t;
      const Vec3 rrel = rd * rel;
      const Vec3 q = sd * rrel + base_.t + dp.t;
      if (!(q.z() > 0)) continue;
      const auto s = sample_bilinear_with_gradient(*frame_, project(q, k_));
      if (!s) continue;
      const double r = s->depth - q.z();
      out.value += 0.5 * w * r * r;
      if (!derivs) continue;
      const double iz = 1.0 / q.z();
      Eigen::Matrix<double, 2, 3> jp;
      jp << k_.f * iz, 0, -k_.f * q.x() * iz * iz, 0, k_.f * iz, -k_.f * q.y() * iz * iz;
      const Eigen::RowVector3d drdq = s->gradient.transpose() * jp - Eigen::RowVector3d(0, 0, 1);
      Vec7 j;
      for (int i = 0; i < 3; ++i) j(i) = drdq.dot(sd * (drd[static_cast<size_t>(i)] * rel));
      j.segment<3>(3) = drdq.transpose();
      j(6) = drdq.dot(sd * rrel);
      out.gradient += w * r * j;
      out.hessian.noalias() += w * j * j.transpose();
    }
    return out;
  }

  ObjectiveTerms terms(const Vec7& d, const Linearization& lin, bool derivs = true) const {
    ObjectiveTerms out =
        rvs_terms(PoseJet::incremental(base_, Pose::from_vector(d)), *dist_, lin.rays, lin.labels, cfg_.rvs, derivs);
    const ObjectiveTerms t = temporal_terms(d, lin.temporal_active, derivs);
    out.value += t.value;
    out.value += scale_cost(d(6), lambda_s_);
    if (derivs) {
      out.gradient += t.gradient;
      out.hessian += t.hessian;
      out.gradient(6) += lambda_s_ * d(6);
      out.hessian(6, 6) += lambda_s_;
    }
    return out;
  }

  /// Objective with correspondences and labels recomputed at d.
  double value(const Vec7& d, Linearization* lin_out = nullptr) const {
    Linearization lin = linearize(d);
    const double v = terms(d, lin, false).value;
    if (lin_out != nullptr) *lin_out = std::move(lin);
    return v;
  }

  /// Fitness for global search: the objective plus the occluded-ray cost
  /// for every vertex clearly facing the camera that has no data, so that
  /// moving the face off the measured surface is not free. Grazing
  /// silhouette vertices are left out.
  double recovery_value(const Vec7& d) const {
    Linearization lin;
    double v = value(d, &lin);
    const double per_ray = kl_occluded(cfg_.rvs.sigma_o_sq, cfg_.rvs.u_o);
    for (const auto& r : lin.rays)
      if (r.facing_cos > cfg_.recovery_min_facing_cos && !r.matched()) v += per_ray;
    return v;
  }

private:
  Pose base_;
  const DepthFrame* frame_;
  const FaceDistribution* dist_;
  CameraIntrinsics k_;
  TrackConfig cfg_;
  double lambda_s_;
  PointCloud cloud_;
  std::vector<Vec3> samples_;  // previous-frame visible face points
};

/// Temporal coherence cost of increment `delta` against the previous frame
/// held in `state` (zero when the state has no previous frame or pixels).
inline double temporal_cost(const Pose& delta, const TrackerState& state, const DepthFrame& frame,
                            const FaceDistribution& dist, const CameraIntrinsics& k, const TrackConfig& cfg) {
  const FrameObjective obj(state.pose, frame, dist, k, cfg, &state, 0.0);
  const Vec7 d = delta.to_vector();
  return obj.temporal_terms(d, obj.linearize(d).temporal_active, false).value;
}

// ---------------------------------------------------------------------------
// Solver

struct SolveResult {
  Vec7 delta = Vec7::Zero();
  double value = 0.0;  // at delta, with correspondences and labels recomputed there
  FrameObjective::Linearization lin;
  int iterations = 0;
  bool converged = false;
  // Objective before and after each accepted step, both under the
  // linearization that step was taken with.
  std::vector<std::pair<double, double>> steps;
};

/// Alternates visibility classification with damped Gauss-Newton steps
/// (Levenberg-Marquardt trust region). Each outer iteration freezes
/// correspondences and labels, and takes one step accepted by the ratio of
/// actual to predicted decrease of the frozen objective. Stops on a tiny
/// step, a negligible decrease (re-correspondence can otherwise cycle
/// between two nearly equal configurations) or the iteration limit.
inline SolveResult solve(const FrameObjective& obj, const Vec7& start, const TrackConfig& cfg) {
  SolveResult res;
  res.delta = start;
  res.lin = obj.linearize(start);
  double mu = 1e-4;
  double nu = 2.0;
  const int max_rejections = 16;
  for (int it = 0; it < cfg.max_inner_iters; ++it) {
    ++res.iterations;
    const ObjectiveTerms t = obj.terms(res.delta, res.lin, true);
    Mat7 h = t.hessian;
    Vec7 g = t.gradient;
    if (cfg.fix_alpha) {
      h.row(6).setZero();
      h.col(6).setZero();
      h(6, 6) = 1.0;
      g(6) = 0.0;
    }
    const Vec7 diag = h.diagonal().cwiseMax(1e-9 * std::max(1.0, h.diagonal().maxCoeff()));
    bool accepted = false;
    bool tiny = false;
    for (int rej = 0; rej < max_rejections && !accepted; ++rej) {
      Mat7 a = h;
      a.diagonal() += mu * diag;
      Vec7 step = a.ldlt().solve(-g);
      if (cfg.fix_alpha) step(6) = 0.0;
      if (!step.allFinite()) {
        mu *= nu;
        nu *= 2;
        continue;
      }
      if (step.norm() < cfg.step_tol) {
        tiny = true;
        break;
      }
      const double predicted = -(g.dot(step) + 0.5 * step.dot(h * step));
      const Vec7 trial = res.delta + step;
      const double after = obj.terms(trial, res.lin, false).value;
      const double rho = predicted > 0 ? (t.value - after) / predicted : -1.0;
      if (rho > 1e-4 && after <= t.value) {
        res.steps.emplace_back(t.value, after);
        res.delta = trial;
        mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
        nu = 2.0;
        accepted = true;
        tiny = step.norm() < cfg.step_tol || t.value - after <= cfg.value_tol * std::abs(t.value);
      } else {
        mu *= nu;
        nu *= 2;
      }
    }
    if (accepted) res.lin = obj.linearize(res.delta);
    if (!accepted || tiny) {
      res.converged = true;
      break;
    }
  }
  res.value = obj.terms(res.delta, res.lin, false).value;
  return res;
}

// ---------------------------------------------------------------------------
// Particle swarm

/// Global-best particle swarm over rotation and translation within the box
/// seed +- range, with alpha held fixed. Particle 0 starts at the seed, so
/// the result is never worse than the seed.
inline Pose pso_refine(const std::function<double(const Pose&)>& objective, const Pose& seed, const PsoConfig& cfg,
                       std::mt19937_64& rng) {
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  Vec6 range;
  range << Vec3::Constant(cfg.rotation_range), Vec3::Constant(cfg.translation_range);
  Vec6 center;
  center << seed.omega, seed.t;
  auto to_pose = [&](const Vec6& x) { return Pose{x.head<3>(), x.tail<3>(), seed.alpha}; };

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = std::max(1, cfg.particles);
  std::vector<Vec6> x(static_cast<size_t>(n)), v(static_cast<size_t>(n)), best_x(static_cast<size_t>(n));
  std::vector<double> best_f(static_cast<size_t>(n));
  Vec6 g = center;
  double gf = objective(seed);
  for (int p = 0; p < n; ++p) {
    auto& xp = x[static_cast<size_t>(p)];
    auto& vp = v[static_cast<size_t>(p)];
    for (int i = 0; i < 6; ++i) {
      xp(i) = p == 0 ? center(i) : center(i) + range(i) * (2.0 * unit(rng) - 1.0);
      vp(i) = range(i) * (unit(rng) - 0.5) * 0.2;
    }
    best_x[static_cast<size_t>(p)] = xp;
    best_f[static_cast<size_t>(p)] = p == 0 ? gf : objective(to_pose(xp));
    if (best_f[static_cast<size_t>(p)] < gf) {
      gf = best_f[static_cast<size_t>(p)];
      g = xp;
    }
  }
  for (int it = 0; it < cfg.iterations; ++it) {
    for (int p = 0; p < n; ++p) {
      auto& xp = x[static_cast<size_t>(p)];
      auto& vp = v[static_cast<size_t>(p)];
      for (int i = 0; i < 6; ++i) {
        vp(i) = cfg.inertia * vp(i) + cfg.cognitive * unit(rng) * (best_x[static_cast<size_t>(p)](i) - xp(i)) +
                cfg.social * unit(rng) * (g(i) - xp(i));
        vp(i) = std::clamp(vp(i), -range(i), range(i));
        xp(i) += vp(i);
      }
      const double f = objective(to_pose(xp));
      if (f < best_f[static_cast<size_t>(p)]) {
        best_f[static_cast<size_t>(p)] = f;
        best_x[static_cast<size_t>(p)] = xp;
        if (f < gf) {
          gf = f;
          g = xp;
        }
      }
    }
  }
  return to_pose(g);
}

/// Global recovery: particle swarm on the recovery fitness around `seed`,
/// then a local solve from the swarm's best pose.
inline SolveResult recover_pose(const FrameObjective& obj, const Vec7& seed, const TrackConfig& cfg,
                                std::mt19937_64& rng) {
  const Pose found = pso_refine([&](const Pose& p) { return obj.recovery_value(p.to_vector()); },
                                Pose::from_vector(seed), cfg.pso, rng);
  return solve(obj, found.to_vector(), cfg);
}

// ---------------------------------------------------------------------------
// Frame tracking

inline bool detect_failure(const Pose& delta, const VisibilityLabels& labels, const TrackConfig& cfg) {
  return delta.omega.norm() > cfg.max_rotation_change || delta.t.norm() > cfg.max_translation_change ||
         labels.occluded_fraction() > cfg.max_occluded_fraction;
}

struct FrameResult {
  Pose pose;
  Pose delta;  // increment relative to the previous pose
  VisibilityLabels labels;
  std::vector<RayCorrespondence> rays;
  TrackerState state;  // rolled forward to this frame
  double objective = 0.0;
  bool failed = false;     // failure persisted after recovery
  bool pso_used = false;
  int iterations = 0;
  std::vector<std::pair<double, double>> steps;
};

namespace detail {

inline FrameResult solve_frame(const Pose& base, const DepthFrame& frame, const FaceDistribution& dist,
                               const CameraIntrinsics& k, const TrackConfig& cfg, const TrackerState* temporal,
                               double lambda_s, int frame_index) {
  cfg.validate();
  const FrameObjective obj(base, frame, dist, k, cfg, temporal, lambda_s);
  SolveResult best = solve(obj, Vec7::Zero(), cfg);
  bool failed = detect_failure(Pose::from_vector(best.delta), best.lin.labels, cfg);
  bool pso_used = false;
  if (failed && cfg.use_pso) {
    pso_used = true;
    Vec7 seed = best.delta;
    const double best_fitness = obj.recovery_value(best.delta);
    if (obj.recovery_value(Vec7::Zero()) < best_fitness) seed = Vec7::Zero();
    std::mt19937_64 rng(cfg.pso.seed + static_cast<uint64_t>(frame_index));
    SolveResult polished = recover_pose(obj, seed, cfg, rng);
    if (obj.recovery_value(polished.delta) <= best_fitness) best = std::move(polished);
    failed = detect_failure(Pose::from_vector(best.delta), best.lin.labels, cfg);
  }

  FrameResult out;
  out.delta = Pose::from_vector(best.delta);
  out.pose = obj.pose_at(best.delta);
  out.labels = best.lin.labels;
  out.rays = best.lin.rays;
  out.objective = best.value;
  out.failed = failed;
  out.pso_used = pso_used;
  out.iterations = best.iterations;
  out.steps = best.steps;
  return out;
}

inline std::vector<PixelIndex> visible_pixels(const std::vector<RayCorrespondence>& rays,
                                              const VisibilityLabels& labels) {
  std::vector<PixelIndex> px;
  for (size_t i = 0; i < rays.size(); ++i)
    if (rays[i].matched() && labels.gamma[i] == Visibility::visible) px.push_back(rays[i].pixel);
  std::sort(px.begin(), px.end(), [](const PixelIndex& a, const PixelIndex& b) {
    return a.v != b.v ? a.v < b.v : a.u < b.u;
  });
  px.erase(std::unique(px.begin(), px.end()), px.end());
  return px;
}

}  // namespace detail

/// One step of the tracker: minimizes the per-frame objective from the
/// previous pose, falls back to the particle swarm on detected failure, and
/// rolls the state forward (visible pixels, scale precision, frame).
inline FrameResult track_frame(const TrackerState& state, const DepthFrame& frame, const FaceDistribution& dist,
                               const CameraIntrinsics& k, const TrackConfig& cfg) {
  const TrackerState* temporal = cfg.use_temporal ? &state : nullptr;
  const double lambda = cfg.use_scale ? state.lambda_s : 0.0;
  FrameResult out = detail::solve_frame(state.pose, frame, dist, k, cfg, temporal, lambda, state.frame_index);
  out.state.pose = out.pose;
  out.state.visible_pixels = detail::visible_pixels(out.rays, out.labels);
  out.state.lambda_s = state.lambda_s + 1.0 / cfg.sigma_s_sq;
  out.state.prev_frame = frame;
  out.state.frame_index = state.frame_index + 1;
  return out;
}

/// Single-frame ray visibility score minimization from `seed` (no temporal
/// or scale terms).
inline FrameResult minimize_rvs(const DepthFrame& frame, const FaceDistribution& dist, const CameraIntrinsics& k,
                                const Pose& seed, const TrackConfig& cfg, int frame_index = 0) {
  return detail::solve_frame(seed, frame, dist, k, cfg, nullptr, 0.0, frame_index);
}

}  // namespace facetrack
