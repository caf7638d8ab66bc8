#pragma once

// Ray correspondence between the posed face distribution and the depth
// surface, per-ray visibility labels and the ray visibility score: a sum of
// per-ray KL divergences between the projected face distribution and the
// visibility-conditioned surface distribution.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "facetrack/face_model.hpp"
#include "facetrack/geometry.hpp"

namespace facetrack {

struct RvsParams {
  double sigma_o_sq = 25.0;          // mm^2
  double u_o = 1.0 / 2500.0;         // 1/mm
  double occlusion_range = 2500.0;   // mm, support of the uniform occluder density

  void validate() const {
    if (!(sigma_o_sq > 0) || !(u_o > 0)) throw DomainError("surface variance and occluder density must be positive");
  }
};

enum class RayStatus : uint8_t { matched, no_data };

struct RayCorrespondence {
  int vertex = 0;
  Vec3 p = Vec3::Zero();       // surface point hit by the vertex's camera ray
  Vec3 normal = Vec3::Zero();  // unit, pointing away from the camera
  PixelIndex pixel;
  RayStatus status = RayStatus::no_data;
  bool facing = false;  // posed mean-shape normal points towards the camera
  double facing_cos = 0.0;  // cosine between that normal and the direction to the camera

  bool matched() const { return status == RayStatus::matched; }
};

enum class Visibility : uint8_t { occluded = 0, visible = 1, excluded = 2 };

struct VisibilityLabels {
  std::vector<Visibility> gamma;  // per vertex
  std::vector<uint8_t> facing;    // per vertex, copied from the rays; may be empty

  size_t count(Visibility v) const {
    size_t c = 0;
    for (auto g : gamma) c += g == v;
    return c;
  }
  size_t visible() const { return count(Visibility::visible); }
  size_t occluded() const { return count(Visibility::occluded); }

  /// Occluded share of the labelled rays on the camera-facing side of the
  /// face (all labelled rays when no facing mask is present).
  double occluded_fraction() const {
    size_t occ = 0, total = 0;
    for (size_t i = 0; i < gamma.size(); ++i) {
      if (gamma[i] == Visibility::excluded) continue;
      if (!facing.empty() && !facing[i]) continue;
      ++total;
      occ += gamma[i] == Visibility::occluded;
    }
    return total == 0 ? 0.0 : static_cast<double>(occ) / static_cast<double>(total);
  }
};

/// Signed distance of q from the tangent plane at the ray's surface point;
/// negative when q lies in front of the surface.
inline double signed_distance(const Vec3& q, const RayCorrespondence& ray) {
  if (!ray.matched()) throw NoDataError("signed distance of an unmatched ray");
  return ray.normal.dot(q - ray.p);
}

struct CorrespondOptions {
  bool cull_back_facing = true;  // vertices facing away from the camera give no-data rays
  bool subpixel = true;          // interpolate the surface point between pixel centres
  double max_depth_jump = 30.0;  // mm; no interpolation across larger steps
};

/// Rays from every vertex of the posed mean shape to the surface in `cloud`.
/// The vertex is projected and matched to the cloud at that location: the
/// surface point is interpolated from the four surrounding pixels when they
/// lie on one smooth patch, else taken from the nearest pixel; the normal is
/// the nearest pixel's. Pixels without a point or a normal give no-data rays.
inline std::vector<RayCorrespondence> correspond(const FaceDistribution& dist, const Pose& pose, const PointCloud& cloud,
                                                 const CameraIntrinsics& k, const CorrespondOptions& opts = {}) {
  const int n = dist.vertex_count();
  std::vector<RayCorrespondence> rays(static_cast<size_t>(n));
  const Mat3 r = pose.rotation();
  const double a = pose.scale();
  for (int i = 0; i < n; ++i) {
    auto& ray = rays[static_cast<size_t>(i)];
    ray.vertex = i;
    const Vec3 q = a * (r * dist.mean(i)) + pose.t;
    if (!(q.z() > 0)) continue;
    if (!dist.normals.empty()) {
      ray.facing_cos = -(r * dist.normals[static_cast<size_t>(i)]).dot(q) / q.norm();
      ray.facing = ray.facing_cos > 0;
    }
    if (opts.cull_back_facing && !ray.facing) continue;
    const Vec2 x = project(q, k);
    if (!(std::abs(x.x()) < 1e7 && std::abs(x.y()) < 1e7)) continue;
    const int u = static_cast<int>(std::lround(x.x()));
    const int v = static_cast<int>(std::lround(x.y()));
    const int idx = cloud.lookup(u, v);
    if (idx < 0 || !cloud.has_normal[static_cast<size_t>(idx)]) continue;
    ray.pixel = PixelIndex{u, v};
    ray.p = cloud.points[static_cast<size_t>(idx)];
    ray.normal = cloud.normals[static_cast<size_t>(idx)];
    ray.status = RayStatus::matched;
    if (!opts.subpixel) continue;
    const int u0 = static_cast<int>(std::floor(x.x()));
    const int v0 = static_cast<int>(std::floor(x.y()));
    std::array<int, 4> nb = {cloud.lookup(u0, v0), cloud.lookup(u0 + 1, v0), cloud.lookup(u0, v0 + 1),
                             cloud.lookup(u0 + 1, v0 + 1)};
    if (std::any_of(nb.begin(), nb.end(), [](int j) { return j < 0; })) continue;
    std::array<double, 4> z{};
    for (size_t j = 0; j < 4; ++j) z[j] = cloud.points[static_cast<size_t>(nb[j])].z();
    const auto [lo, hi] = std::minmax_element(z.begin(), z.end());
    if (*hi - *lo > opts.max_depth_jump) continue;
    const double fa = x.x() - u0, fb = x.y() - v0;
    const double d = (1 - fa) * (1 - fb) * z[0] + fa * (1 - fb) * z[1] + (1 - fa) * fb * z[2] + fa * fb * z[3];
    ray.p = backproject(x, d, k);
  }
  return rays;
}

/// Pixel bounding box of the projected vertices, grown by `margin` and
/// clipped to the frame. Empty when nothing projects in front of the camera.
inline Roi projected_bounds(const FaceDistribution& dist, const Pose& pose, const CameraIntrinsics& k, int width,
                            int height, int margin = 3) {
  double umin = 1e300, umax = -1e300, vmin = 1e300, vmax = -1e300;
  const Mat3 r = pose.rotation();
  const double a = pose.scale();
  for (int i = 0; i < dist.vertex_count(); ++i) {
    const Vec3 q = a * (r * dist.mean(i)) + pose.t;
    if (!(q.z() > 0)) continue;
    const Vec2 x = project(q, k);
    umin = std::min(umin, x.x());
    umax = std::max(umax, x.x());
    vmin = std::min(vmin, x.y());
    vmax = std::max(vmax, x.y());
  }
  if (umin > umax) return Roi{};
  umin = std::clamp(umin, -1e6, 1e6);
  vmin = std::clamp(vmin, -1e6, 1e6);
  umax = std::clamp(umax, -1e6, 1e6);
  vmax = std::clamp(vmax, -1e6, 1e6);
  const int u0 = static_cast<int>(std::floor(umin)) - margin;
  const int v0 = static_cast<int>(std::floor(vmin)) - margin;
  const int u1 = static_cast<int>(std::ceil(umax)) + margin;
  const int v1 = static_cast<int>(std::ceil(vmax)) + margin;
  return Roi{u0, v0, u1 - u0 + 1, v1 - v0 + 1}.clipped(width, height);
}

/// Correspondence against a raw frame: normals are estimated over the
/// projected face region only. All rays are no-data when that region holds
/// no valid depth.
inline std::vector<RayCorrespondence> correspond(const FaceDistribution& dist, const Pose& pose, const DepthFrame& frame,
                                                 const CameraIntrinsics& k, const NormalOptions& opts = {},
                                                 const CorrespondOptions& copts = {}) {
  const Roi roi = projected_bounds(dist, pose, k, frame.width(), frame.height());
  if (roi.area() > 0) {
    try {
      return correspond(dist, pose, cloud_from_frame(frame, roi, k, opts), k, copts);
    } catch (const EmptyCloudError&) {
    }
  }
  std::vector<RayCorrespondence> rays(static_cast<size_t>(dist.vertex_count()));
  for (int i = 0; i < dist.vertex_count(); ++i) rays[static_cast<size_t>(i)].vertex = i;
  return rays;
}

/// Mean and variance of a ray's signed distance under the posed face
/// distribution.
struct ProjectedGaussian {
  double mean = 0.0;
  double var = 0.0;
};

inline ProjectedGaussian projected_distribution(const RayCorrespondence& ray, const Pose& pose,
                                                const FaceDistribution& dist, const RvsParams& params) {
  if (!ray.matched()) throw NoDataError("projected distribution of an unmatched ray");
  const Mat3 r = pose.rotation();
  const double a = pose.scale();
  const Vec3 q = a * (r * dist.mean(ray.vertex)) + pose.t;
  const Vec3 v = r.transpose() * ray.normal;
  return ProjectedGaussian{signed_distance(q, ray),
                           params.sigma_o_sq + a * a * v.dot(dist.sigma_blocks[static_cast<size_t>(ray.vertex)] * v)};
}

/// Visible when the signed distance is at most one standard deviation behind
/// the surface; occluded beyond; excluded without data.
inline Visibility classify_ray(const ProjectedGaussian& g) {
  return g.mean <= std::sqrt(g.var) ? Visibility::visible : Visibility::occluded;
}

inline VisibilityLabels classify_visibility(const std::vector<RayCorrespondence>& rays, const Pose& pose,
                                            const FaceDistribution& dist, const RvsParams& params) {
  VisibilityLabels labels;
  labels.gamma.assign(rays.size(), Visibility::excluded);
  labels.facing.resize(rays.size());
  for (size_t i = 0; i < rays.size(); ++i) {
    labels.facing[i] = rays[i].facing;
    if (rays[i].matched()) labels.gamma[i] = classify_ray(projected_distribution(rays[i], pose, dist, params));
  }
  return labels;
}

/// KL[N(m, s2) || N(0, sigma_o_sq)].
inline double kl_visible(double m, double s2, double sigma_o_sq) {
  return 0.5 * std::log(sigma_o_sq / s2) + (s2 + m * m) / (2.0 * sigma_o_sq) - 0.5;
}

/// KL[N(m, s2) || U] for a uniform density u_o, treated as unbounded.
inline double kl_occluded(double s2, double u_o) {
  return -std::log(u_o) - 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * s2);
}

/// Rotation, its partial derivatives with respect to three optimization
/// coordinates, translation and log-scale: everything the objective needs
/// from a pose parameterization.
struct PoseJet {
  Mat3 r;
  std::array<Mat3, 3> dr;
  Vec3 t;
  double alpha;

  /// Coordinates are the absolute rotation vector, translation and alpha.
  static PoseJet absolute(const Pose& p) {
    return PoseJet{p.rotation(), rotation_derivatives(p.omega), p.t, p.alpha};
  }

  /// Coordinates are an increment applied to `base`: R = R(d.omega) R_base,
  /// t = t_base + d.t, alpha = alpha_base + d.alpha.
  static PoseJet incremental(const Pose& base, const Pose& d) {
    const Mat3 r0 = base.rotation();
    auto dr = rotation_derivatives(d.omega);
    for (auto& m : dr) m = m * r0;
    return PoseJet{d.rotation() * r0, dr, base.t + d.t, base.alpha + d.alpha};
  }

  Pose pose() const { return Pose{rotation_vector(r), t, alpha}; }
};

/// Pose reached by applying increment `d` to `base` (see PoseJet::incremental).
inline Pose apply_increment(const Pose& base, const Pose& d) {
  return Pose{rotation_vector(d.rotation() * base.rotation()), base.t + d.t, base.alpha + d.alpha};
}

struct ObjectiveTerms {
  double value = 0.0;
  Vec7 gradient = Vec7::Zero();
  Mat7 hessian = Mat7::Zero();  // Gauss-Newton approximation
};

/// Score, gradient and Gauss-Newton curvature of the ray visibility score
/// with labels held fixed. Rays labelled excluded (or unmatched) add nothing.
inline ObjectiveTerms rvs_terms(const PoseJet& jet, const FaceDistribution& dist,
                                const std::vector<RayCorrespondence>& rays, const VisibilityLabels& labels,
                                const RvsParams& params, bool with_derivatives = true) {
  ObjectiveTerms out;
  const double a = std::exp(jet.alpha);
  const double a2 = a * a;
  const double so2 = params.sigma_o_sq;
  for (size_t i = 0; i < rays.size(); ++i) {
    const auto& ray = rays[i];
    const Visibility g = labels.gamma[i];
    if (!ray.matched() || g == Visibility::excluded) continue;
    const Vec3& mu = dist.mean(ray.vertex);
    const Mat3& sigma = dist.sigma_blocks[static_cast<size_t>(ray.vertex)];
    const Vec3 rmu = jet.r * mu;
    const Vec3& n = ray.normal;
    const double m = n.dot(a * rmu + jet.t - ray.p);
    const Vec3 v = jet.r.transpose() * n;
    const Vec3 sv = sigma * v;
    const double quad = v.dot(sv);
    const double s2 = so2 + a2 * quad;
    if (g == Visibility::visible)
      out.value += kl_visible(m, s2, so2);
    else
      out.value += kl_occluded(s2, params.u_o);
    if (!with_derivatives) continue;

    Vec7 ds2 = Vec7::Zero();
    for (int k = 0; k < 3; ++k) ds2(k) = 2.0 * a2 * n.dot(jet.dr[static_cast<size_t>(k)] * sv);
    ds2(6) = 2.0 * a2 * quad;
    const double w_s2 = 1.0 / (2.0 * s2 * s2);
    if (g == Visibility::visible) {
      Vec7 dm = Vec7::Zero();
      for (int k = 0; k < 3; ++k) dm(k) = a * n.dot(jet.dr[static_cast<size_t>(k)] * mu);
      dm.segment<3>(3) = n;
      dm(6) = a * n.dot(rmu);
      out.gradient += (1.0 / (2.0 * so2) - 1.0 / (2.0 * s2)) * ds2 + (m / so2) * dm;
      out.hessian.noalias() += dm * dm.transpose() / so2 + w_s2 * ds2 * ds2.transpose();
    } else {
      out.gradient += (-0.5 / s2) * ds2;
      out.hessian.noalias() += w_s2 * ds2 * ds2.transpose();
    }
  }
  return out;
}

/// Ray visibility score at `pose`, classifying visibility at that pose.
inline double rvs_score(const Pose& pose, const FaceDistribution& dist, const std::vector<RayCorrespondence>& rays,
                        const RvsParams& params) {
  return rvs_terms(PoseJet::absolute(pose), dist, rays, classify_visibility(rays, pose, dist, params), params, false)
      .value;
}

/// Score with externally fixed labels.
inline double rvs_score(const Pose& pose, const FaceDistribution& dist, const std::vector<RayCorrespondence>& rays,
                        const VisibilityLabels& labels, const RvsParams& params) {
  return rvs_terms(PoseJet::absolute(pose), dist, rays, labels, params, false).value;
}

/// Gradient with respect to (omega, t, alpha) with labels frozen at their
/// classification at `pose`.
inline Vec7 rvs_gradient(const Pose& pose, const FaceDistribution& dist, const std::vector<RayCorrespondence>& rays,
                         const RvsParams& params) {
  return rvs_terms(PoseJet::absolute(pose), dist, rays, classify_visibility(rays, pose, dist, params), params)
      .gradient;
}

inline Vec7 rvs_gradient(const Pose& pose, const FaceDistribution& dist, const std::vector<RayCorrespondence>& rays,
                         const VisibilityLabels& labels, const RvsParams& params) {
  return rvs_terms(PoseJet::absolute(pose), dist, rays, labels, params).gradient;
}

}  // namespace facetrack
