#pragma once

// Synthetic ground truth: a procedural head corpus, a z-buffer depth
// renderer, and the noise/occlusion models applied to rendered frames.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "facetrack/face_model.hpp"
#include "facetrack/geometry.hpp"

namespace facetrack {

// ---------------------------------------------------------------------------
// Rendering

/// Z-buffer rasterization of a triangle mesh posed by `pose`. Back-facing
/// triangles are culled; pixels not covered by any triangle stay missing.
/// Pixel (u, v) samples the ray through its centre at integer coordinates.
inline DepthFrame render_depth(const VecX& mesh, const std::vector<Triangle>& triangles, const Pose& pose,
                               const CameraIntrinsics& k, int width, int height) {
  DepthFrame frame(width, height);
  const int n = static_cast<int>(mesh.size() / 3);
  const Mat3 r = pose.rotation();
  const double s = pose.scale();
  std::vector<Vec3> cam(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) cam[static_cast<size_t>(i)] = s * (r * vertex_of(mesh, i)) + pose.t;

  for (const auto& tri : triangles) {
    const Vec3& a = cam[static_cast<size_t>(tri[0])];
    const Vec3& b = cam[static_cast<size_t>(tri[1])];
    const Vec3& c = cam[static_cast<size_t>(tri[2])];
    if (a.z() <= 1.0 || b.z() <= 1.0 || c.z() <= 1.0) continue;
    const Vec3 normal = (b - a).cross(c - a);
    if (normal.dot(a + b + c) >= 0.0) continue;  // back-facing

    const Vec2 pa = project(a, k), pb = project(b, k), pc = project(c, k);
    const double area = (pb.x() - pa.x()) * (pc.y() - pa.y()) - (pc.x() - pa.x()) * (pb.y() - pa.y());
    if (std::abs(area) < 1e-12) continue;
    const int umin = std::max(0, static_cast<int>(std::ceil(std::min({pa.x(), pb.x(), pc.x()}))));
    const int umax = std::min(width - 1, static_cast<int>(std::floor(std::max({pa.x(), pb.x(), pc.x()}))));
    const int vmin = std::max(0, static_cast<int>(std::ceil(std::min({pa.y(), pb.y(), pc.y()}))));
    const int vmax = std::min(height - 1, static_cast<int>(std::floor(std::max({pa.y(), pb.y(), pc.y()}))));
    const double eps = -1e-9;
    for (int v = vmin; v <= vmax; ++v) {
      for (int u = umin; u <= umax; ++u) {
        const double w0 = ((pb.x() - u) * (pc.y() - v) - (pc.x() - u) * (pb.y() - v)) / area;
        const double w1 = ((pc.x() - u) * (pa.y() - v) - (pa.x() - u) * (pc.y() - v)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 < eps || w1 < eps || w2 < eps) continue;
        // Perspective-correct depth: 1/z is affine in screen space.
        const double z = 1.0 / (w0 / a.z() + w1 / b.z() + w2 / c.z());
        double& d = frame.at(u, v);
        if (d == DepthFrame::kMissing || z < d) d = z;
      }
    }
  }
  return frame;
}

/// Adds zero-mean Gaussian noise (sigma, mm) then rounds to multiples of
/// `quant` (mm); zero disables either step. Missing samples stay missing.
template <typename Rng>
DepthFrame add_noise(const DepthFrame& frame, double sigma, double quant, Rng& rng) {
  if (sigma < 0 || quant < 0) throw DomainError("noise parameters must be non-negative");
  DepthFrame out = frame;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& d : out.data()) {
    if (d == DepthFrame::kMissing) continue;
    double z = d;
    if (sigma > 0) z += sigma * gauss(rng);
    if (quant > 0) z = std::round(z / quant) * quant;
    if (z <= 0) z = quant > 0 ? quant : 1e-3;
    d = z;
  }
  return out;
}

/// Bounding box of the valid pixels (empty Roi when there are none).
inline Roi valid_bounding_box(const DepthFrame& frame) {
  int umin = frame.width(), vmin = frame.height(), umax = -1, vmax = -1;
  for (int v = 0; v < frame.height(); ++v)
    for (int u = 0; u < frame.width(); ++u)
      if (frame.valid(u, v)) {
        umin = std::min(umin, u);
        umax = std::max(umax, u);
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
      }
  if (umax < 0) return Roi{};
  return Roi{umin, vmin, umax - umin + 1, vmax - vmin + 1};
}

struct OcclusionResult {
  DepthFrame frame;
  Roi rect;  // altered pixels
};

/// Places a rectangular occluder covering `coverage` of `roi`, jittered
/// around the ROI centre. Each covered pixel is set `offset_mm` in front of
/// the local face depth (missing pixels use the nearest face depth in the
/// rectangle).
template <typename Rng>
OcclusionResult inject_occlusion(const DepthFrame& frame, const Roi& roi, double coverage, Rng& rng,
                                 double offset_mm = 100.0) {
  if (coverage < 0 || coverage > 1) throw DomainError("occlusion coverage must lie in [0, 1]");
  OcclusionResult res{frame, Roi{}};
  if (coverage == 0 || roi.area() == 0) return res;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double target = coverage * static_cast<double>(roi.area());
  const double aspect = 0.6 + unit(rng);  // width / height
  double w = std::sqrt(target * aspect);
  w = std::clamp(w, 1.0, static_cast<double>(roi.width));
  double h = std::clamp(target / w, 1.0, static_cast<double>(roi.height));
  w = std::clamp(target / h, 1.0, static_cast<double>(roi.width));
  const int wi = std::max(1, static_cast<int>(std::lround(w)));
  const int hi = std::max(1, static_cast<int>(std::lround(h)));
  const double cx = roi.u0 + 0.5 * roi.width + (unit(rng) - 0.5) * 0.5 * (roi.width - wi);
  const double cy = roi.v0 + 0.5 * roi.height + (unit(rng) - 0.5) * 0.5 * (roi.height - hi);
  int u0 = static_cast<int>(std::lround(cx - 0.5 * wi));
  int v0 = static_cast<int>(std::lround(cy - 0.5 * hi));
  u0 = std::clamp(u0, roi.u0, roi.u0 + roi.width - wi);
  v0 = std::clamp(v0, roi.v0, roi.v0 + roi.height - hi);
  res.rect = Roi{u0, v0, wi, hi};

  double nearest = std::numeric_limits<double>::infinity();
  for (int v = v0; v < v0 + hi; ++v)
    for (int u = u0; u < u0 + wi; ++u)
      if (frame.valid(u, v)) nearest = std::min(nearest, frame.at(u, v));
  if (!std::isfinite(nearest)) {
    for (int v = roi.v0; v < roi.v0 + roi.height; ++v)
      for (int u = roi.u0; u < roi.u0 + roi.width; ++u)
        if (frame.valid(u, v)) nearest = std::min(nearest, frame.at(u, v));
  }
  if (!std::isfinite(nearest)) return res;
  const double fill = std::max(1.0, nearest - offset_mm);
  for (int v = v0; v < v0 + hi; ++v)
    for (int u = u0; u < u0 + wi; ++u)
      res.frame.at(u, v) = frame.valid(u, v) ? std::max(1.0, frame.at(u, v) - offset_mm) : fill;
  return res;
}

// ---------------------------------------------------------------------------
// Procedural head corpus

struct CorpusOptions {
  uint64_t seed = 1;
  int n_id = 32;
  int n_exp = 10;
  int n_vertices = 2000;
};

namespace detail {

/// Smooth window: 1 inside [lo, hi], cosine taper of width `taper` outside,
/// exactly 0 beyond.
inline double window(double x, double lo, double hi, double taper) {
  if (x >= lo && x <= hi) return 1.0;
  const double d = x < lo ? lo - x : x - hi;
  if (d >= taper) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * d / taper));
}

inline double bump(double phi, double lam, double phi0, double lam0, double sphi, double slam) {
  const double a = (phi - phi0) / sphi, b = (lam - lam0) / slam;
  return std::exp(-0.5 * (a * a + b * b));
}

struct SphereGrid {
  int rings = 0;
  int segments = 0;
  std::vector<double> phi;     // polar angle from the top of the head
  std::vector<double> lambda;  // azimuth, 0 at the face front, in (-pi, pi]
  std::vector<Triangle> triangles;
};

/// Latitude/longitude grid with rings * segments + 2 vertices; azimuth is
/// warped to be denser on the face than on the back of the head.
inline SphereGrid make_sphere_grid(int n_vertices) {
  int best_r = 4, best_s = 4, best_err = 1 << 30;
  for (int r = 4; r <= 400; ++r) {
    const int s = static_cast<int>(std::lround((n_vertices - 2) / static_cast<double>(r)));
    if (s < 6) break;
    const int err = std::abs(r * s + 2 - n_vertices) * 100 + std::abs(s - static_cast<int>(1.4 * r));
    if (err < best_err) {
      best_err = err;
      best_r = r;
      best_s = s;
    }
  }
  SphereGrid g;
  g.rings = best_r;
  g.segments = best_s;
  const double pi = std::numbers::pi;
  g.phi.push_back(0.0);
  g.lambda.push_back(0.0);
  for (int r = 1; r <= g.rings; ++r) {
    for (int s = 0; s < g.segments; ++s) {
      const double x = -1.0 + 2.0 * (s + 0.5) / g.segments;
      g.phi.push_back(pi * r / (g.rings + 1));
      g.lambda.push_back(pi * (0.4 * x + 0.6 * x * x * x));
    }
  }
  g.phi.push_back(pi);
  g.lambda.push_back(0.0);
  const int top = 0;
  const int bottom = g.rings * g.segments + 1;
  auto id = [&](int r, int s) { return 1 + (r - 1) * g.segments + (s % g.segments); };
  for (int s = 0; s < g.segments; ++s) g.triangles.push_back({top, id(1, s), id(1, s + 1)});
  for (int r = 1; r < g.rings; ++r)
    for (int s = 0; s < g.segments; ++s) {
      g.triangles.push_back({id(r, s), id(r + 1, s), id(r + 1, s + 1)});
      g.triangles.push_back({id(r, s), id(r + 1, s + 1), id(r, s + 1)});
    }
  for (int s = 0; s < g.segments; ++s) g.triangles.push_back({bottom, id(g.rings, s + 1), id(g.rings, s)});
  return g;
}

/// Unit direction for (phi, lambda): top of head is -y, face front is -z.
inline Vec3 direction(double phi, double lam) {
  return Vec3(std::sin(phi) * std::sin(lam), -std::cos(phi), -std::sin(phi) * std::cos(lam));
}

struct Region {
  double phi_lo, phi_hi, lam_lo, lam_hi, taper;
  double weight(double phi, double lam) const {
    return window(phi, phi_lo, phi_hi, taper) * window(lam, lam_lo, lam_hi, taper);
  }
};

inline constexpr double kHalfPi = std::numbers::pi / 2;
inline const Region kMouthRegion{kHalfPi + 0.30, kHalfPi + 0.62, -0.45, 0.45, 0.12};
inline const Region kBrowRegion{kHalfPi - 0.55, kHalfPi - 0.25, -0.6, 0.6, 0.10};

struct IdentityParams {
  Vec3 radii;
  double nose = 0, nose_width = 0, brow = 0, chin = 0, cheek = 0, jaw = 0, eyes = 0;
  std::vector<double> harmonics;  // coefficients of monomials x^a y^b z^c, a + b + c <= 3
  double expression_gain = 1.0;
};

struct ExpressionParams {
  double jaw_open = 0, smile = 0, pucker = 0, brow_raise = 0, brow_furrow = 0;
};

inline Vec3 head_vertex(double phi, double lam, const IdentityParams& id, const ExpressionParams& ex) {
  const Vec3 d = direction(phi, lam);
  const double pi = std::numbers::pi;
  // Lower-face jaw widening scales x below the equator.
  const double lower = window(phi, kHalfPi + 0.2, pi, 0.4);
  Vec3 p(id.radii.x() * d.x() * (1.0 + id.jaw * lower), id.radii.y() * d.y(), id.radii.z() * d.z());

  double radial = 0;
  const double front = window(lam, -1.2, 1.2, 0.6);
  radial += (22.0 + id.nose) * bump(phi, lam, kHalfPi + 0.08, 0.0, 0.20, 0.10 * (1.0 + id.nose_width));
  radial += (6.0 + id.brow) * window(phi, kHalfPi - 0.42, kHalfPi - 0.32, 0.1) * window(lam, -0.55, 0.55, 0.2);
  radial += (7.0 + id.chin) * bump(phi, lam, kHalfPi + 0.78, 0.0, 0.12, 0.25);
  radial += (-7.0 - id.eyes) * (bump(phi, lam, kHalfPi - 0.22, 0.33, 0.09, 0.12) + bump(phi, lam, kHalfPi - 0.22, -0.33, 0.09, 0.12));
  radial += id.cheek * (bump(phi, lam, kHalfPi + 0.25, 0.6, 0.2, 0.2) + bump(phi, lam, kHalfPi + 0.25, -0.6, 0.2, 0.2));
  radial *= front;

  size_t h = 0;
  for (int a = 0; a <= 3; ++a)
    for (int b = 0; a + b <= 3; ++b)
      for (int c = 0; a + b + c <= 3; ++c) {
        if (h < id.harmonics.size())
          radial += id.harmonics[h] * std::pow(d.x(), a) * std::pow(d.y(), b) * std::pow(d.z(), c);
        ++h;
      }
  p += radial * d;

  // Expressions: displacement fields confined to the mouth and brow regions.
  const double g = id.expression_gain;
  const double mouth = kMouthRegion.weight(phi, lam);
  if (mouth > 0) {
    const double below = std::clamp((phi - (kHalfPi + 0.30)) / 0.32, 0.0, 1.0);
    const double corner = bump(phi, lam, kHalfPi + 0.42, lam > 0 ? 0.3 : -0.3, 0.12, 0.12);
    const double centre = bump(phi, lam, kHalfPi + 0.42, 0.0, 0.12, 0.18);
    Vec3 e = Vec3::Zero();
    e.y() += ex.jaw_open * below;
    e.z() += 0.3 * ex.jaw_open * below;
    e.x() += ex.smile * corner * (lam > 0 ? 1.0 : -1.0);
    e.y() -= 0.6 * ex.smile * corner;
    e.z() -= ex.pucker * centre;
    p += g * mouth * e;
  }
  const double brow = kBrowRegion.weight(phi, lam);
  if (brow > 0) {
    Vec3 e = Vec3::Zero();
    e.y() -= ex.brow_raise;
    e.x() -= ex.brow_furrow * std::sin(lam);
    e.z() -= 0.3 * ex.brow_furrow * bump(phi, lam, kHalfPi - 0.4, 0.0, 0.2, 0.2);
    p += g * brow * e;
  }
  return p;
}

}  // namespace detail

/// Deterministic identity x expression grid of procedural heads sharing one
/// topology. Identity 0 / expression 0 are not special; expression fields
/// vanish outside the mouth and brow regions.
inline MeshGrid generate_corpus(const CorpusOptions& opts) {
  if (opts.n_id < 2 || opts.n_exp < 2) throw DomainError("corpus needs at least two identities and two expressions");
  if (opts.n_vertices < 50) throw DomainError("corpus meshes need at least 50 vertices");
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const auto grid = detail::make_sphere_grid(opts.n_vertices);
  std::vector<detail::IdentityParams> ids(static_cast<size_t>(opts.n_id));
  for (auto& id : ids) {
    id.radii = Vec3(76.0 * (1.0 + 0.06 * gauss(rng)), 108.0 * (1.0 + 0.05 * gauss(rng)), 96.0 * (1.0 + 0.05 * gauss(rng)));
    id.nose = 5.0 * gauss(rng);
    id.nose_width = 0.25 * gauss(rng);
    id.brow = 2.5 * gauss(rng);
    id.chin = 3.0 * gauss(rng);
    id.cheek = 4.0 * gauss(rng);
    id.jaw = 0.05 * gauss(rng);
    id.eyes = 2.0 * gauss(rng);
    id.harmonics.resize(20);
    for (double& h : id.harmonics) h = 2.0 * gauss(rng);
    id.expression_gain = 0.8 + 0.4 * unit(rng);
  }
  std::vector<detail::ExpressionParams> exps(static_cast<size_t>(opts.n_exp));
  for (size_t j = 1; j < exps.size(); ++j) {
    auto& e = exps[j];
    e.jaw_open = 12.0 * unit(rng);
    e.smile = 8.0 * (unit(rng) - 0.3);
    e.pucker = 6.0 * (unit(rng) - 0.3);
    e.brow_raise = 7.0 * (unit(rng) - 0.3);
    e.brow_furrow = 4.0 * (unit(rng) - 0.5);
  }

  MeshGrid out;
  out.n_id = opts.n_id;
  out.n_exp = opts.n_exp;
  out.triangles = grid.triangles;
  out.meshes.resize(static_cast<size_t>(opts.n_id) * opts.n_exp);
  const auto nv = static_cast<Eigen::Index>(grid.phi.size());
  for (int j = 0; j < opts.n_exp; ++j)
    for (int i = 0; i < opts.n_id; ++i) {
      VecX m(3 * nv);
      for (Eigen::Index v = 0; v < nv; ++v)
        m.segment<3>(3 * v) = detail::head_vertex(grid.phi[static_cast<size_t>(v)], grid.lambda[static_cast<size_t>(v)],
                                                  ids[static_cast<size_t>(i)], exps[static_cast<size_t>(j)]);
      out.at(i, j) = std::move(m);
    }
  return out;
}

/// Masks of vertices lying in the expression regions (mouth or brow) of
/// the corpus topology, for the given vertex count.
inline std::vector<uint8_t> expression_region_mask(int n_vertices) {
  const auto grid = detail::make_sphere_grid(n_vertices);
  std::vector<uint8_t> mask(grid.phi.size(), 0);
  for (size_t v = 0; v < grid.phi.size(); ++v)
    mask[v] = detail::kMouthRegion.weight(grid.phi[v], grid.lambda[v]) > 0 ||
              detail::kBrowRegion.weight(grid.phi[v], grid.lambda[v]) > 0;
  return mask;
}

/// Vertices on the cheeks of the corpus topology.
inline std::vector<uint8_t> cheek_region_mask(int n_vertices) {
  const auto grid = detail::make_sphere_grid(n_vertices);
  const detail::Region cheeks_l{detail::kHalfPi + 0.05, detail::kHalfPi + 0.45, 0.45, 0.8, 0.0};
  const detail::Region cheeks_r{detail::kHalfPi + 0.05, detail::kHalfPi + 0.45, -0.8, -0.45, 0.0};
  std::vector<uint8_t> mask(grid.phi.size(), 0);
  for (size_t v = 0; v < grid.phi.size(); ++v)
    mask[v] = cheeks_l.weight(grid.phi[v], grid.lambda[v]) > 0 || cheeks_r.weight(grid.phi[v], grid.lambda[v]) > 0;
  return mask;
}

/// Face model built from the procedural corpus and truncated to the
/// tracking dimensions.
inline MultilinearModel make_synthetic_model(const CorpusOptions& corpus = {}, int keep_id = 28, int keep_exp = 7) {
  const MultilinearModel full = build_from_corpus(generate_corpus(corpus));
  return truncate(full, std::min(keep_id, full.n_id()), std::min(keep_exp, full.n_exp()));
}

// ---------------------------------------------------------------------------
// Scenes

struct Occluder {
  double coverage = 0.3;
  double depth_offset = 100.0;  // mm in front of the face
  int first_frame = 0;
  int last_frame = -1;  // inclusive; -1 means through the end
};

struct NoiseModel {
  double sigma = 0.0;  // mm
  double quant = 1.0;  // mm
};

struct SyntheticScene {
  VecX w_id;
  VecX w_exp;
  std::vector<Pose> trajectory;
  std::vector<Occluder> occluders;
  NoiseModel noise;
  CameraIntrinsics camera;
  int width = 640;
  int height = 480;
  uint64_t seed = 1;
};

struct OrbitOptions {
  int frames = 60;
  double yaw_deg = 40.0;
  double pitch_deg = 20.0;
  double roll_deg = 5.0;
  Vec3 start = Vec3(0.0, 0.0, 1000.0);
  Vec3 drift = Vec3(20.0, 10.0, 20.0);  // mm over the sequence
  bool periodic = false;
};

/// Head trajectory starting frontal at `start`: yaw sweeps +-yaw_deg once,
/// pitch oscillates twice with +-pitch_deg, roll once; translation drifts
/// linearly (or out and back when periodic, so the clip loops).
inline std::vector<Pose> orbit_trajectory(const OrbitOptions& o) {
  std::vector<Pose> out;
  const double pi = std::numbers::pi;
  const double deg = pi / 180.0;
  const double period = o.periodic ? o.frames : std::max(1, o.frames - 1);
  for (int i = 0; i < o.frames; ++i) {
    const double s = i / period;
    EulerAngles e;
    e.yaw = o.yaw_deg * deg * std::sin(2 * pi * s);
    e.pitch = o.pitch_deg * deg * std::sin(4 * pi * s);
    e.roll = o.roll_deg * deg * std::sin(2 * pi * s);
    Pose p;
    p.omega = rotation_vector(rotation_from_euler(e));
    p.t = o.start + (o.periodic ? 0.5 * (1.0 - std::cos(2 * pi * s)) : s) * o.drift;
    out.push_back(p);
  }
  return out;
}

struct RenderedSequence {
  std::vector<DepthFrame> frames;
  std::vector<Pose> truth;
  std::vector<Roi> face_rois;  // valid bounding box of the clean render
};

inline RenderedSequence render_scene(const MultilinearModel& model, const SyntheticScene& scene) {
  RenderedSequence seq;
  std::mt19937_64 rng(scene.seed);
  const VecX mesh = synthesize_face(model, scene.w_id, scene.w_exp);
  for (size_t i = 0; i < scene.trajectory.size(); ++i) {
    const auto& pose = scene.trajectory[i];
    DepthFrame f = render_depth(mesh, model.triangles, pose, scene.camera, scene.width, scene.height);
    const Roi roi = valid_bounding_box(f);
    for (const auto& occ : scene.occluders) {
      const int last = occ.last_frame < 0 ? static_cast<int>(scene.trajectory.size()) - 1 : occ.last_frame;
      if (static_cast<int>(i) < occ.first_frame || static_cast<int>(i) > last) continue;
      f = inject_occlusion(f, roi, occ.coverage, rng, occ.depth_offset).frame;
    }
    f = add_noise(f, scene.noise.sigma, scene.noise.quant, rng);
    seq.frames.push_back(std::move(f));
    seq.truth.push_back(pose);
    seq.face_rois.push_back(roi);
  }
  return seq;
}

}  // namespace facetrack
