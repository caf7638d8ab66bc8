#pragma once

// Pinhole camera, rigid transforms with exponential scale, depth frames and
// depth-derived point clouds with plane-fit normals.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "facetrack/errors.hpp"

namespace facetrack {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec7 = Eigen::Matrix<double, 7, 1>;
using Mat7 = Eigen::Matrix<double, 7, 7>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

struct CameraIntrinsics {
  double f = 575.0;
  double u0 = 319.5;
  double v0 = 239.5;

  Mat3 matrix() const {
    Mat3 k;
    k << f, 0, u0, 0, f, v0, 0, 0, 1;
    return k;
  }
};

/// Integer pixel coordinate (column u, row v).
struct PixelIndex {
  int u = 0;
  int v = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

/// Axis-aligned pixel rectangle [u0, u0 + width) x [v0, v0 + height).
struct Roi {
  int u0 = 0;
  int v0 = 0;
  int width = 0;
  int height = 0;

  bool contains(int u, int v) const {
    return u >= u0 && v >= v0 && u < u0 + width && v < v0 + height;
  }
  long area() const { return static_cast<long>(width) * height; }
  Roi clipped(int image_width, int image_height) const {
    const int a = std::clamp(u0, 0, image_width);
    const int b = std::clamp(v0, 0, image_height);
    const int c = std::clamp(u0 + width, 0, image_width);
    const int d = std::clamp(v0 + height, 0, image_height);
    return Roi{a, b, std::max(0, c - a), std::max(0, d - b)};
  }
};

/// Row-major depth image in millimeters; 0 marks a missing sample.
class DepthFrame {
public:
  static constexpr double kMissing = 0.0;
  static constexpr double kMaxDepth = 10000.0;

  DepthFrame() = default;
  DepthFrame(int width, int height) : width_(width), height_(height), depth_(static_cast<size_t>(width) * height, kMissing) {
    if (width <= 0 || height <= 0) throw DomainError("depth frame dimensions must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  Roi bounds() const { return Roi{0, 0, width_, height_}; }
  bool in_bounds(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }

  double at(int u, int v) const { return depth_[index(u, v)]; }
  double& at(int u, int v) { return depth_[index(u, v)]; }
  bool valid(int u, int v) const {
    if (!in_bounds(u, v)) return false;
    const double d = at(u, v);
    return d > 0.0 && d < kMaxDepth;
  }

  const std::vector<double>& data() const { return depth_; }
  std::vector<double>& data() { return depth_; }

  friend bool operator==(const DepthFrame&, const DepthFrame&) = default;

private:
  size_t index(int u, int v) const { return static_cast<size_t>(v) * width_ + u; }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> depth_;
};

inline Mat3 skew(const Vec3& w) {
  Mat3 s;
  s << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return s;
}

/// Rodrigues' formula.
inline Mat3 rotation_matrix(const Vec3& omega) {
  const double theta = omega.norm();
  const Mat3 k = skew(omega);
  if (theta < 1e-8) return Mat3::Identity() + k + 0.5 * k * k;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

/// Partial derivatives dR/d(omega_i) of rotation_matrix, i = 0..2.
///
/// Uses the closed form of Gallego & Yezzi,
///   dR/dw_i = (w_i [w]x + [w x (I - R) e_i]x) R / |w|^2,
/// falling back to the second-order series near the origin.
inline std::array<Mat3, 3> rotation_derivatives(const Vec3& omega) {
  std::array<Mat3, 3> d;
  const double theta2 = omega.squaredNorm();
  if (theta2 < 1e-14) {
    const Mat3 w = skew(omega);
    for (int i = 0; i < 3; ++i) {
      const Mat3 e = skew(Vec3::Unit(i));
      d[i] = e + 0.5 * (e * w + w * e);
    }
    return d;
  }
  const Mat3 r = rotation_matrix(omega);
  const Mat3 w = skew(omega);
  const Mat3 i_minus_r = Mat3::Identity() - r;
  for (int i = 0; i < 3; ++i) {
    const Vec3 v = omega.cross(i_minus_r.col(i));
    d[i] = (omega(i) * w + skew(v)) * r / theta2;
  }
  return d;
}

/// Inverse of rotation_matrix; returns a rotation vector with angle in [0, pi].
inline Vec3 rotation_vector(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

/// Head-pose Euler angles (radians): R = Ry(yaw) * Rx(pitch) * Rz(roll),
/// intrinsic yaw-pitch-roll about the camera's y (down), x (right) and z
/// (forward) axes.
struct EulerAngles {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

inline Mat3 rotation_from_euler(const EulerAngles& e) {
  return (Eigen::AngleAxisd(e.yaw, Vec3::UnitY()) * Eigen::AngleAxisd(e.pitch, Vec3::UnitX()) *
          Eigen::AngleAxisd(e.roll, Vec3::UnitZ()))
      .toRotationMatrix();
}

inline EulerAngles euler_from_rotation(const Mat3& r) {
  EulerAngles e;
  e.pitch = std::asin(std::clamp(-r(1, 2), -1.0, 1.0));
  e.yaw = std::atan2(r(0, 2), r(2, 2));
  e.roll = std::atan2(r(1, 0), r(1, 1));
  return e;
}

/// Rigid pose with log-scale: q = e^alpha R(omega) f + t.
struct Pose {
  Vec3 omega = Vec3::Zero();
  Vec3 t = Vec3::Zero();
  double alpha = 0.0;

  Mat3 rotation() const { return rotation_matrix(omega); }
  double scale() const { return std::exp(alpha); }

  Vec7 to_vector() const {
    Vec7 v;
    v << omega, t, alpha;
    return v;
  }
  static Pose from_vector(const Vec7& v) { return Pose{v.head<3>(), v.segment<3>(3), v(6)}; }
};

inline Vec3 transform(const Pose& pose, const Vec3& f) {
  return pose.scale() * (pose.rotation() * f) + pose.t;
}

/// Pose equivalent to applying `first` and then `second`.
inline Pose compose(const Pose& second, const Pose& first) {
  const Mat3 r2 = second.rotation();
  Pose out;
  out.omega = rotation_vector(r2 * first.rotation());
  out.t = second.scale() * (r2 * first.t) + second.t;
  out.alpha = first.alpha + second.alpha;
  return out;
}

inline Vec2 project(const Vec3& p, const CameraIntrinsics& k) {
  if (!(p.z() > 0.0)) throw DomainError("cannot project a point with non-positive depth");
  return Vec2(k.f * p.x() / p.z() + k.u0, k.f * p.y() / p.z() + k.v0);
}

inline Vec3 backproject(const Vec2& x, double depth, const CameraIntrinsics& k) {
  if (depth == DepthFrame::kMissing) throw NoDataError("back-projection of a missing depth sample");
  if (!(depth > 0.0)) throw DomainError("back-projection requires positive depth");
  return Vec3((x.x() - k.u0) / k.f * depth, (x.y() - k.v0) / k.f * depth, depth);
}

/// Bilinear depth at a sub-pixel location. Returns nullopt when any of the
/// four neighbours is missing or out of bounds.
inline std::optional<double> sample_bilinear(const DepthFrame& frame, const Vec2& x) {
  if (!std::isfinite(x.x()) || !std::isfinite(x.y())) return std::nullopt;
  const double fu = std::floor(x.x());
  const double fv = std::floor(x.y());
  if (fu < -1.0 || fv < -1.0 || fu > frame.width() || fv > frame.height()) return std::nullopt;
  const int u = static_cast<int>(fu);
  const int v = static_cast<int>(fv);
  if (!frame.valid(u, v) || !frame.valid(u + 1, v) || !frame.valid(u, v + 1) || !frame.valid(u + 1, v + 1)) {
    return std::nullopt;
  }
  const double a = x.x() - fu;
  const double b = x.y() - fv;
  return (1 - a) * (1 - b) * frame.at(u, v) + a * (1 - b) * frame.at(u + 1, v) + (1 - a) * b * frame.at(u, v + 1) +
         a * b * frame.at(u + 1, v + 1);
}

/// Bilinear sample plus its image-space gradient (d/du, d/dv) inside the cell.
struct DepthSample {
  double depth = 0.0;
  Vec2 gradient = Vec2::Zero();
};

inline std::optional<DepthSample> sample_bilinear_with_gradient(const DepthFrame& frame, const Vec2& x) {
  if (!std::isfinite(x.x()) || !std::isfinite(x.y())) return std::nullopt;
  const double fu = std::floor(x.x());
  const double fv = std::floor(x.y());
  if (fu < -1.0 || fv < -1.0 || fu > frame.width() || fv > frame.height()) return std::nullopt;
  const int u = static_cast<int>(fu);
  const int v = static_cast<int>(fv);
  if (!frame.valid(u, v) || !frame.valid(u + 1, v) || !frame.valid(u, v + 1) || !frame.valid(u + 1, v + 1)) {
    return std::nullopt;
  }
  const double a = x.x() - fu;
  const double b = x.y() - fv;
  const double d00 = frame.at(u, v), d10 = frame.at(u + 1, v), d01 = frame.at(u, v + 1), d11 = frame.at(u + 1, v + 1);
  DepthSample s;
  s.depth = (1 - a) * (1 - b) * d00 + a * (1 - b) * d10 + (1 - a) * b * d01 + a * b * d11;
  s.gradient.x() = (1 - b) * (d10 - d00) + b * (d11 - d01);
  s.gradient.y() = (1 - a) * (d01 - d00) + a * (d11 - d10);
  return s;
}

struct NormalOptions {
  int window = 5;             // odd window side length in pixels
  int min_valid = 6;          // fewer valid neighbours -> no normal
  double max_depth_jump = 30; // neighbours further than this (mm) from the centre depth are ignored
};

/// Points back-projected from the valid pixels of a region of interest.
///
/// `normals[i]` is meaningful only when `has_normal[i]` is set; normals are
/// unit length and point away from the camera centre.
struct PointCloud {
  Roi roi;
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<uint8_t> has_normal;
  std::vector<PixelIndex> pixels;
  std::vector<int> lookup_table;  // roi.width * roi.height, -1 where no point

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  /// Index of the point at pixel (u, v), or -1.
  int lookup(int u, int v) const {
    if (!roi.contains(u, v)) return -1;
    return lookup_table[static_cast<size_t>(v - roi.v0) * roi.width + (u - roi.u0)];
  }
};

/// Least-squares plane normal through a set of points; smallest-eigenvalue
/// eigenvector of their scatter matrix.
inline Vec3 plane_fit_normal(const std::vector<Vec3>& pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Mat3 s = Mat3::Zero();
  for (const auto& p : pts) {
    const Vec3 d = p - c;
    s.noalias() += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es;
  es.computeDirect(s);
  return es.eigenvectors().col(0).normalized();
}

inline PointCloud cloud_from_frame(const DepthFrame& frame, const Roi& roi_in, const CameraIntrinsics& k,
                                   const NormalOptions& opts = {}) {
  const Roi roi = roi_in.clipped(frame.width(), frame.height());
  if (roi.u0 != roi_in.u0 || roi.v0 != roi_in.v0 || roi.width != roi_in.width || roi.height != roi_in.height) {
    throw DomainError("region of interest exceeds the frame bounds");
  }
  PointCloud cloud;
  cloud.roi = roi;
  cloud.lookup_table.assign(static_cast<size_t>(roi.area()), -1);

  // Back-project the ROI grown by the window half-width once.
  const int half = opts.window / 2;
  const Roi grown = Roi{roi.u0 - half, roi.v0 - half, roi.width + 2 * half, roi.height + 2 * half}.clipped(
      frame.width(), frame.height());
  std::vector<Vec3> grid(static_cast<size_t>(grown.area()));
  std::vector<uint8_t> grid_valid(grid.size(), 0);
  for (int v = grown.v0; v < grown.v0 + grown.height; ++v) {
    for (int u = grown.u0; u < grown.u0 + grown.width; ++u) {
      if (!frame.valid(u, v)) continue;
      const size_t gi = static_cast<size_t>(v - grown.v0) * grown.width + (u - grown.u0);
      grid[gi] = backproject(Vec2(u, v), frame.at(u, v), k);
      grid_valid[gi] = 1;
    }
  }

  std::vector<Vec3> neighbours;
  neighbours.reserve(static_cast<size_t>(opts.window * opts.window));
  for (int v = roi.v0; v < roi.v0 + roi.height; ++v) {
    for (int u = roi.u0; u < roi.u0 + roi.width; ++u) {
      if (!frame.valid(u, v)) continue;
      const size_t gi = static_cast<size_t>(v - grown.v0) * grown.width + (u - grown.u0);
      const Vec3& p = grid[gi];
      neighbours.clear();
      for (int dv = -half; dv <= half; ++dv) {
        for (int du = -half; du <= half; ++du) {
          const int uu = u + du, vv = v + dv;
          if (!grown.contains(uu, vv)) continue;
          const size_t gj = static_cast<size_t>(vv - grown.v0) * grown.width + (uu - grown.u0);
          if (!grid_valid[gj]) continue;
          if (std::abs(grid[gj].z() - p.z()) > opts.max_depth_jump) continue;
          neighbours.push_back(grid[gj]);
        }
      }
      Vec3 n = Vec3::Zero();
      uint8_t ok = 0;
      if (static_cast<int>(neighbours.size()) >= opts.min_valid) {
        n = plane_fit_normal(neighbours);
        if (n.dot(p) < 0) n = -n;
        ok = 1;
      }
      cloud.lookup_table[static_cast<size_t>(v - roi.v0) * roi.width + (u - roi.u0)] =
          static_cast<int>(cloud.points.size());
      cloud.points.push_back(p);
      cloud.normals.push_back(n);
      cloud.has_normal.push_back(ok);
      cloud.pixels.push_back(PixelIndex{u, v});
    }
  }
  if (cloud.empty()) throw EmptyCloudError("region of interest contains no valid depth");
  return cloud;
}

/// Depth-adaptive ROI of physical size (height_mm x width_mm) centred on pixel c
/// at depth d, clipped to the frame.
inline Roi depth_adaptive_roi(const Vec2& c, double depth, const CameraIntrinsics& k, int image_width, int image_height,
                              double height_mm = 240.0, double width_mm = 320.0) {
  const double h = k.f * height_mm / depth;
  const double w = k.f * width_mm / depth;
  const int u0 = static_cast<int>(std::floor(c.x() - w / 2));
  const int v0 = static_cast<int>(std::floor(c.y() - h / 2));
  return Roi{u0, v0, static_cast<int>(std::ceil(w)), static_cast<int>(std::ceil(h))}.clipped(image_width,
                                                                                             image_height);
}

}  // namespace facetrack
