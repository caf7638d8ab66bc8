#pragma once

// Depth image files, sequence manifests, dataset adapters, pose CSVs and
// error metrics.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>
#include <png.h>

#include "facetrack/errors.hpp"
#include "facetrack/geometry.hpp"

namespace facetrack {

namespace fs = std::filesystem;

/// Writes `contents` to a sibling temporary file and renames it over `path`.
inline void write_file_atomic(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------
// 16-bit grayscale PNG

namespace detail {

struct PngFile {
  FILE* fp = nullptr;
  explicit PngFile(const fs::path& p, const char* mode) : fp(std::fopen(p.string().c_str(), mode)) {}
  ~PngFile() {
    if (fp) std::fclose(fp);
  }
  PngFile(const PngFile&) = delete;
  PngFile& operator=(const PngFile&) = delete;
};

[[noreturn]] inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

inline void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace detail

/// Raw 16-bit samples, row-major.
struct Image16 {
  int width = 0;
  int height = 0;
  std::vector<uint16_t> pixels;
};

inline Image16 read_png16(const fs::path& path) {
  detail::PngFile file(path, "rb");
  if (!file.fp) throw IoError("cannot open depth image: " + path.string());
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, detail::png_error_fn, detail::png_warning_fn);
  if (!png) throw IoError("libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  Image16 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": " + (message.empty() ? "malformed PNG" : message));
  }
  png_init_io(png, file.fp);
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (bit_depth != 16 || color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": expected a 16-bit grayscale PNG");
  }
  png_set_swap(png);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.pixels.resize(static_cast<size_t>(img.width) * img.height);
  rows.resize(static_cast<size_t>(img.height));
  for (int v = 0; v < img.height; ++v)
    rows[static_cast<size_t>(v)] = reinterpret_cast<png_bytep>(&img.pixels[static_cast<size_t>(v) * img.width]);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png16(const fs::path& path, const Image16& img) {
  if (img.width <= 0 || img.height <= 0 || img.pixels.size() != static_cast<size_t>(img.width) * img.height)
    throw DimensionError("image buffer does not match its dimensions");
  const fs::path tmp = path.string() + ".tmp";
  {
    detail::PngFile file(tmp, "wb");
    if (!file.fp) throw IoError("cannot open for writing: " + tmp.string());
    std::string message;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, detail::png_error_fn, detail::png_warning_fn);
    if (!png) throw IoError("libpng initialization failed");
    png_infop info = png_create_info_struct(png);
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw IoError(tmp.string() + ": " + message);
    }
    png_init_io(png, file.fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 16,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_set_swap(png);
    for (int v = 0; v < img.height; ++v)
      rows[static_cast<size_t>(v)] =
          reinterpret_cast<png_bytep>(const_cast<uint16_t*>(&img.pixels[static_cast<size_t>(v) * img.width]));
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

/// Depth in mm = stored value * unit_scale; stored 0 is missing.
inline DepthFrame depth_from_image(const Image16& img, double unit_scale) {
  if (!(unit_scale > 0)) throw DomainError("depth unit scale must be positive");
  DepthFrame f(img.width, img.height);
  for (size_t i = 0; i < img.pixels.size(); ++i) f.data()[i] = img.pixels[i] == 0 ? DepthFrame::kMissing : img.pixels[i] * unit_scale;
  return f;
}

inline Image16 image_from_depth(const DepthFrame& f, double unit_scale) {
  if (!(unit_scale > 0)) throw DomainError("depth unit scale must be positive");
  Image16 img{f.width(), f.height(), std::vector<uint16_t>(f.data().size(), 0)};
  for (size_t i = 0; i < f.data().size(); ++i) {
    const double d = f.data()[i];
    if (!(d > 0)) continue;
    img.pixels[i] = static_cast<uint16_t>(std::clamp(std::round(d / unit_scale), 1.0, 65535.0));
  }
  return img;
}

inline DepthFrame read_depth_png(const fs::path& path, double unit_scale = 1.0) {
  return depth_from_image(read_png16(path), unit_scale);
}

inline void write_depth_png(const fs::path& path, const DepthFrame& frame, double unit_scale = 1.0) {
  write_png16(path, image_from_depth(frame, unit_scale));
}

// ---------------------------------------------------------------------------
// Frame sources

class FrameSource {
public:
  virtual ~FrameSource() = default;
  virtual int size() const = 0;
  virtual DepthFrame frame(int index) const = 0;
};

class MemorySource : public FrameSource {
public:
  explicit MemorySource(std::vector<DepthFrame> frames) : frames_(std::move(frames)) {}
  int size() const override { return static_cast<int>(frames_.size()); }
  DepthFrame frame(int index) const override { return frames_.at(static_cast<size_t>(index)); }

private:
  std::vector<DepthFrame> frames_;
};

struct SequenceManifest {
  fs::path root;                // directory other paths are relative to
  std::string frame_pattern = "depth_{:05d}.png";
  int first = 0;
  int count = 0;
  CameraIntrinsics intrinsics;
  double unit_scale = 1.0;      // mm per stored unit
  std::optional<std::string> truth;
  std::vector<int> clips;       // first frame of each clip, ascending, starting at 0

  fs::path frame_path(int i) const {
    std::string name;
    try {
      name = fmt::format(fmt::runtime(frame_pattern), i);
    } catch (const fmt::format_error& e) {
      throw FormatError("bad frame pattern '" + frame_pattern + "': " + e.what());
    }
    return root / name;
  }

  void validate() const {
    if (!(unit_scale > 0)) throw DomainError("manifest unit scale must be positive");
    if (count < 0) throw DomainError("manifest frame count is negative");
    if (!(intrinsics.f > 0)) throw DomainError("manifest focal length must be positive");
    for (size_t i = 0; i < clips.size(); ++i) {
      if (clips[i] < 0 || clips[i] >= std::max(count, 1)) throw DomainError("clip start outside the sequence");
      if (i > 0 && clips[i] <= clips[i - 1]) throw DomainError("clip starts must increase");
    }
    if (!clips.empty() && clips.front() != 0) throw DomainError("the first clip must start at frame 0");
  }
};

inline nlohmann::json manifest_to_json(const SequenceManifest& m) {
  nlohmann::json j;
  j["frames"] = m.frame_pattern;
  j["first"] = m.first;
  j["count"] = m.count;
  j["intrinsics"] = {{"f", m.intrinsics.f}, {"u0", m.intrinsics.u0}, {"v0", m.intrinsics.v0}};
  j["unit_scale_mm"] = m.unit_scale;
  if (m.truth) j["truth"] = *m.truth;
  if (!m.clips.empty()) j["clips"] = m.clips;
  return j;
}

inline SequenceManifest manifest_from_json(const nlohmann::json& j, const fs::path& root) {
  SequenceManifest m;
  m.root = root;
  try {
    m.frame_pattern = j.at("frames").get<std::string>();
    m.count = j.at("count").get<int>();
    m.first = j.value("first", 0);
    if (j.contains("intrinsics")) {
      const auto& k = j.at("intrinsics");
      m.intrinsics.f = k.at("f").get<double>();
      m.intrinsics.u0 = k.at("u0").get<double>();
      m.intrinsics.v0 = k.at("v0").get<double>();
    }
    m.unit_scale = j.value("unit_scale_mm", 1.0);
    if (j.contains("truth")) m.truth = j.at("truth").get<std::string>();
    if (j.contains("clips")) m.clips = j.at("clips").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sequence manifest: ") + e.what());
  }
  m.validate();
  return m;
}

inline SequenceManifest load_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

inline void save_manifest(const SequenceManifest& m, const fs::path& path) {
  write_file_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

/// Frames of a manifest, decoded on demand.
class ImageSequence : public FrameSource {
public:
  explicit ImageSequence(SequenceManifest m) : m_(std::move(m)) {
    m_.validate();
    for (int i = 0; i < m_.count; ++i)
      if (!fs::exists(frame_path(i))) throw IoError("missing frame file: " + frame_path(i).string());
  }
  int size() const override { return m_.count; }
  DepthFrame frame(int index) const override {
    if (index < 0 || index >= m_.count) throw DomainError("frame index out of range");
    DepthFrame f = read_depth_png(frame_path(index), m_.unit_scale);
    if (width_ > 0 && (f.width() != width_ || f.height() != height_))
      throw FormatError(frame_path(index).string() + ": dimensions differ from the first frame");
    if (width_ == 0) {
      width_ = f.width();
      height_ = f.height();
    }
    return f;
  }
  const SequenceManifest& manifest() const { return m_; }

private:
  fs::path frame_path(int i) const { return m_.frame_path(m_.first + i); }
  SequenceManifest m_;
  mutable int width_ = 0;
  mutable int height_ = 0;
};

inline std::unique_ptr<ImageSequence> load_sequence(const SequenceManifest& m) { return std::make_unique<ImageSequence>(m); }

// ---------------------------------------------------------------------------
// Pose records

struct PoseRecord {
  int frame = 0;
  double yaw_deg = 0;
  double pitch_deg = 0;
  double roll_deg = 0;
  Vec3 t = Vec3::Zero();  // mm
  double alpha = 0;
  double occluded_fraction = 0;
  bool failed = false;

  bool operator==(const PoseRecord&) const = default;
};

inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

inline PoseRecord pose_record(int frame, const Pose& pose, double occluded_fraction = 0.0, bool failed = false) {
  const EulerAngles e = euler_from_rotation(pose.rotation());
  return PoseRecord{frame, e.yaw * kRadToDeg, e.pitch * kRadToDeg, e.roll * kRadToDeg, pose.t, pose.alpha, occluded_fraction, failed};
}

inline Pose pose_from_record(const PoseRecord& r) {
  const Mat3 rot = rotation_from_euler({r.yaw_deg / kRadToDeg, r.pitch_deg / kRadToDeg, r.roll_deg / kRadToDeg});
  return Pose{rotation_vector(rot), r.t, r.alpha};
}

inline constexpr const char* kPoseCsvHeader = "frame,yaw_deg,pitch_deg,roll_deg,tx_mm,ty_mm,tz_mm,alpha,occ_frac,failed";

inline std::string format_pose_csv(const std::vector<PoseRecord>& records) {
  std::string out = std::string(kPoseCsvHeader) + "\n";
  for (const auto& r : records) {
    if (!std::isfinite(r.yaw_deg) || !std::isfinite(r.pitch_deg) || !std::isfinite(r.roll_deg) || !r.t.allFinite())
      throw DomainError(fmt::format("non-finite pose at frame {}", r.frame));
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.4f},{:.4f},{:.4f},{:.8f},{:.6f},{}\n", r.frame, r.yaw_deg, r.pitch_deg,
                       r.roll_deg, r.t.x(), r.t.y(), r.t.z(), r.alpha, r.occluded_fraction, r.failed ? 1 : 0);
  }
  return out;
}

inline void write_pose_csv(const fs::path& path, const std::vector<PoseRecord>& records) {
  write_file_atomic(path, format_pose_csv(records));
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw FormatError(where + ": not a number: '" + s + "'");
  return v;
}

}  // namespace detail

inline std::vector<PoseRecord> parse_pose_csv(const std::string& text, const std::string& name = "pose CSV") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(name + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPoseCsvHeader) throw FormatError(name + ": unexpected header");
  std::vector<PoseRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = name + ":" + std::to_string(lineno);
    if (f.size() != 10) throw FormatError(where + ": expected 10 fields");
    PoseRecord r;
    r.frame = static_cast<int>(detail::parse_double(f[0], where));
    r.yaw_deg = detail::parse_double(f[1], where);
    r.pitch_deg = detail::parse_double(f[2], where);
    r.roll_deg = detail::parse_double(f[3], where);
    r.t = Vec3(detail::parse_double(f[4], where), detail::parse_double(f[5], where), detail::parse_double(f[6], where));
    r.alpha = detail::parse_double(f[7], where);
    r.occluded_fraction = detail::parse_double(f[8], where);
    r.failed = detail::parse_double(f[9], where) != 0;
    if (r.occluded_fraction < 0 || r.occluded_fraction > 1) throw FormatError(where + ": occluded fraction outside [0, 1]");
    out.push_back(r);
  }
  return out;
}

inline std::vector<PoseRecord> read_pose_csv(const fs::path& path) { return parse_pose_csv(read_text_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Metrics

struct FrameError {
  int frame = 0;
  double yaw = 0, pitch = 0, roll = 0;  // absolute, degrees
  double translation = 0;               // mm
};

struct Metrics {
  double yaw = 0, pitch = 0, roll = 0;
  double translation = 0;
  size_t frames = 0;
  std::vector<FrameError> per_frame;
};

inline double angle_difference_deg(double a, double b) {
  double d = std::fmod(a - b, 360.0);
  if (d > 180) d -= 360;
  if (d < -180) d += 360;
  return std::abs(d);
}

/// Mean absolute Euler-angle errors and mean Euclidean translation error.
inline Metrics evaluate(const std::vector<PoseRecord>& poses, const std::vector<PoseRecord>& truth) {
  if (poses.size() != truth.size()) throw DimensionError("pose and ground-truth records differ in count");
  Metrics m;
  for (size_t i = 0; i < poses.size(); ++i) {
    const auto& p = poses[i];
    const auto& t = truth[i];
    if (p.frame != t.frame) throw DimensionError(fmt::format("frame index mismatch at row {}: {} vs {}", i, p.frame, t.frame));
    FrameError e{p.frame, angle_difference_deg(p.yaw_deg, t.yaw_deg), angle_difference_deg(p.pitch_deg, t.pitch_deg),
                 angle_difference_deg(p.roll_deg, t.roll_deg), (p.t - t.t).norm()};
    m.yaw += e.yaw;
    m.pitch += e.pitch;
    m.roll += e.roll;
    m.translation += e.translation;
    m.per_frame.push_back(e);
  }
  m.frames = poses.size();
  if (m.frames > 0) {
    const auto n = static_cast<double>(m.frames);
    m.yaw /= n;
    m.pitch /= n;
    m.roll /= n;
    m.translation /= n;
  }
  return m;
}

inline std::string format_error_csv(const Metrics& m) {
  std::string out = "frame,yaw_err_deg,pitch_err_deg,roll_err_deg,trans_err_mm\n";
  for (const auto& e : m.per_frame)
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.4f}\n", e.frame, e.yaw, e.pitch, e.roll, e.translation);
  return out;
}

// ---------------------------------------------------------------------------
// Biwi Kinect head pose database

/// One recording directory: frame_XXXXX_depth.bin, frame_XXXXX_pose.txt and
/// depth.cal.
class BiwiSequence : public FrameSource {
public:
  explicit BiwiSequence(const fs::path& dir) : dir_(dir) {
    if (!fs::is_directory(dir)) throw IoError("Biwi sequence directory not found: " + dir.string());
    std::vector<int> ids;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.size() == 21 && name.starts_with("frame_") && name.ends_with("_depth.bin")) {
        int id = 0;
        const auto [p, ec] = std::from_chars(name.data() + 6, name.data() + 11, id);
        if (ec == std::errc() && p == name.data() + 11) ids.push_back(id);
      }
    }
    if (ids.empty()) throw FormatError(dir.string() + ": no frame_XXXXX_depth.bin files");
    std::sort(ids.begin(), ids.end());
    intrinsics_ = read_calibration(dir / "depth.cal");
    std::vector<PoseRecord> truth;
    for (int id : ids) {
      PoseRecord r = read_pose(id);
      r.frame = static_cast<int>(truth.size());
      truth.push_back(r);
    }
    ids_ = std::move(ids);
    truth_ = std::move(truth);
  }

  int size() const override { return static_cast<int>(ids_.size()); }
  DepthFrame frame(int index) const override { return read_depth(dir_ / fmt::format("frame_{:05d}_depth.bin", ids_.at(static_cast<size_t>(index)))); }
  /// Ground truth indexed like the frames (record.frame is the position in
  /// the sequence, frame_ids() holds the file numbers).
  const std::vector<PoseRecord>& truth() const { return truth_; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  const std::vector<int>& frame_ids() const { return ids_; }

  /// Run-length coded 16-bit depth: int32 width, int32 height, then pairs of
  /// {int32 empty count, int32 full count, full count x int16 values}.
  static DepthFrame read_depth(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    int32_t w = 0, h = 0;
    in.read(reinterpret_cast<char*>(&w), 4);
    in.read(reinterpret_cast<char*>(&h), 4);
    if (!in || w <= 0 || h <= 0 || w > 10000 || h > 10000) throw FormatError(path.string() + ": bad depth header");
    DepthFrame f(w, h);
    const size_t total = static_cast<size_t>(w) * h;
    size_t p = 0;
    std::vector<int16_t> buf;
    while (p < total) {
      int32_t empty = 0, full = 0;
      in.read(reinterpret_cast<char*>(&empty), 4);
      if (!in || empty < 0 || p + static_cast<size_t>(empty) > total) throw FormatError(path.string() + ": corrupt run length");
      p += static_cast<size_t>(empty);
      in.read(reinterpret_cast<char*>(&full), 4);
      if (!in || full < 0 || p + static_cast<size_t>(full) > total) throw FormatError(path.string() + ": corrupt run length");
      buf.resize(static_cast<size_t>(full));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(full) * 2);
      if (!in) throw FormatError(path.string() + ": truncated depth values");
      for (int32_t i = 0; i < full; ++i) f.data()[p + static_cast<size_t>(i)] = buf[static_cast<size_t>(i)] > 0 ? buf[static_cast<size_t>(i)] : DepthFrame::kMissing;
      p += static_cast<size_t>(full);
    }
    return f;
  }

  /// Three rows of the rotation matrix followed by the head centre in mm.
  static PoseRecord parse_pose(const std::string& text, int frame, const std::string& name) {
    std::istringstream in(text);
    Mat3 r;
    Vec3 t;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) in >> r(i, j);
    for (int i = 0; i < 3; ++i) in >> t(i);
    if (!in) throw FormatError(name + ": expected a 3x3 rotation and a translation");
    if (!(r * r.transpose()).isApprox(Mat3::Identity(), 1e-3)) throw FormatError(name + ": rotation is not orthonormal");
    const EulerAngles e = euler_from_rotation(r);
    return PoseRecord{frame, e.yaw * kRadToDeg, e.pitch * kRadToDeg, e.roll * kRadToDeg, t, 0.0, 0.0, false};
  }

  /// First three lines of depth.cal hold the 3x3 camera matrix.
  static CameraIntrinsics read_calibration(const fs::path& path) {
    std::istringstream in(read_text_file(path));
    Mat3 k;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) in >> k(i, j);
    if (!in || !(k(0, 0) > 0)) throw FormatError(path.string() + ": bad camera matrix");
    return CameraIntrinsics{k(0, 0), k(0, 2), k(1, 2)};
  }

private:
  PoseRecord read_pose(int id) const {
    const fs::path p = dir_ / fmt::format("frame_{:05d}_pose.txt", id);
    return parse_pose(read_text_file(p), id, p.string());
  }

  fs::path dir_;
  std::vector<int> ids_;
  std::vector<PoseRecord> truth_;
  CameraIntrinsics intrinsics_;
};

inline std::unique_ptr<BiwiSequence> load_biwi(const fs::path& dir) { return std::make_unique<BiwiSequence>(dir); }

}  // namespace facetrack
