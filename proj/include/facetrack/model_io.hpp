#pragma once

// "MLFM1" model files. Layout is documented in docs/model_format.md.

#include <filesystem>

#include "facetrack/binary_io.hpp"
#include "facetrack/face_model.hpp"

namespace facetrack {

inline void save_model(const MultilinearModel& model, const std::filesystem::path& path) {
  model.validate();
  using binary::Chunk;
  using binary::Writer;
  std::vector<Chunk> chunks;

  Writer dims;
  dims.u32(static_cast<uint32_t>(model.vertex_count()));
  dims.u32(static_cast<uint32_t>(model.n_id()));
  dims.u32(static_cast<uint32_t>(model.n_exp()));
  dims.u32(static_cast<uint32_t>(model.u_id.rows()));
  dims.u32(static_cast<uint32_t>(model.u_exp.rows()));
  dims.u32(static_cast<uint32_t>(model.triangles.size()));
  chunks.push_back({"DIMS", dims.bytes()});

  Writer mean;
  mean.vector(model.mean_face);
  chunks.push_back({"MEAN", mean.bytes()});

  Writer core;
  core.matrix(model.core);
  chunks.push_back({"CORE", core.bytes()});

  Writer uid, uexp;
  uid.matrix(model.u_id);
  uexp.matrix(model.u_exp);
  chunks.push_back({"UIDM", uid.bytes()});
  chunks.push_back({"UEXP", uexp.bytes()});

  Writer pid, pexp;
  pid.vector(model.mu_id);
  pid.matrix(model.sigma_id);
  pexp.vector(model.mu_exp);
  pexp.matrix(model.sigma_exp);
  chunks.push_back({"PRID", pid.bytes()});
  chunks.push_back({"PREX", pexp.bytes()});

  Writer tris;
  for (const auto& t : model.triangles)
    for (int i : t) tris.u32(static_cast<uint32_t>(i));
  chunks.push_back({"TRIS", tris.bytes()});

  binary::write_container(path, "MLFM1", chunks);
}

inline MultilinearModel load_model(const std::filesystem::path& path) {
  const auto chunks = binary::read_container(path, "MLFM1");
  const std::string file = path.string();
  auto reader = [&](const char* tag) {
    const auto& c = binary::require_chunk(chunks, tag, file);
    return binary::Reader(c.payload.data(), c.payload.size(), file + ":" + tag);
  };

  auto dims = reader("DIMS");
  const Eigen::Index n = dims.u32();
  const Eigen::Index n_id = dims.u32();
  const Eigen::Index n_exp = dims.u32();
  const Eigen::Index n_train_id = dims.u32();
  const Eigen::Index n_train_exp = dims.u32();
  const size_t n_tri = dims.u32();
  if (n == 0 || n_id == 0 || n_exp == 0 || n_train_id < n_id || n_train_exp < n_exp)
    throw FormatError(file + ": inconsistent dimensions");

  MultilinearModel m;
  m.mean_face = reader("MEAN").vector(3 * n);
  m.core = reader("CORE").matrix(3 * n, n_id * n_exp);
  m.u_id = reader("UIDM").matrix(n_train_id, n_id);
  m.u_exp = reader("UEXP").matrix(n_train_exp, n_exp);
  auto pid = reader("PRID");
  m.mu_id = pid.vector(n_id);
  m.sigma_id = pid.matrix(n_id, n_id);
  auto pexp = reader("PREX");
  m.mu_exp = pexp.vector(n_exp);
  m.sigma_exp = pexp.matrix(n_exp, n_exp);
  auto tris = reader("TRIS");
  m.triangles.resize(n_tri);
  for (auto& t : m.triangles)
    for (int& i : t) i = static_cast<int>(tris.u32());
  m.validate();
  return m;
}

}  // namespace facetrack
