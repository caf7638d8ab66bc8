#pragma once

// "IDST1" identity store files. Layout is documented in docs/model_format.md.

#include <filesystem>

#include "facetrack/binary_io.hpp"
#include "facetrack/identity.hpp"

namespace facetrack {

namespace detail {

inline void write_identity(binary::Writer& w, const IdentityModel& m) {
  w.vector(m.m);
  w.f64(m.beta);
  w.matrix(m.psi);
  w.f64(m.nu);
  w.f64(m.alpha);
}

inline IdentityModel read_identity(binary::Reader& r, Eigen::Index dim) {
  IdentityModel m;
  m.m = r.vector(dim);
  m.beta = r.f64();
  m.psi = r.matrix(dim, dim);
  m.nu = r.f64();
  m.alpha = r.f64();
  return m;
}

}  // namespace detail

inline void save_store(const IdentityStore& store, const std::filesystem::path& path) {
  const Eigen::Index dim = store.generic.m.size();
  for (int k = 0; k <= store.size(); ++k) {
    store.at(k).validate();
    if (store.at(k).m.size() != dim) throw DimensionError("identity models in a store must share one dimension");
  }
  if (store.present_index < 0 || store.present_index > store.size()) throw DomainError("present identity index out of range");

  std::vector<binary::Chunk> chunks;
  binary::Writer head;
  head.u32(static_cast<uint32_t>(dim));
  head.u32(static_cast<uint32_t>(store.size()));
  head.i32(store.present_index);
  chunks.push_back({"HEAD", head.bytes()});

  binary::Writer generic;
  detail::write_identity(generic, store.generic);
  chunks.push_back({"GENR", generic.bytes()});

  for (const auto& m : store.models) {
    binary::Writer w;
    detail::write_identity(w, m);
    chunks.push_back({"IDEN", w.bytes()});
  }
  binary::write_container(path, "IDST1", chunks);
}

inline IdentityStore load_store(const std::filesystem::path& path) {
  const auto chunks = binary::read_container(path, "IDST1");
  const std::string file = path.string();
  const auto& h = binary::require_chunk(chunks, "HEAD", file);
  binary::Reader head(h.payload.data(), h.payload.size(), file + ":HEAD");
  const Eigen::Index dim = head.u32();
  const size_t k = head.u32();
  IdentityStore store;
  store.present_index = head.i32();
  if (dim == 0) throw FormatError(file + ": identity dimension is zero");

  const auto& g = binary::require_chunk(chunks, "GENR", file);
  binary::Reader gr(g.payload.data(), g.payload.size(), file + ":GENR");
  store.generic = detail::read_identity(gr, dim);
  if (!gr.done()) throw FormatError(file + ": trailing bytes in GENR");

  for (const auto& c : chunks) {
    if (c.tag != "IDEN") continue;
    binary::Reader r(c.payload.data(), c.payload.size(), file + ":IDEN");
    store.models.push_back(detail::read_identity(r, dim));
    if (!r.done()) throw FormatError(file + ": trailing bytes in IDEN");
  }
  if (store.models.size() != k) throw FormatError(file + ": model count does not match the header");
  if (store.present_index < 0 || store.present_index > store.size())
    throw FormatError(file + ": present index out of range");
  try {
    for (int i = 0; i <= store.size(); ++i) store.at(i).validate();
  } catch (const Error& e) {
    throw FormatError(file + ": " + e.what());
  }
  return store;
}

/// Appends the personalized models of `other` to `base`. Both stores must
/// share the generic model. The present model of `base` is kept.
inline IdentityStore merge_stores(const IdentityStore& base, const IdentityStore& other) {
  if (!(base.generic == other.generic)) throw DomainError("stores built from different generic models cannot be merged");
  IdentityStore out = base;
  out.models.insert(out.models.end(), other.models.begin(), other.models.end());
  return out;
}

}  // namespace facetrack
