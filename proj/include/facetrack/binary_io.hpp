#pragma once

// Little-endian chunked binary container: a 5-byte magic followed by chunks
// of {4-byte ASCII tag, uint64 payload length, payload}.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "facetrack/errors.hpp"

namespace facetrack::binary {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u32(uint32_t v) { raw(&v, sizeof v); }
  void i32(int32_t v) { raw(&v, sizeof v); }
  void u64(uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f64s(const double* p, size_t n) { raw(p, n * sizeof(double)); }
  void vector(const Eigen::VectorXd& v) { f64s(v.data(), static_cast<size_t>(v.size())); }
  void matrix(const Eigen::MatrixXd& m) { f64s(m.data(), static_cast<size_t>(m.size())); }  // column-major
  const std::vector<uint8_t>& bytes() const { return buf_; }

private:
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<uint8_t> buf_;
};

class Reader {
public:
  Reader(const uint8_t* data, size_t size, std::string what) : p_(data), end_(data + size), what_(std::move(what)) {}

  uint8_t u8() { return take<uint8_t>(); }
  uint32_t u32() { return take<uint32_t>(); }
  int32_t i32() { return take<int32_t>(); }
  uint64_t u64() { return take<uint64_t>(); }
  double f64() { return take<double>(); }
  Eigen::VectorXd vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    copy(v.data(), static_cast<size_t>(n) * sizeof(double));
    return v;
  }
  Eigen::MatrixXd matrix(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    copy(m.data(), static_cast<size_t>(rows * cols) * sizeof(double));
    return m;
  }
  bool done() const { return p_ == end_; }

private:
  template <typename T>
  T take() {
    T v;
    copy(&v, sizeof v);
    return v;
  }
  void copy(void* dst, size_t n) {
    if (static_cast<size_t>(end_ - p_) < n) throw FormatError(what_ + ": truncated payload");
    std::memcpy(dst, p_, n);
    p_ += n;
  }
  const uint8_t* p_;
  const uint8_t* end_;
  std::string what_;
};

struct Chunk {
  std::string tag;
  std::vector<uint8_t> payload;
};

/// Writes magic + chunks to `path` through a temporary file renamed on success.
inline void write_container(const std::filesystem::path& path, const std::string& magic, const std::vector<Chunk>& chunks) {
  Writer w;
  for (char c : magic) w.u8(static_cast<uint8_t>(c));
  for (const auto& ch : chunks) {
    if (ch.tag.size() != 4) throw FormatError("chunk tags are four characters");
    for (char c : ch.tag) w.u8(static_cast<uint8_t>(c));
    w.u64(ch.payload.size());
    for (uint8_t b : ch.payload) w.u8(b);
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

/// Reads a container; chunks are returned in file order.
inline std::vector<Chunk> read_container(const std::filesystem::path& path, const std::string& magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < magic.size() || std::memcmp(bytes.data(), magic.data(), magic.size()) != 0)
    throw FormatError(path.string() + ": bad magic, expected " + magic);
  std::vector<Chunk> chunks;
  size_t pos = magic.size();
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 12) throw FormatError(path.string() + ": truncated chunk header");
    Chunk ch;
    ch.tag.assign(reinterpret_cast<const char*>(&bytes[pos]), 4);
    uint64_t len;
    std::memcpy(&len, &bytes[pos + 4], 8);
    pos += 12;
    if (bytes.size() - pos < len) throw FormatError(path.string() + ": truncated chunk " + ch.tag);
    ch.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
    chunks.push_back(std::move(ch));
  }
  return chunks;
}

inline const Chunk& require_chunk(const std::vector<Chunk>& chunks, const std::string& tag, const std::string& file) {
  for (const auto& c : chunks)
    if (c.tag == tag) return c;
  throw FormatError(file + ": missing chunk " + tag);
}

}  // namespace facetrack::binary
