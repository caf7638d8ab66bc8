#pragma once

// Probabilistic multilinear face model.
//
// Shape is f = mean + C x2 w_id x3 w_exp with a 3-mode core tensor C of size
// 3N x n_id x n_exp. The core is stored unfolded as a 3N x (n_id * n_exp)
// matrix whose column (i + n_id * j) is the shape fiber C(:, i, j); in memory
// this is column-major order with the shape axis fastest, then identity, then
// expression.

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "facetrack/errors.hpp"
#include "facetrack/geometry.hpp"

namespace facetrack {

using Triangle = std::array<int, 3>;

struct MultilinearModel {
  VecX mean_face;  // 3N, mm
  MatX core;       // 3N x (n_id * n_exp)
  MatX u_id;       // n_train_id x n_id, orthonormal columns
  MatX u_exp;      // n_train_exp x n_exp
  VecX mu_id;
  MatX sigma_id;
  VecX mu_exp;
  MatX sigma_exp;
  std::vector<Triangle> triangles;

  int vertex_count() const { return static_cast<int>(mean_face.size() / 3); }
  int n_id() const { return static_cast<int>(u_id.cols()); }
  int n_exp() const { return static_cast<int>(u_exp.cols()); }

  /// C x3 v, a 3N x n_id matrix.
  MatX contract_expression(const VecX& w_exp) const {
    if (w_exp.size() != n_exp()) throw DimensionError("expression weight length does not match the model");
    MatX out = MatX::Zero(core.rows(), n_id());
    for (int j = 0; j < n_exp(); ++j) out.noalias() += w_exp(j) * core.middleCols(static_cast<Eigen::Index>(j) * n_id(), n_id());
    return out;
  }

  /// C x2 w, a 3N x n_exp matrix.
  MatX contract_identity(const VecX& w_id) const {
    if (w_id.size() != n_id()) throw DimensionError("identity weight length does not match the model");
    MatX out(core.rows(), n_exp());
    for (int j = 0; j < n_exp(); ++j) out.col(j).noalias() = core.middleCols(static_cast<Eigen::Index>(j) * n_id(), n_id()) * w_id;
    return out;
  }

  /// Throws DimensionError unless all blocks agree with each other.
  void validate() const {
    const Eigen::Index rows = mean_face.size();
    if (rows == 0 || rows % 3 != 0) throw DimensionError("mean face length must be a positive multiple of 3");
    if (core.rows() != rows || core.cols() != u_id.cols() * u_exp.cols())
      throw DimensionError("core tensor dimensions disagree with the mean face and factor matrices");
    if (mu_id.size() != n_id() || sigma_id.rows() != n_id() || sigma_id.cols() != n_id())
      throw DimensionError("identity prior dimensions disagree with the model");
    if (mu_exp.size() != n_exp() || sigma_exp.rows() != n_exp() || sigma_exp.cols() != n_exp())
      throw DimensionError("expression prior dimensions disagree with the model");
    for (const auto& t : triangles)
      for (int idx : t)
        if (idx < 0 || idx >= vertex_count()) throw DimensionError("triangle index out of range");
  }
};

inline Vec3 vertex_of(const VecX& shape, int n) { return shape.segment<3>(3 * static_cast<Eigen::Index>(n)); }

/// Area-weighted vertex normals of a triangle mesh (outward for
/// counter-clockwise winding seen from outside).
inline std::vector<Vec3> vertex_normals(const VecX& shape, const std::vector<Triangle>& triangles) {
  const int n = static_cast<int>(shape.size() / 3);
  std::vector<Vec3> normals(static_cast<size_t>(n), Vec3::Zero());
  for (const auto& t : triangles) {
    const Vec3 a = vertex_of(shape, t[0]), b = vertex_of(shape, t[1]), c = vertex_of(shape, t[2]);
    const Vec3 fn = (b - a).cross(c - a);
    for (int idx : t) normals[static_cast<size_t>(idx)] += fn;
  }
  for (auto& v : normals) {
    const double len = v.norm();
    if (len > 0) v /= len;
  }
  return normals;
}

/// Per-vertex Gaussian of the marginalized face model.
///
/// Only the N diagonal 3x3 blocks of the 3N x 3N covariance are kept.
struct FaceDistribution {
  VecX mu;
  std::vector<Mat3> sigma_blocks;
  MatX p_id;   // 3N x n_id
  MatX p_exp;  // 3N x n_exp
  std::vector<Vec3> normals;  // vertex normals of the mean shape
  std::vector<Triangle> triangles;

  int vertex_count() const { return static_cast<int>(mu.size() / 3); }
  Vec3 mean(int n) const { return vertex_of(mu, n); }
};

namespace detail {

inline std::vector<Mat3> diagonal_blocks(const MatX& p_a, const MatX& sigma_a, const MatX* p_b, const MatX* sigma_b) {
  const int n = static_cast<int>(p_a.rows() / 3);
  std::vector<Mat3> blocks(static_cast<size_t>(n));
  const MatX ps_a = p_a * sigma_a;
  MatX ps_b;
  if (p_b != nullptr) ps_b = (*p_b) * (*sigma_b);
  for (int v = 0; v < n; ++v) {
    const Eigen::Index r = 3 * static_cast<Eigen::Index>(v);
    Mat3 b = ps_a.middleRows(r, 3) * p_a.middleRows(r, 3).transpose();
    if (p_b != nullptr) b += ps_b.middleRows(r, 3) * p_b->middleRows(r, 3).transpose();
    blocks[static_cast<size_t>(v)] = 0.5 * (b + b.transpose());
  }
  return blocks;
}

}  // namespace detail

/// Raw tensor term C x2 w_id x3 w_exp.
inline VecX tensor_product(const MultilinearModel& model, const VecX& w_id, const VecX& w_exp) {
  if (w_id.size() != model.n_id()) throw DimensionError("identity weight length does not match the model");
  return model.contract_expression(w_exp) * w_id;
}

inline VecX synthesize_face(const MultilinearModel& model, const VecX& w_id, const VecX& w_exp) {
  return model.mean_face + tensor_product(model, w_id, w_exp);
}

/// Marginal Gaussian of the face for an arbitrary identity prior (mu_id,
/// sigma_id); the expression prior is the model's. The bilinear residual
/// eps_id x eps_exp term is dropped.
inline FaceDistribution marginalize(const MultilinearModel& model, const VecX& mu_id, const MatX& sigma_id) {
  if (mu_id.size() != model.n_id() || sigma_id.rows() != model.n_id() || sigma_id.cols() != model.n_id())
    throw DimensionError("identity prior dimensions disagree with the model");
  FaceDistribution d;
  d.p_id = model.contract_expression(model.mu_exp);
  d.p_exp = model.contract_identity(mu_id);
  d.mu = model.mean_face + d.p_id * mu_id;
  d.sigma_blocks = detail::diagonal_blocks(d.p_id, sigma_id, &d.p_exp, &model.sigma_exp);
  d.triangles = model.triangles;
  d.normals = vertex_normals(d.mu, d.triangles);
  return d;
}

inline FaceDistribution marginalize(const MultilinearModel& model) {
  return marginalize(model, model.mu_id, model.sigma_id);
}

/// Face distribution conditioned on a fixed identity weight: mean
/// f_bar + P_id w_id, covariance from expression uncertainty only.
inline FaceDistribution identity_conditioned(const MultilinearModel& model, const VecX& w_id) {
  if (w_id.size() != model.n_id()) throw DimensionError("identity weight length does not match the model");
  FaceDistribution d;
  d.p_id = model.contract_expression(model.mu_exp);
  d.p_exp = model.contract_identity(model.mu_id);
  d.mu = model.mean_face + d.p_id * w_id;
  d.sigma_blocks = detail::diagonal_blocks(d.p_exp, model.sigma_exp, nullptr, nullptr);
  d.triangles = model.triangles;
  d.normals = vertex_normals(d.mu, d.triangles);
  return d;
}

struct FacePriors {
  VecX mu_id;
  MatX sigma_id;
  VecX mu_exp;
  MatX sigma_exp;
};

/// Priors implied by one-hot training labels: mu = U^T 1 / n_train and
/// Sigma = I / n_kept (for an untruncated model n_kept == n_train).
inline FacePriors estimate_hyperparameters(const MultilinearModel& model) {
  FacePriors p;
  const auto n_train_id = static_cast<double>(model.u_id.rows());
  const auto n_train_exp = static_cast<double>(model.u_exp.rows());
  p.mu_id = model.u_id.transpose() * VecX::Ones(model.u_id.rows()) / n_train_id;
  p.mu_exp = model.u_exp.transpose() * VecX::Ones(model.u_exp.rows()) / n_train_exp;
  p.sigma_id = MatX::Identity(model.n_id(), model.n_id()) / static_cast<double>(model.n_id());
  p.sigma_exp = MatX::Identity(model.n_exp(), model.n_exp()) / static_cast<double>(model.n_exp());
  return p;
}

inline void apply_priors(MultilinearModel& model, const FacePriors& p) {
  model.mu_id = p.mu_id;
  model.sigma_id = p.sigma_id;
  model.mu_exp = p.mu_exp;
  model.sigma_exp = p.sigma_exp;
}

/// Training meshes on a complete identity x expression grid.
struct MeshGrid {
  int n_id = 0;
  int n_exp = 0;
  std::vector<VecX> meshes;  // index i + n_id * j
  std::vector<Triangle> triangles;

  const VecX& at(int i, int j) const { return meshes[static_cast<size_t>(i + n_id * j)]; }
  VecX& at(int i, int j) { return meshes[static_cast<size_t>(i + n_id * j)]; }
};

namespace detail {

/// Left singular vectors of an unfolding from its Gram matrix, sorted by
/// decreasing singular value.
inline MatX leading_factor(const MatX& gram) {
  Eigen::SelfAdjointEigenSolver<MatX> es(gram);
  const Eigen::Index n = gram.rows();
  MatX u(n, n);
  for (Eigen::Index c = 0; c < n; ++c) u.col(c) = es.eigenvectors().col(n - 1 - c);
  // Sign convention: largest-magnitude entry of each column positive.
  for (Eigen::Index c = 0; c < n; ++c) {
    Eigen::Index idx;
    u.col(c).cwiseAbs().maxCoeff(&idx);
    if (u(idx, c) < 0) u.col(c) = -u.col(c);
  }
  return u;
}

}  // namespace detail

/// Full HOSVD of a training grid along identity and expression modes.
inline MultilinearModel build_from_corpus(const MeshGrid& grid) {
  if (grid.n_id < 1 || grid.n_exp < 1 || grid.meshes.size() != static_cast<size_t>(grid.n_id) * grid.n_exp)
    throw DimensionError("training grid is incomplete");
  const Eigen::Index rows = grid.meshes.front().size();
  if (rows == 0 || rows % 3 != 0) throw DimensionError("training meshes must hold 3N coordinates");
  for (const auto& m : grid.meshes)
    if (m.size() != rows) throw DimensionError("training meshes have inconsistent vertex counts");

  MultilinearModel model;
  model.triangles = grid.triangles;
  model.mean_face = VecX::Zero(rows);
  for (const auto& m : grid.meshes) model.mean_face += m;
  model.mean_face /= static_cast<double>(grid.meshes.size());

  // Offsets T(:, i, j), unfolded like the core.
  MatX t(rows, static_cast<Eigen::Index>(grid.n_id) * grid.n_exp);
  for (int j = 0; j < grid.n_exp; ++j)
    for (int i = 0; i < grid.n_id; ++i) t.col(i + static_cast<Eigen::Index>(grid.n_id) * j) = grid.at(i, j) - model.mean_face;

  // Gram matrices of the mode-2 and mode-3 unfoldings.
  MatX gram_id = MatX::Zero(grid.n_id, grid.n_id);
  MatX gram_exp = MatX::Zero(grid.n_exp, grid.n_exp);
  for (int j = 0; j < grid.n_exp; ++j) {
    const auto slab = t.middleCols(static_cast<Eigen::Index>(j) * grid.n_id, grid.n_id);
    gram_id.noalias() += slab.transpose() * slab;
  }
  for (int a = 0; a < grid.n_exp; ++a) {
    for (int b = a; b < grid.n_exp; ++b) {
      double s = 0;
      for (int i = 0; i < grid.n_id; ++i)
        s += t.col(i + static_cast<Eigen::Index>(grid.n_id) * a).dot(t.col(i + static_cast<Eigen::Index>(grid.n_id) * b));
      gram_exp(a, b) = gram_exp(b, a) = s;
    }
  }
  model.u_id = detail::leading_factor(gram_id);
  model.u_exp = detail::leading_factor(gram_exp);

  // C(:, p, q) = sum_{i,j} T(:, i, j) U_id(i, p) U_exp(j, q).
  MatX half(rows, static_cast<Eigen::Index>(grid.n_id) * grid.n_exp);
  for (int j = 0; j < grid.n_exp; ++j) {
    half.middleCols(static_cast<Eigen::Index>(j) * grid.n_id, grid.n_id).noalias() =
        t.middleCols(static_cast<Eigen::Index>(j) * grid.n_id, grid.n_id) * model.u_id;
  }
  model.core = MatX::Zero(rows, half.cols());
  for (int q = 0; q < grid.n_exp; ++q)
    for (int j = 0; j < grid.n_exp; ++j)
      model.core.middleCols(static_cast<Eigen::Index>(q) * grid.n_id, grid.n_id) +=
          model.u_exp(j, q) * half.middleCols(static_cast<Eigen::Index>(j) * grid.n_id, grid.n_id);

  apply_priors(model, estimate_hyperparameters(model));
  return model;
}

/// Keeps the leading identity/expression components and re-estimates priors
/// at the kept dimensions.
inline MultilinearModel truncate(const MultilinearModel& model, int n_id_keep, int n_exp_keep) {
  if (n_id_keep < 1 || n_id_keep > model.n_id() || n_exp_keep < 1 || n_exp_keep > model.n_exp())
    throw DomainError("truncation sizes must lie in [1, model dimension]");
  MultilinearModel out;
  out.mean_face = model.mean_face;
  out.triangles = model.triangles;
  out.u_id = model.u_id.leftCols(n_id_keep);
  out.u_exp = model.u_exp.leftCols(n_exp_keep);
  out.core.resize(model.core.rows(), static_cast<Eigen::Index>(n_id_keep) * n_exp_keep);
  for (int j = 0; j < n_exp_keep; ++j)
    out.core.middleCols(static_cast<Eigen::Index>(j) * n_id_keep, n_id_keep) =
        model.core.middleCols(static_cast<Eigen::Index>(j) * model.n_id(), n_id_keep);
  apply_priors(out, estimate_hyperparameters(out));
  return out;
}

/// Identity weight of training identity `i`: U_id^T e_i.
inline VecX training_identity_weight(const MultilinearModel& model, int i) { return model.u_id.row(i).transpose(); }
inline VecX training_expression_weight(const MultilinearModel& model, int j) { return model.u_exp.row(j).transpose(); }

}  // namespace facetrack
