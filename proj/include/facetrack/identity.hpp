#pragma once

// Online identity adaptation: per-frame identity estimates weighted by a
// visibility confidence feed Normal-Inverse-Wishart posteriors, one per
// person, and each clip is routed to the most probable stored model.

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "facetrack/errors.hpp"
#include "facetrack/face_model.hpp"
#include "facetrack/visibility.hpp"

namespace facetrack {

inline constexpr double kCovarianceJitter = 1e-8;

/// NIW posterior {m, beta, psi, nu} over an identity Gaussian, plus the
/// person's log-scale.
struct IdentityModel {
  VecX m;
  double beta = 1.0;
  MatX psi;
  double nu = 0.0;
  double alpha = 0.0;

  int dim() const { return static_cast<int>(m.size()); }

  void validate() const {
    const Eigen::Index d = m.size();
    if (d == 0) throw DimensionError("identity model has no dimensions");
    if (psi.rows() != d || psi.cols() != d) throw DimensionError("identity scale matrix does not match the mean");
    if (!(beta > 0)) throw DomainError("identity model beta must be positive");
    if (!(nu > static_cast<double>(d) + 1)) throw DomainError("identity model nu must exceed dimension + 1");
    if (!psi.isApprox(psi.transpose(), 1e-12)) throw DomainError("identity scale matrix is not symmetric");
    Eigen::LLT<MatX> llt(psi);
    if (llt.info() != Eigen::Success) throw DomainError("identity scale matrix is not positive definite");
  }

  bool operator==(const IdentityModel&) const = default;
};

struct IdentitySample {
  VecX w_id;
  double kappa = 0.0;
  double alpha = 0.0;  // tracked log-scale of the frame the sample came from
};

/// Stored models plus the generic prior. present_index 0 is the generic
/// model, k >= 1 is models[k - 1].
struct IdentityStore {
  IdentityModel generic;
  std::vector<IdentityModel> models;
  int present_index = 0;

  int size() const { return static_cast<int>(models.size()); }

  const IdentityModel& at(int k) const {
    if (k < 0 || k > size()) throw DomainError("identity index out of range");
    return k == 0 ? generic : models[static_cast<size_t>(k - 1)];
  }
  const IdentityModel& present() const { return at(present_index); }

  bool operator==(const IdentityStore&) const = default;
};

/// NIW prior whose expected identity is exactly the model's (mu_id, sigma_id).
inline IdentityModel generic_identity(const MultilinearModel& model) {
  const int d = model.n_id();
  IdentityModel g;
  g.m = model.mu_id;
  g.beta = 1.0;
  g.nu = d + 3.0;
  g.psi = model.sigma_id * (g.nu - d - 1);
  g.alpha = 0.0;
  return g;
}

inline IdentityStore make_store(const MultilinearModel& model) {
  IdentityStore s;
  s.generic = generic_identity(model);
  return s;
}

struct ExpectedIdentity {
  VecX mu;
  MatX sigma;
};

inline ExpectedIdentity expected_identity(const IdentityModel& model) {
  const double dof = model.nu - model.dim() - 1;
  if (!(dof > 0)) throw DomainError("expected identity covariance is undefined for nu <= dimension + 1");
  return {model.m, model.psi / dof};
}

/// Conjugate update with kappa-weighted samples. Zero total weight is a no-op.
inline IdentityModel niw_update(const IdentityModel& model, const std::vector<IdentitySample>& samples) {
  double n_c = 0;
  for (const auto& s : samples) {
    if (s.w_id.size() != model.m.size()) throw DimensionError("identity sample length does not match the model");
    if (s.kappa < 0 || s.kappa > 1) throw DomainError("identity sample confidence outside [0, 1]");
    n_c += s.kappa;
  }
  if (n_c <= 0) return model;

  VecX w_bar = VecX::Zero(model.m.size());
  for (const auto& s : samples) w_bar += s.kappa * s.w_id;
  w_bar /= n_c;
  MatX scatter = MatX::Zero(model.m.size(), model.m.size());
  for (const auto& s : samples) {
    const VecX d = s.w_id - w_bar;
    scatter.noalias() += s.kappa * d * d.transpose();
  }

  IdentityModel out = model;
  const VecX diff = w_bar - model.m;
  out.m = (n_c * w_bar + model.beta * model.m) / (n_c + model.beta);
  out.psi = model.psi + scatter + (model.beta * n_c / (model.beta + n_c)) * diff * diff.transpose();
  out.psi = (0.5 * (out.psi + out.psi.transpose())).eval();
  out.beta = model.beta + n_c;
  out.nu = model.nu + n_c;
  return out;
}

/// Fraction of model vertices labelled visible.
inline double confidence(const VisibilityLabels& labels) {
  if (labels.gamma.empty()) return 0.0;
  return static_cast<double>(labels.visible()) / static_cast<double>(labels.gamma.size());
}

inline double gaussian_log_density(const VecX& x, const VecX& mu, const MatX& sigma) {
  const MatX reg = sigma + kCovarianceJitter * MatX::Identity(sigma.rows(), sigma.cols());
  Eigen::LLT<MatX> llt(reg);
  if (llt.info() != Eigen::Success) throw DomainError("identity covariance is not positive definite");
  const VecX z = llt.matrixL().solve(x - mu);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (z.squaredNorm() + log_det + static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi));
}

/// Log of p_{I_k}(w) for k = 0 (generic) .. K.
inline std::vector<double> switch_log_densities(const VecX& w_id, const IdentityStore& store) {
  std::vector<double> out;
  out.reserve(store.models.size() + 1);
  for (int k = 0; k <= store.size(); ++k) {
    const auto e = expected_identity(store.at(k));
    out.push_back(gaussian_log_density(w_id, e.mu, e.sigma));
  }
  return out;
}

/// Normalized switch posterior over {I_0, I_1, ..., I_K}.
inline std::vector<double> switch_posterior(const VecX& w_id, const IdentityStore& store) {
  auto lp = switch_log_densities(w_id, store);
  double top = -std::numeric_limits<double>::infinity();
  for (double v : lp) top = std::max(top, v);
  double total = 0;
  for (double& v : lp) total += (v = std::exp(v - top));
  for (double& v : lp) v /= total;
  return lp;
}

inline int argmax_index(const std::vector<double>& v) {
  int best = 0;
  for (size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[static_cast<size_t>(best)]) best = static_cast<int>(k);
  return best;
}

/// Most probable model for `w_id`; 0 means a new identity.
inline int switch_identity(const VecX& w_id, const IdentityStore& store) {
  return argmax_index(switch_log_densities(w_id, store));
}

/// Per-sample assignment against the store as it was before the clip.
inline std::vector<int> assign_samples(const IdentityStore& store, const std::vector<IdentitySample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(switch_identity(s.w_id, store));
  return out;
}

namespace detail {

// Running kappa-weighted mean of tracked scales; the weight already folded
// in is the model's pseudo-count beyond the generic prior.
inline void update_alpha(IdentityModel& updated, const IdentityModel& before, double prior_beta,
                         const std::vector<IdentitySample>& samples) {
  double w = std::max(0.0, before.beta - prior_beta);
  double acc = before.alpha * w;
  for (const auto& s : samples) {
    acc += s.kappa * s.alpha;
    w += s.kappa;
  }
  if (w > 0) updated.alpha = acc / w;
}

}  // namespace detail

/// One adaptation round over a clip's samples.
inline IdentityStore adapt_clip(const IdentityStore& store, const std::vector<IdentitySample>& samples) {
  if (samples.empty()) return store;
  const std::vector<int> assignment = assign_samples(store, samples);
  std::vector<std::vector<IdentitySample>> clusters(static_cast<size_t>(store.size()) + 1);
  for (size_t i = 0; i < samples.size(); ++i) clusters[static_cast<size_t>(assignment[i])].push_back(samples[i]);

  IdentityStore out = store;
  const double prior_beta = store.generic.beta;
  for (int k = 1; k <= store.size(); ++k) {
    const auto& c = clusters[static_cast<size_t>(k)];
    if (c.empty()) continue;
    IdentityModel& target = out.models[static_cast<size_t>(k - 1)];
    const IdentityModel before = target;
    target = niw_update(before, c);
    detail::update_alpha(target, before, prior_beta, c);
  }
  int new_index = -1;
  if (!clusters[0].empty()) {
    IdentityModel fresh = niw_update(store.generic, clusters[0]);
    detail::update_alpha(fresh, store.generic, prior_beta, clusters[0]);
    out.models.push_back(std::move(fresh));
    new_index = out.size();
  }
  const int last = assignment.back();
  out.present_index = last == 0 ? new_index : last;
  return out;
}

/// Mean squared per-vertex displacement between consecutive adapted faces
/// falls below `tol` (mm^2).
inline bool adaptation_converged(const VecX& prev_face, const VecX& new_face, double tol = 1.0) {
  if (prev_face.size() != new_face.size() || prev_face.size() % 3 != 0)
    throw DimensionError("adapted faces have different vertex counts");
  if (prev_face.size() == 0) return true;
  const double mse = (new_face - prev_face).squaredNorm() / static_cast<double>(prev_face.size() / 3);
  return mse < tol;
}

/// Mean face f_bar + P_id m of an identity model (model frame, no scale).
inline VecX adapted_face(const MultilinearModel& model, const IdentityModel& identity) {
  return model.mean_face + model.contract_expression(model.mu_exp) * identity.m;
}

/// Working face distribution for tracking under an identity model.
inline FaceDistribution adapted_distribution(const MultilinearModel& model, const IdentityModel& identity) {
  const auto e = expected_identity(identity);
  return marginalize(model, e.mu, e.sigma);
}

/// Model quantities reused by every identity estimate.
struct IdentityBasis {
  VecX mean_face;
  MatX p_id;                       // 3N x n_id, C x3 mu_exp
  std::vector<Mat3> expression_blocks;  // per-vertex covariance of the expression-conditioned face
  VecX prior_mu;
  MatX prior_precision;
};

inline IdentityBasis make_identity_basis(const MultilinearModel& model) {
  IdentityBasis b;
  b.mean_face = model.mean_face;
  b.p_id = model.contract_expression(model.mu_exp);
  const MatX p_exp = model.contract_identity(model.mu_id);
  b.expression_blocks = detail::diagonal_blocks(p_exp, model.sigma_exp, nullptr, nullptr);
  b.prior_mu = model.mu_id;
  const MatX reg = model.sigma_id + kCovarianceJitter * MatX::Identity(model.n_id(), model.n_id());
  b.prior_precision = reg.llt().solve(MatX::Identity(model.n_id(), model.n_id()));
  return b;
}

struct IdentityOptions {
  size_t min_visible_rays = 50;
  double sigma_o_sq = 25.0;
};

/// Normal equations A w = b of the regularized identity least squares.
struct IdentitySystem {
  MatX a;
  VecX b;
  size_t visible = 0;
};

namespace detail {

template <typename F>
void for_each_identity_ray(const std::vector<RayCorrespondence>& rays, const VisibilityLabels& labels,
                           const Pose& pose, const IdentityBasis& basis, double sigma_o_sq, F&& f) {
  if (labels.gamma.size() != rays.size()) throw DimensionError("labels and rays differ in length");
  const Mat3 r = pose.rotation();
  const double a = pose.scale();
  for (size_t i = 0; i < rays.size(); ++i) {
    if (labels.gamma[i] != Visibility::visible) continue;
    const auto& ray = rays[i];
    const Eigen::Index row = 3 * static_cast<Eigen::Index>(ray.vertex);
    if (row + 3 > basis.p_id.rows()) throw DimensionError("ray vertex outside the identity basis");
    const Eigen::Matrix<double, 3, Eigen::Dynamic> j = a * r * basis.p_id.middleRows(row, 3);
    const Vec3 c = a * r * basis.mean_face.segment<3>(row) + pose.t;
    const Mat3 cov = a * a * r * basis.expression_blocks[static_cast<size_t>(ray.vertex)] * r.transpose();
    const double s2 = sigma_o_sq + ray.normal.dot(cov * ray.normal);
    const Mat3 w3 = (cov + (sigma_o_sq + kCovarianceJitter) * Mat3::Identity()).inverse();
    f(ray, j, c, s2, w3);
  }
}

}  // namespace detail

inline IdentitySystem identity_system(const std::vector<RayCorrespondence>& rays, const VisibilityLabels& labels,
                                      const Pose& pose, const IdentityBasis& basis, const IdentityOptions& opts = {}) {
  IdentitySystem sys;
  sys.a = basis.prior_precision;
  sys.b = basis.prior_precision * basis.prior_mu;
  detail::for_each_identity_ray(rays, labels, pose, basis, opts.sigma_o_sq,
                                [&](const RayCorrespondence& ray, const auto& j, const Vec3& c, double s2, const Mat3& w3) {
                                  const Eigen::RowVectorXd jn = ray.normal.transpose() * j;
                                  const Vec3 gap = ray.p - c;
                                  sys.a.noalias() += jn.transpose() * jn / s2;
                                  sys.b.noalias() += jn.transpose() * (ray.normal.dot(gap) / s2);
                                  const MatX wj = w3 * j;
                                  sys.a.noalias() += j.transpose() * wj;
                                  sys.b.noalias() += wj.transpose() * gap;
                                  ++sys.visible;
                                });
  sys.a = (0.5 * (sys.a + sys.a.transpose())).eval();
  return sys;
}

/// Negative log posterior of w_id up to a constant.
inline double identity_objective(const VecX& w_id, const std::vector<RayCorrespondence>& rays,
                                 const VisibilityLabels& labels, const Pose& pose, const IdentityBasis& basis,
                                 const IdentityOptions& opts = {}) {
  const VecX dw = w_id - basis.prior_mu;
  double total = 0.5 * dw.dot(basis.prior_precision * dw);
  detail::for_each_identity_ray(rays, labels, pose, basis, opts.sigma_o_sq,
                                [&](const RayCorrespondence& ray, const auto& j, const Vec3& c, double s2, const Mat3& w3) {
                                  const Vec3 res = j * w_id + c - ray.p;
                                  const double y = ray.normal.dot(res);
                                  total += y * y / (2 * s2) + 0.5 * res.dot(w3 * res);
                                });
  return total;
}

struct IdentityEstimate {
  VecX w_id;
  size_t visible = 0;
  bool confident = false;  // enough visible rays to constrain the estimate
};

inline IdentityEstimate estimate_wid(const std::vector<RayCorrespondence>& rays, const VisibilityLabels& labels,
                                     const Pose& pose, const IdentityBasis& basis, const IdentityOptions& opts = {}) {
  const IdentitySystem sys = identity_system(rays, labels, pose, basis, opts);
  IdentityEstimate e;
  e.visible = sys.visible;
  e.confident = sys.visible >= opts.min_visible_rays;
  if (sys.visible == 0) {
    e.w_id = basis.prior_mu;
    return e;
  }
  Eigen::LLT<MatX> llt(sys.a);
  if (llt.info() == Eigen::Success) {
    e.w_id = llt.solve(sys.b);
  } else {
    e.w_id = sys.a.ldlt().solve(sys.b);
  }
  return e;
}

inline IdentityEstimate estimate_wid(const std::vector<RayCorrespondence>& rays, const VisibilityLabels& labels,
                                     const Pose& pose, const MultilinearModel& model, const IdentityOptions& opts = {}) {
  return estimate_wid(rays, labels, pose, make_identity_basis(model), opts);
}

}  // namespace facetrack
