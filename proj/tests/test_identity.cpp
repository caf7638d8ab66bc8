#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "facetrack/identity.hpp"
#include "facetrack/identity_io.hpp"
#include "facetrack/synth.hpp"
#include "test_support.hpp"

using namespace facetrack;
using facetrack::fixtures::tracking_model;

namespace {

IdentityModel small_prior(int d, double scale = 1.0) {
  IdentityModel m;
  m.m = VecX::LinSpaced(d, -1, 1);
  m.beta = 1;
  m.nu = d + 3;
  m.psi = MatX::Identity(d, d) * 2 * scale;
  return m;
}

std::vector<IdentitySample> random_samples(std::mt19937_64& rng, int n, int d) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<IdentitySample> out;
  for (int i = 0; i < n; ++i) {
    VecX w(d);
    for (int j = 0; j < d; ++j) w(j) = g(rng);
    out.push_back({w, u(rng), 0.0});
  }
  return out;
}

void expect_models_near(const IdentityModel& a, const IdentityModel& b, double tol) {
  EXPECT_LT((a.m - b.m).cwiseAbs().maxCoeff(), tol);
  EXPECT_LT((a.psi - b.psi).cwiseAbs().maxCoeff(), tol * std::max(1.0, a.psi.cwiseAbs().maxCoeff()));
  EXPECT_NEAR(a.beta, b.beta, tol * a.beta);
  EXPECT_NEAR(a.nu, b.nu, tol * a.nu);
}

VisibilityLabels labels_of(std::initializer_list<Visibility> v) {
  VisibilityLabels l;
  l.gamma.assign(v);
  return l;
}

// Rays and labels from a render of identity w at `pose`, matched with that
// identity's mean shape so correspondences are exact up to rasterization.
struct RenderedIdentity {
  DepthFrame frame;
  std::vector<RayCorrespondence> rays;
  VisibilityLabels labels;
};

RenderedIdentity render_identity(const VecX& w, const Pose& pose) {
  const auto& model = tracking_model();
  SyntheticScene s = fixtures::frontal_scene(model, pose);
  s.w_id = w;
  RenderedIdentity r;
  r.frame = render_scene(model, s).frames[0];
  const FaceDistribution dist = identity_conditioned(model, w);
  r.rays = correspond(dist, pose, r.frame, CameraIntrinsics{});
  r.labels = classify_visibility(r.rays, pose, dist, RvsParams{});
  return r;
}

}  // namespace

TEST(Confidence, Examples) {
  using V = Visibility;
  EXPECT_EQ(confidence(labels_of({V::visible, V::visible, V::visible})), 1.0);
  EXPECT_EQ(confidence(labels_of({V::occluded, V::occluded})), 0.0);
  EXPECT_EQ(confidence(labels_of({V::visible, V::occluded, V::visible, V::excluded})), 0.5);
  EXPECT_EQ(confidence(labels_of({V::visible, V::excluded})), 0.5);
}

TEST(EstimateWid, RecoversRenderedTrainingIdentityShape) {
  // Weakest identity directions move the face by a few millimetres in total
  // and stay prior-dominated at sigma_o^2 = 25, so recovery is measured on
  // the mean face they produce.
  const auto& model = tracking_model();
  const IdentityBasis basis = make_identity_basis(model);
  const Pose pose{Vec3::Zero(), Vec3(0, 0, 900), 0};
  auto rms = [&](const VecX& dw) { return std::sqrt((basis.p_id * dw).squaredNorm() / model.vertex_count()); };
  for (int i : {0, 5, 17}) {
    const VecX truth = training_identity_weight(model, i);
    const auto r = render_identity(truth, pose);
    const auto e = estimate_wid(r.rays, r.labels, pose, basis);
    EXPECT_TRUE(e.confident);
    EXPECT_GT(e.visible, 500u);
    EXPECT_LT(rms(e.w_id - truth), 1.0) << "identity " << i;
    EXPECT_LT(rms(e.w_id - truth), 0.2 * rms(model.mu_id - truth)) << "identity " << i;
  }
}

TEST(EstimateWid, NoVisibleRaysReturnsPriorMean) {
  const auto& model = tracking_model();
  const Pose pose{Vec3::Zero(), Vec3(0, 0, 900), 0};
  auto r = render_identity(model.mu_id, pose);
  std::fill(r.labels.gamma.begin(), r.labels.gamma.end(), Visibility::occluded);
  const auto e = estimate_wid(r.rays, r.labels, pose, model);
  EXPECT_EQ(e.visible, 0u);
  EXPECT_FALSE(e.confident);
  EXPECT_EQ(e.w_id, model.mu_id);
}

TEST(EstimateWid, FewVisibleRaysAreLowConfidence) {
  const auto& model = tracking_model();
  const Pose pose{Vec3::Zero(), Vec3(0, 0, 900), 0};
  auto r = render_identity(model.mu_id, pose);
  int kept = 0;
  for (auto& g : r.labels.gamma)
    if (g == Visibility::visible && ++kept > 20) g = Visibility::occluded;
  EXPECT_FALSE(estimate_wid(r.rays, r.labels, pose, model).confident);
}

TEST(EstimateWid, SatisfiesNormalEquations) {
  const auto& model = tracking_model();
  const IdentityBasis basis = make_identity_basis(model);
  const Pose pose{rotation_vector(rotation_from_euler({0.2, -0.1, 0.05})), Vec3(20, -10, 950), 0.02};
  const auto r = render_identity(training_identity_weight(model, 9), pose);
  const auto e = estimate_wid(r.rays, r.labels, pose, basis);
  const IdentitySystem sys = identity_system(r.rays, r.labels, pose, basis);
  EXPECT_LT((sys.a * e.w_id - sys.b).norm(), 1e-8 * sys.b.norm());

  // Independent check on the objective itself: the central-difference
  // gradient vanishes at the estimate relative to its size at the prior mean.
  auto grad = [&](const VecX& w) {
    VecX g(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      VecX p = w, m = w;
      p(i) += 1e-3;
      m(i) -= 1e-3;
      g(i) = (identity_objective(p, r.rays, r.labels, pose, basis) - identity_objective(m, r.rays, r.labels, pose, basis)) / 2e-3;
    }
    return g;
  };
  EXPECT_LT(grad(e.w_id).norm(), 1e-6 * grad(model.mu_id).norm());
}

TEST(Niw, SampleAtPriorMean) {
  const IdentityModel m = small_prior(4);
  const IdentityModel u = niw_update(m, {{m.m, 1.0, 0.0}});
  EXPECT_EQ(u.m, m.m);
  EXPECT_EQ(u.psi, m.psi);
  EXPECT_EQ(u.beta, m.beta + 1);
  EXPECT_EQ(u.nu, m.nu + 1);
}

TEST(Niw, ZeroWeightIsNoOp) {
  const IdentityModel m = small_prior(3);
  EXPECT_EQ(niw_update(m, {{VecX::Ones(3), 0.0, 0.0}}), m);
  EXPECT_EQ(niw_update(m, {}), m);
}

TEST(Niw, SequentialEqualsBatch) {
  std::mt19937_64 rng(11);
  const int d = 6;
  const IdentityModel prior = small_prior(d);
  for (int trial = 0; trial < 25; ++trial) {
    const auto samples = random_samples(rng, 40, d);
    const IdentityModel batch = niw_update(prior, samples);
    IdentityModel seq = prior;
    size_t pos = 0;
    std::uniform_int_distribution<size_t> chunk(1, 9);
    while (pos < samples.size()) {
      const size_t end = std::min(samples.size(), pos + chunk(rng));
      seq = niw_update(seq, {samples.begin() + static_cast<std::ptrdiff_t>(pos), samples.begin() + static_cast<std::ptrdiff_t>(end)});
      pos = end;
    }
    expect_models_near(seq, batch, 1e-9);
  }
}

TEST(Niw, PsiStaysPositiveDefiniteAndCountsGrow) {
  std::mt19937_64 rng(12);
  IdentityModel m = small_prior(5, 1e-3);
  for (int round = 0; round < 20; ++round) {
    const auto s = random_samples(rng, 3, 5);
    double n_c = 0;
    for (const auto& x : s) n_c += x.kappa;
    const IdentityModel next = niw_update(m, s);
    EXPECT_NEAR(next.beta - m.beta, n_c, 1e-12);
    EXPECT_NEAR(next.nu - m.nu, n_c, 1e-12);
    EXPECT_EQ(next.psi, next.psi.transpose());
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<MatX>(next.psi).eigenvalues().minCoeff(), 0.0);
    EXPECT_NO_THROW(next.validate());
    m = next;
  }
}

TEST(Niw, ExpectationConvergesToSampleStatistics) {
  const int d = 4;
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g;
  MatX l(d, d);
  l << 1.0, 0, 0, 0, 0.3, 0.8, 0, 0, -0.2, 0.1, 0.5, 0, 0.4, -0.3, 0.2, 1.2;
  const VecX mu = VecX::LinSpaced(d, 2, -1);
  std::vector<IdentitySample> samples;
  for (int i = 0; i < 10000; ++i) {
    VecX z(d);
    for (int j = 0; j < d; ++j) z(j) = g(rng);
    samples.push_back({mu + l * z, 0.7, 0.0});
  }
  VecX mean = VecX::Zero(d);
  for (const auto& s : samples) mean += s.w_id;
  mean /= static_cast<double>(samples.size());
  MatX cov = MatX::Zero(d, d);
  for (const auto& s : samples) cov += (s.w_id - mean) * (s.w_id - mean).transpose();
  cov /= static_cast<double>(samples.size());

  const auto e = expected_identity(niw_update(small_prior(d), samples));
  EXPECT_LT((e.mu - mean).norm(), 0.05 * mean.norm());
  EXPECT_LT((e.sigma - cov).norm(), 0.05 * cov.norm());
}

TEST(ExpectedIdentity, GenericReproducesModelPrior) {
  const auto& model = tracking_model();
  const auto e = expected_identity(generic_identity(model));
  EXPECT_EQ(e.mu, model.mu_id);
  EXPECT_EQ(e.sigma, model.sigma_id);
}

TEST(ExpectedIdentity, ContractsWithTightSamples) {
  const auto& model = tracking_model();
  const IdentityModel g = generic_identity(model);
  std::mt19937_64 rng(14);
  std::normal_distribution<double> n(0, 1e-3);
  std::vector<IdentitySample> s;
  for (int i = 0; i < 50; ++i) {
    VecX w = training_identity_weight(model, 2);
    for (Eigen::Index j = 0; j < w.size(); ++j) w(j) += n(rng);
    s.push_back({w, 0.9, 0.0});
  }
  const auto e = expected_identity(niw_update(g, s));
  EXPECT_LT(e.sigma.trace(), expected_identity(g).sigma.trace());
  EXPECT_EQ(e.sigma, e.sigma.transpose());
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<MatX>(e.sigma).eigenvalues().minCoeff(), 0.0);
}

TEST(ExpectedIdentity, UndefinedForSmallNu) {
  IdentityModel m = small_prior(3);
  m.nu = 4;
  EXPECT_THROW(expected_identity(m), DomainError);
  EXPECT_THROW(m.validate(), DomainError);
}

namespace {

// Store with the generic prior and three identities adapted on tight samples.
IdentityStore three_identity_store(std::vector<VecX>* centers = nullptr) {
  const auto& model = tracking_model();
  IdentityStore store = make_store(model);
  for (int i : {1, 7, 20}) {
    const VecX w = training_identity_weight(model, i);
    store.models.push_back(niw_update(store.generic, std::vector<IdentitySample>(30, {w, 0.8, 0.0})));
    if (centers) centers->push_back(w);
  }
  return store;
}

}  // namespace

TEST(Switch, OwnMeanSelectsOwnModel) {
  std::vector<VecX> c;
  const IdentityStore store = three_identity_store(&c);
  for (int k = 1; k <= 3; ++k) EXPECT_EQ(switch_identity(store.models[static_cast<size_t>(k - 1)].m, store), k);
}

TEST(Switch, FarSampleSelectsGeneric) {
  std::vector<VecX> c;
  const IdentityStore store = three_identity_store(&c);
  // Offset from the prior mean orthogonal to every stored identity's
  // displacement; adapted models stay broad along those displacements.
  const VecX& mu = tracking_model().mu_id;
  VecX u = VecX::Ones(mu.size());
  std::vector<VecX> basis;
  for (const auto& x : c) {
    VecX d = x - mu;
    for (const auto& b : basis) d -= d.dot(b) * b;
    basis.push_back(d.normalized());
  }
  for (const auto& b : basis) u -= u.dot(b) * b;
  const VecX w = mu + 0.5 * u.normalized();
  for (int k = 1; k <= 3; ++k) {
    const auto e = expected_identity(store.at(k));
    const VecX d = w - e.mu;
    EXPECT_GT(std::sqrt(d.dot(e.sigma.ldlt().solve(d))), 5.0);
  }
  // Oracle: Gaussian densities from an explicit inverse and determinant.
  std::vector<double> oracle;
  for (int k = 0; k <= 3; ++k) {
    const auto e = expected_identity(store.at(k));
    const VecX d = w - e.mu;
    oracle.push_back(-0.5 * d.dot(e.sigma.inverse() * d) - 0.5 * std::log(e.sigma.determinant()));
  }
  EXPECT_EQ(argmax_index(oracle), 0);
  EXPECT_EQ(switch_identity(w, store), 0);
}

TEST(Switch, PosteriorIsNormalizedAndSharesTheArgmax) {
  const IdentityStore store = three_identity_store();
  std::mt19937_64 rng(15);
  std::normal_distribution<double> g(0, 0.1);
  for (int t = 0; t < 20; ++t) {
    VecX w = store.models[static_cast<size_t>(t % 3)].m;
    for (Eigen::Index j = 0; j < w.size(); ++j) w(j) += g(rng);
    const auto post = switch_posterior(w, store);
    double total = 0;
    for (double p : post) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
    auto shifted = switch_log_densities(w, store);
    for (double& v : shifted) v += 37.5;
    EXPECT_EQ(argmax_index(post), argmax_index(shifted));
    EXPECT_EQ(argmax_index(post), switch_identity(w, store));
  }
}

TEST(AdaptClip, MatchingSamplesGrowOnlyThatModel) {
  const IdentityStore store = three_identity_store();
  const VecX w = store.models[1].m;
  const IdentityStore out = adapt_clip(store, std::vector<IdentitySample>(5, {w, 0.5, 0.01}));
  EXPECT_EQ(out.size(), 3);
  EXPECT_EQ(out.present_index, 2);
  EXPECT_NEAR(out.models[1].beta, store.models[1].beta + 2.5, 1e-12);
  EXPECT_NEAR(out.models[1].nu, store.models[1].nu + 2.5, 1e-12);
  EXPECT_EQ(out.models[0], store.models[0]);
  EXPECT_EQ(out.models[2], store.models[2]);
  EXPECT_EQ(out.generic, store.generic);
}

TEST(AdaptClip, EmptyClipLeavesStoreUnchanged) {
  const IdentityStore store = three_identity_store();
  EXPECT_EQ(adapt_clip(store, {}), store);
}

TEST(AdaptClip, UnknownSamplesInstantiateOneModel) {
  const auto& model = tracking_model();
  const IdentityStore store = make_store(model);
  const VecX a = training_identity_weight(model, 3);
  const VecX b = training_identity_weight(model, 4);
  const IdentityStore out = adapt_clip(store, {{a, 0.9, 0.1}, {b, 0.9, 0.3}, {a, 0.6, 0.1}});
  EXPECT_EQ(out.size(), 1);
  EXPECT_EQ(out.present_index, 1);
  EXPECT_NEAR(out.models[0].beta, store.generic.beta + 2.4, 1e-12);
  EXPECT_NEAR(out.models[0].alpha, (0.9 * 0.1 + 0.9 * 0.3 + 0.6 * 0.1) / 2.4, 1e-12);
  EXPECT_EQ(out.generic, store.generic);
}

TEST(AdaptClip, AlphaIsRunningWeightedMean) {
  const auto& model = tracking_model();
  const VecX a = training_identity_weight(model, 3);
  IdentityStore s = adapt_clip(make_store(model), std::vector<IdentitySample>(10, {a, 1.0, 0.1}));
  s = adapt_clip(s, std::vector<IdentitySample>(10, {a, 1.0, 0.3}));
  ASSERT_EQ(s.size(), 1);
  EXPECT_NEAR(s.models[0].alpha, 0.2, 1e-12);
}

TEST(AdaptClip, ThreeIdentitiesTwicePassesReassign) {
  const auto& model = tracking_model();
  std::mt19937_64 rng(16);
  std::normal_distribution<double> g(0, 0.01);
  const std::vector<int> who = {2, 11, 25};
  auto clip = [&](int i) {
    std::vector<IdentitySample> s;
    for (int f = 0; f < 12; ++f) {
      VecX w = training_identity_weight(model, i);
      for (Eigen::Index j = 0; j < w.size(); ++j) w(j) += g(rng);
      s.push_back({w, 0.4, 0.0});
    }
    return s;
  };
  IdentityStore store = make_store(model);
  const IdentityModel generic = store.generic;
  for (size_t c = 0; c < 3; ++c) {
    store = adapt_clip(store, clip(who[c]));
    EXPECT_EQ(store.present_index, static_cast<int>(c) + 1);
  }
  EXPECT_EQ(store.size(), 3);
  for (size_t c = 0; c < 3; ++c) {
    const auto s = clip(who[c]);
    for (int k : assign_samples(store, s)) EXPECT_EQ(k, static_cast<int>(c) + 1);
    store = adapt_clip(store, s);
    EXPECT_EQ(store.present_index, static_cast<int>(c) + 1);
  }
  EXPECT_EQ(store.size(), 3);
  EXPECT_EQ(store.generic, generic);
}

TEST(AdaptationConverged, Examples) {
  const VecX a = VecX::LinSpaced(30, 0, 29);
  EXPECT_TRUE(adaptation_converged(a, a));
  VecX b = a;
  for (Eigen::Index v = 0; v < 10; ++v) b(3 * v) += 2.0;
  EXPECT_FALSE(adaptation_converged(a, b, 1.0));
  EXPECT_TRUE(adaptation_converged(a, b, 4.5));
  EXPECT_THROW(adaptation_converged(a, a.head(27)), DimensionError);
}

TEST(AdaptedDistribution, GenericMatchesMarginal) {
  const auto& model = tracking_model();
  const FaceDistribution a = adapted_distribution(model, generic_identity(model));
  const FaceDistribution b = marginalize(model);
  EXPECT_TRUE(a.mu.isApprox(b.mu, 1e-14));
  EXPECT_TRUE(adapted_face(model, generic_identity(model)).isApprox(b.mu, 1e-12));
}

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("facetrack_test_" + name);
}

std::vector<char> bytes_of(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(StoreIo, RoundTripIsExact) {
  IdentityStore s = three_identity_store();
  s.present_index = 2;
  s.models[1].alpha = 0.0375;
  const auto p = temp_path("store.idst");
  save_store(s, p);
  const IdentityStore back = load_store(p);
  EXPECT_EQ(back, s);
  const auto p2 = temp_path("store2.idst");
  save_store(back, p2);
  EXPECT_EQ(bytes_of(p), bytes_of(p2));
  std::filesystem::remove(p);
  std::filesystem::remove(p2);
}

TEST(StoreIo, RejectsBadFiles) {
  const auto p = temp_path("bad.idst");
  {
    std::ofstream out(p, std::ios::binary);
    out << "MLFM1";
  }
  EXPECT_THROW(load_store(p), FormatError);
  save_store(three_identity_store(), p);
  auto bytes = bytes_of(p);
  bytes.resize(bytes.size() - 9);
  {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_store(p), FormatError);
  std::filesystem::remove(p);
  EXPECT_THROW(load_store(p), IoError);
}

TEST(StoreIo, MergeAppendsModels) {
  const IdentityStore a = three_identity_store();
  IdentityStore b = make_store(tracking_model());
  b.models.push_back(a.models[0]);
  const IdentityStore m = merge_stores(a, b);
  EXPECT_EQ(m.size(), 4);
  EXPECT_EQ(m.models[3], a.models[0]);
  IdentityStore other = b;
  other.generic.beta = 2;
  EXPECT_THROW(merge_stores(a, other), DomainError);
}
