// facetrack command-line tool: render synthetic sequences, build models,
// track depth sequences and evaluate pose files.

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "facetrack/config.hpp"
#include "facetrack/identity_io.hpp"
#include "facetrack/model_io.hpp"
#include "facetrack/pipeline.hpp"
#include "facetrack/scene.hpp"

namespace ft = facetrack;
namespace fs = std::filesystem;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kLocalization = 2, kTrackingLost = 3, kIo = 4 };

// The procedural corpus stands in for a model file when none is given.
ft::MultilinearModel model_or_corpus(const std::string& path, uint64_t seed) {
  if (!path.empty()) return ft::load_model(path);
  ft::CorpusOptions o;
  o.seed = seed;
  return ft::build_from_corpus(ft::generate_corpus(o));
}

nlohmann::json identity_json(const ft::IdentityModel& m) {
  nlohmann::json j;
  j["m"] = std::vector<double>(m.m.data(), m.m.data() + m.m.size());
  j["beta"] = m.beta;
  j["nu"] = m.nu;
  j["alpha"] = m.alpha;
  nlohmann::json psi = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.psi.rows(); ++r) {
    std::vector<double> row(static_cast<size_t>(m.psi.cols()));
    for (Eigen::Index c = 0; c < m.psi.cols(); ++c) row[static_cast<size_t>(c)] = m.psi(r, c);
    psi.push_back(row);
  }
  j["psi"] = psi;
  return j;
}

struct RenderArgs {
  std::string scene, out, model;
  std::optional<uint64_t> seed;
};

int cmd_render(const RenderArgs& a) {
  const ft::MultilinearModel model = model_or_corpus(a.model, 1);
  ft::SceneSpec spec = ft::load_scene(a.scene, model);
  if (a.seed) spec.seed = *a.seed;
  const ft::RenderedScene scene = ft::render_scene_spec(model, spec);
  ft::write_rendered_scene(scene, spec, a.out);
  fmt::print("rendered {} frames in {} clip(s) to {}\n", scene.frames.size(), scene.clip_starts.size(), a.out);
  return kOk;
}

struct BuildArgs {
  std::string out;
  uint64_t seed = 1;
  int n_id = 32, n_exp = 10, vertices = 2000;
};

int cmd_build(const BuildArgs& a) {
  ft::CorpusOptions o;
  o.seed = a.seed;
  o.n_id = a.n_id;
  o.n_exp = a.n_exp;
  o.n_vertices = a.vertices;
  const ft::MultilinearModel m = ft::build_from_corpus(ft::generate_corpus(o));
  ft::save_model(m, a.out);
  fmt::print("model: {} vertices, {} identity x {} expression components -> {}\n", m.vertex_count(), m.n_id(), m.n_exp(), a.out);
  return kOk;
}

int cmd_model_inspect(const std::string& path) {
  const ft::MultilinearModel m = ft::load_model(path);
  fmt::print("vertices      {}\ntriangles     {}\nidentity      {} of {} training subjects\nexpression    {} of {} training expressions\n",
             m.vertex_count(), m.triangles.size(), m.n_id(), m.u_id.rows(), m.n_exp(), m.u_exp.rows());
  return kOk;
}

int cmd_model_truncate(const std::string& in, const std::string& out, int n_id, int n_exp) {
  ft::save_model(ft::truncate(ft::load_model(in), n_id, n_exp), out);
  return kOk;
}

struct TrackArgs {
  std::string manifest, model, config, out = "poses.csv", store_out = "identities.idst", store_in, errors_out;
  std::optional<uint64_t> seed;
  bool no_pso = false, no_temporal = false, no_adapt = false, quiet = false, biwi = false;
};

int cmd_track(const TrackArgs& a) {
  ft::PipelineConfig cfg = a.config.empty() ? ft::PipelineConfig{} : ft::load_config(a.config);
  if (a.seed) cfg.track.pso.seed = *a.seed;
  if (a.no_pso) cfg.track.use_pso = false;
  if (a.no_temporal) cfg.track.use_temporal = false;
  if (a.no_adapt) cfg.adaptation.enabled = false;

  std::unique_ptr<ft::FrameSource> source;
  ft::CameraIntrinsics intrinsics;
  std::vector<int> clips;
  std::optional<std::vector<ft::PoseRecord>> truth;
  if (a.biwi) {
    auto seq = ft::load_biwi(a.manifest);
    intrinsics = seq->intrinsics();
    truth = seq->truth();
    source = std::move(seq);
  } else {
    const ft::SequenceManifest manifest = ft::load_manifest(a.manifest);
    source = ft::load_sequence(manifest);
    intrinsics = manifest.intrinsics;
    clips = manifest.clips;
    if (manifest.truth) truth = ft::read_pose_csv(manifest.root / *manifest.truth);
  }
  ft::MultilinearModel model = model_or_corpus(a.model, 1);
  if (model.n_id() != cfg.n_id || model.n_exp() != cfg.n_exp) model = ft::truncate(model, cfg.n_id, cfg.n_exp);
  std::optional<ft::IdentityStore> store;
  if (!a.store_in.empty()) store = ft::load_store(a.store_in);

  const ft::PipelineResult r = ft::run_pipeline(model, *source, intrinsics, cfg, clips, store);
  ft::write_pose_csv(a.out, r.poses);
  ft::save_store(r.store, a.store_out);
  if (!a.quiet) {
    fmt::print("tracked {} frames ({} failed); {} stored identities, present {}\n", r.poses.size(), r.failed_frames,
               r.store.size(), r.store.present_index);
    fmt::print("poses -> {}\nidentities -> {}\n", a.out, a.store_out);
  }
  if (truth) {
    const ft::Metrics m = ft::evaluate(r.poses, *truth);
    fmt::print("yaw {:.3f} deg  pitch {:.3f} deg  roll {:.3f} deg  translation {:.3f} mm\n", m.yaw, m.pitch, m.roll, m.translation);
    if (!a.errors_out.empty()) ft::write_file_atomic(a.errors_out, ft::format_error_csv(m));
  }
  return kOk;
}

int cmd_eval(const std::string& poses, const std::string& truth, const std::string& errors_out) {
  const ft::Metrics m = ft::evaluate(ft::read_pose_csv(poses), ft::read_pose_csv(truth));
  fmt::print("frames {}\nyaw_deg {:.4f}\npitch_deg {:.4f}\nroll_deg {:.4f}\ntranslation_mm {:.4f}\n", m.frames, m.yaw, m.pitch,
             m.roll, m.translation);
  if (!errors_out.empty()) ft::write_file_atomic(errors_out, ft::format_error_csv(m));
  return kOk;
}

int cmd_store_list(const std::string& path) {
  const ft::IdentityStore s = ft::load_store(path);
  fmt::print("dimension {}  models {}  present {}\n", s.generic.dim(), s.size(), s.present_index);
  fmt::print("{:>5} {:>10} {:>10} {:>10} {:>12}\n", "index", "beta", "nu", "alpha", "|m - m0|");
  for (int k = 0; k <= s.size(); ++k) {
    const auto& m = s.at(k);
    fmt::print("{:>5} {:>10.3f} {:>10.3f} {:>10.5f} {:>12.5f}{}\n", k, m.beta, m.nu, m.alpha, (m.m - s.generic.m).norm(),
               k == s.present_index ? "  *" : "");
  }
  return kOk;
}

int cmd_store_export(const std::string& path, const std::string& out) {
  const ft::IdentityStore s = ft::load_store(path);
  nlohmann::json j;
  j["present"] = s.present_index;
  j["generic"] = identity_json(s.generic);
  j["models"] = nlohmann::json::array();
  for (const auto& m : s.models) j["models"].push_back(identity_json(m));
  const std::string text = j.dump(2) + "\n";
  if (out.empty() || out == "-")
    std::fwrite(text.data(), 1, text.size(), stdout);
  else
    ft::write_file_atomic(out, text);
  return kOk;
}

int cmd_store_merge(const std::string& a, const std::string& b, const std::string& out) {
  const ft::IdentityStore s = ft::merge_stores(ft::load_store(a), ft::load_store(b));
  ft::save_store(s, out);
  fmt::print("{} identities -> {}\n", s.size(), out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-only facial pose tracking with online identity adaptation"};
  app.require_subcommand(1);
  std::function<int()> action;

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Render a JSON scene to a depth sequence");
  r->add_option("scene", render.scene, "Scene description (JSON)")->required()->check(CLI::ExistingFile);
  r->add_option("-o,--out", render.out, "Output directory")->required();
  r->add_option("--model", render.model, "Model file (default: procedural corpus)");
  r->add_option("--seed", render.seed, "Noise and occluder seed (overrides the scene)");
  r->callback([&] { action = [&] { return cmd_render(render); }; });

  BuildArgs build;
  auto* b = app.add_subcommand("build-model", "Build a model from the procedural training corpus");
  b->add_option("-o,--out", build.out, "Model file to write")->required();
  b->add_option("--seed", build.seed, "Corpus seed");
  b->add_option("--subjects", build.n_id, "Training subjects")->check(CLI::PositiveNumber);
  b->add_option("--expressions", build.n_exp, "Training expressions")->check(CLI::PositiveNumber);
  b->add_option("--vertices", build.vertices, "Approximate vertex count")->check(CLI::PositiveNumber);
  b->callback([&] { action = [&] { return cmd_build(build); }; });

  auto* model = app.add_subcommand("model", "Inspect or truncate a model file");
  model->require_subcommand(1);
  std::string model_in, model_out;
  int keep_id = 28, keep_exp = 7;
  auto* mi = model->add_subcommand("inspect", "Print model dimensions");
  mi->add_option("model", model_in)->required()->check(CLI::ExistingFile);
  mi->callback([&] { action = [&] { return cmd_model_inspect(model_in); }; });
  auto* mt = model->add_subcommand("truncate", "Keep the leading components");
  mt->add_option("model", model_in)->required()->check(CLI::ExistingFile);
  mt->add_option("-o,--out", model_out)->required();
  mt->add_option("--n-id", keep_id)->check(CLI::PositiveNumber);
  mt->add_option("--n-exp", keep_exp)->check(CLI::PositiveNumber);
  mt->callback([&] { action = [&] { return cmd_model_truncate(model_in, model_out, keep_id, keep_exp); }; });

  TrackArgs track;
  auto* t = app.add_subcommand("track", "Track a depth sequence");
  t->add_option("input", track.manifest, "Sequence manifest (JSON), or a recording directory with --biwi")->required();
  t->add_flag("--biwi", track.biwi, "Read a Biwi Kinect Head Pose recording directory");
  t->add_option("--model", track.model, "Model file (default: procedural corpus)");
  t->add_option("--config", track.config, "Configuration file (JSON)");
  t->add_option("--seed", track.seed, "Particle swarm seed");
  t->add_option("-o,--out", track.out, "Pose CSV to write");
  t->add_option("--store", track.store_out, "Identity store to write");
  t->add_option("--store-in", track.store_in, "Identity store to start from");
  t->add_option("--errors", track.errors_out, "Per-frame error CSV (needs ground truth)");
  t->add_flag("--no-pso", track.no_pso, "Disable particle swarm recovery");
  t->add_flag("--no-temporal", track.no_temporal, "Disable the temporal coherence term");
  t->add_flag("--no-adapt", track.no_adapt, "Disable identity adaptation");
  t->add_flag("-q,--quiet", track.quiet, "Print only errors");
  t->callback([&] { action = [&] { return cmd_track(track); }; });

  std::string eval_poses, eval_truth, eval_errors;
  auto* e = app.add_subcommand("eval", "Compare a pose CSV with ground truth");
  e->add_option("poses", eval_poses)->required();
  e->add_option("truth", eval_truth)->required();
  e->add_option("--errors", eval_errors, "Per-frame error CSV");
  e->callback([&] { action = [&] { return cmd_eval(eval_poses, eval_truth, eval_errors); }; });

  auto* store = app.add_subcommand("store", "Inspect, export or merge identity stores");
  store->require_subcommand(1);
  std::string store_a, store_b, store_out;
  auto* sl = store->add_subcommand("list", "Summarize the stored identities");
  sl->add_option("store", store_a)->required();
  sl->callback([&] { action = [&] { return cmd_store_list(store_a); }; });
  auto* se = store->add_subcommand("export", "Write the store as JSON");
  se->add_option("store", store_a)->required();
  se->add_option("-o,--out", store_out, "JSON file (default: stdout)");
  se->callback([&] { action = [&] { return cmd_store_export(store_a, store_out); }; });
  auto* sm = store->add_subcommand("merge", "Append the identities of a second store");
  sm->add_option("base", store_a)->required();
  sm->add_option("other", store_b)->required();
  sm->add_option("-o,--out", store_out)->required();
  sm->callback([&] { action = [&] { return cmd_store_merge(store_a, store_b, store_out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kOther;
  }

  try {
    return action();
  } catch (const ft::LocalizationError& err) {
    std::cerr << "localization failed: " << err.what() << "\n";
    return kLocalization;
  } catch (const ft::TrackingLostError& err) {
    std::cerr << err.what() << "\n";
    return kTrackingLost;
  } catch (const ft::IoError& err) {
    std::cerr << "I/O error: " << err.what() << "\n";
    return kIo;
  } catch (const ft::FormatError& err) {
    std::cerr << "I/O error: " << err.what() << "\n";
    return kIo;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kOther;
  }
}
