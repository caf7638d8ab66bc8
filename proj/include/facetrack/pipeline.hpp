#pragma once

// End-to-end run over a depth sequence: localize on the first frame, track
// every frame, sample the identity every few frames and adapt the identity
// store at the end of each round.

#include <algorithm>
#include <optional>
#include <vector>

#include "facetrack/config.hpp"
#include "facetrack/identity.hpp"
#include "facetrack/io.hpp"
#include "facetrack/tracker.hpp"

namespace facetrack {

struct AdaptationRound {
  int end_frame = 0;       // first frame after the round
  int samples = 0;         // confident samples that fed it
  int present_index = 0;
  bool switched = false;   // present identity changed
  IdentityModel identity;  // present model after the round
};

struct PipelineResult {
  std::vector<PoseRecord> poses;
  IdentityStore store;
  std::vector<AdaptationRound> rounds;
  Localization localization;
  int failed_frames = 0;
};

/// First frame of every adaptation round: clip starts, subdivided every
/// `clip_frames` frames.
inline std::vector<int> round_starts(int frame_count, const std::vector<int>& clips, int clip_frames) {
  std::vector<int> starts = clips.empty() ? std::vector<int>{0} : clips;
  std::vector<int> out;
  for (size_t c = 0; c < starts.size(); ++c) {
    const int end = c + 1 < starts.size() ? starts[c + 1] : frame_count;
    for (int s = starts[c]; s < end; s += clip_frames) out.push_back(s);
  }
  return out;
}

/// `model` is used as given (truncate it beforehand). `store` starts the
/// run; a fresh store is made from the model when it is empty.
inline PipelineResult run_pipeline(const MultilinearModel& model, const FrameSource& source, const CameraIntrinsics& k,
                                   const PipelineConfig& cfg, const std::vector<int>& clips = {},
                                   std::optional<IdentityStore> store = std::nullopt) {
  cfg.validate();
  if (source.size() == 0) throw DomainError("sequence has no frames");
  PipelineResult out;
  out.store = store ? *store : make_store(model);
  if (out.store.generic.m.size() != model.n_id()) throw DimensionError("identity store does not match the model");

  const IdentityBasis basis = make_identity_basis(model);
  IdentityOptions id_opts;
  id_opts.min_visible_rays = cfg.adaptation.min_visible_rays;
  id_opts.sigma_o_sq = cfg.track.rvs.sigma_o_sq;

  FaceDistribution dist = adapted_distribution(model, out.store.present());
  DepthFrame frame = source.frame(0);
  LocalizeOptions lo = cfg.localize;
  lo.depth_offset_mm = face_depth_offset(dist);
  out.localization = localize_face(frame, k, lo);
  TrackerState state = initial_state(out.localization.pose);
  state.pose.alpha = out.store.present().alpha;

  const std::vector<int> starts = round_starts(source.size(), clips, cfg.adaptation.clip_frames);
  size_t next_round = 1;
  int round_start = 0;
  std::vector<IdentitySample> samples;
  int consecutive_failures = 0;

  auto finish_round = [&](int end_frame) {
    AdaptationRound r;
    r.end_frame = end_frame;
    r.samples = static_cast<int>(samples.size());
    const int before = out.store.present_index;
    out.store = adapt_clip(out.store, samples);
    samples.clear();
    r.present_index = out.store.present_index;
    r.switched = r.present_index != before;
    if (r.switched) {
      state.lambda_s = 1.0 / cfg.track.sigma_s_sq;
      state.pose.alpha = out.store.present().alpha;
    }
    r.identity = out.store.present();
    dist = adapted_distribution(model, out.store.present());
    out.rounds.push_back(r);
  };

  for (int i = 0; i < source.size(); ++i) {
    if (next_round < starts.size() && i == starts[next_round]) {
      if (cfg.adaptation.enabled) finish_round(i);
      round_start = i;
      ++next_round;
    }
    if (i > 0) frame = source.frame(i);
    const FrameResult r = track_frame(state, frame, dist, k, cfg.track);
    out.poses.push_back(pose_record(i, r.pose, r.labels.occluded_fraction(), r.failed));
    if (r.failed) {
      // The next frame starts again from the last good state.
      state.frame_index = r.state.frame_index;
      ++out.failed_frames;
      if (++consecutive_failures >= cfg.max_consecutive_failures)
        throw TrackingLostError(fmt::format("tracking lost: {} consecutive failed frames ending at frame {}", consecutive_failures, i));
      continue;
    }
    state = r.state;
    consecutive_failures = 0;
    if (!cfg.adaptation.enabled || (i - round_start) % cfg.adaptation.stride != 0) continue;
    const IdentityEstimate e = estimate_wid(r.rays, r.labels, r.pose, basis, id_opts);
    if (!e.confident) continue;
    samples.push_back({e.w_id, confidence(r.labels), r.pose.alpha});
  }
  if (cfg.adaptation.enabled) finish_round(source.size());
  return out;
}

}  // namespace facetrack
