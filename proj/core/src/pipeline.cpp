#include "vmos/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <memory>

#include "json.hpp"
#include "vmos/errors.hpp"
#include "vmos/parallel.hpp"
#include "vmos/random.hpp"
#include "vmos/sgm.hpp"
#include "vmos/synthetic.hpp"

namespace vmos {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

struct TaskInputs {
  Tensor3 sal;
  Tensor3 ins;
  LowLevelFeatures low;
};

TaskInputs task_inputs(const Frame& frame, const Frame* prev_frame, const InstanceMask* prev_mask,
                       const PipelineConfig& config, const ModelBundle& model) {
  FeatureBundle task = extract_task_features(frame, config.features);
  TaskInputs in;
  if (prev_frame != nullptr) {
    const Tensor3 guid = extract_guidance_features(*prev_frame, *prev_mask, config.features);
    in.sal = guide(task.sal, guid, model.sgm_salient);
    in.ins = guide(task.ins, guid, model.sgm_instance);
  } else {
    in.sal = std::move(task.sal);
    in.ins = std::move(task.ins);
  }
  const auto& radii = config.features.box_radii;
  in.low.stride8 = extract_base_features(frame, 8, config.heads.low_channels, radii);
  in.low.stride4 = extract_base_features(frame, 4, config.heads.low_channels, radii);
  return in;
}

double mean_inside(const Tensor3& score, const BinaryMask& mask) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.bits.size(); ++i)
    if (mask.bits[i]) {
      s += score.data()[i];
      ++n;
    }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

}  // namespace

const char* event_name(EventKind kind) {
  switch (kind) {
    case EventKind::kSpawn: return "spawn";
    case EventKind::kSwap: return "swap";
    case EventKind::kAttach: return "attach";
    case EventKind::kDiscard: return "discard";
    case EventKind::kLost: return "lost";
    case EventKind::kRecover: return "recover";
    case EventKind::kRetire: return "retire";
  }
  return "unknown";
}

std::string run_record_to_json(const RunRecord& record) {
  using nlohmann::json;
  json frames = json::array();
  for (std::size_t t = 0; t < record.timing.size(); ++t) {
    frames.push_back({{"frame", t},
                      {"proposal_ms", record.timing[t].proposal_ms},
                      {"tracking_ms", record.timing[t].tracking_ms}});
  }
  json events = json::array();
  for (const auto& e : record.events) {
    json je = {{"frame", e.frame}, {"kind", event_name(e.kind)}, {"tracklet", e.tracklet}, {"score", e.score}};
    je["proposal"] = e.proposal ? json(*e.proposal) : json(nullptr);
    events.push_back(je);
  }
  return json{{"frames", frames}, {"events", events}}.dump(2) + "\n";
}

Segmenter::Segmenter(PipelineConfig config, ModelBundle model) : config_(std::move(config)), model_(std::move(model)) {
  config_.validate();
  model_.heads.validate();
  require(model_.heads.config == config_.heads, "Segmenter: model was trained with a different head configuration");
  model_.sgm_salient.validate();
  model_.sgm_instance.validate();
  require(model_.sgm_salient.channels == config_.features.channels &&
              model_.sgm_instance.channels == config_.features.channels,
          "Segmenter: guidance modules do not match the feature channels");
}

FrameProposals Segmenter::propose(const Frame& frame) const {
  const bool guided = prev_frame_.has_value();
  TaskInputs in = task_inputs(frame, guided ? &*prev_frame_ : nullptr, guided ? &prev_mask_ : nullptr,
                              config_, model_);
  const std::size_t hs = config_.heads.head_stride;
  FrameProposals out;
  out.foreground = salient_forward(in.sal, in.low, model_.heads.salient, hs, frame.height, frame.width);
  out.instance = instance_forward(in.ins, in.low, model_.heads.instance, hs, frame.height, frame.width);
  const auto& pc = config_.proposals;
  const BinaryMask fg = threshold(out.foreground, pc.foreground_threshold);
  const auto peaks = detect_centers(out.instance.heatmap, pc.nms_window, pc.heatmap_threshold, pc.top_k);
  Grouping g = group_instances(fg, out.instance.offsets, peaks);
  for (auto& p : g.proposals) {
    if (p.mask.area() >= pc.min_area) {
      out.proposals.push_back(std::move(p));
    } else {
      out.rejected.push_back(std::move(p));
    }
  }
  if (config_.appearance.stride == 4 && config_.appearance.hidden > 0) {
    out.tracker_features = std::move(in.low.stride4);
  } else {
    out.tracker_features = extract_base_features(frame, config_.appearance.stride, config_.features.channels,
                                                 config_.features.box_radii);
  }
  return out;
}

InstanceMask Segmenter::step(const Frame& frame) {
  frame.validate();
  if (prev_frame_) {
    require(frame.height == prev_frame_->height && frame.width == prev_frame_->width,
            "Segmenter: frame size changed mid-video");
  }
  const std::size_t t = frame_;
  const std::size_t h = frame.height;
  const std::size_t w = frame.width;
  const auto& ac = config_.association;
  const std::size_t ts = config_.appearance.stride;

  auto t0 = Clock::now();
  FrameProposals fp = propose(frame);
  const double proposal_ms = elapsed_ms(t0);

  t0 = Clock::now();
  const Tensor3& X = fp.tracker_features;
  std::vector<Segment> proposals;
  proposals.reserve(fp.proposals.size());
  for (const auto& p : fp.proposals) proposals.push_back(make_segment(p.mask, X, ts));

  // Per-tracklet appearance prediction.
  parallel_for(tracklets_.size(), [&](std::size_t k) {
    Tracklet& trk = tracklets_[k];
    trk.score = upsample_score(predict(trk.model, X), ts, h, w);
    trk.latest = make_segment(largest_component(threshold(trk.score, ac.mask_threshold)), X, ts);
  });

  // Verification in id order; a proposal is swapped into at most one tracklet.
  const std::size_t n_existing = tracklets_.size();
  // std::vector<bool> has no contiguous storage to hand out as a span.
  const std::size_t np = proposals.size();
  std::unique_ptr<bool[]> claimed_buf(new bool[np + 1]());
  const std::span<bool> claimed(claimed_buf.get(), np);
  std::vector<bool> reliable(n_existing, false);
  std::vector<std::optional<std::pair<std::uint32_t, double>>> best_match(np);
  for (std::size_t k = 0; k < n_existing; ++k) {
    Tracklet& trk = tracklets_[k];
    for (std::size_t i = 0; i < np; ++i) {
      const double s = match_score(proposals[i], trk.latest, trk.first, ac.iou_gate);
      if (s > 0.0 && (!best_match[i] || s > best_match[i]->second)) best_match[i] = std::make_pair(trk.id, s);
    }
    const MatchDecision d = verify_and_swap(trk, proposals, ac, claimed);
    if (d.reliable) {
      reliable[k] = true;
      claimed[*d.best] = true;
      record_.events.push_back({t, EventKind::kSwap, trk.id, d.best, d.score});
    }
  }

  // Discovery against the current tracking results.
  std::vector<BinaryMask> current;
  current.reserve(n_existing);
  for (const auto& trk : tracklets_) current.push_back(trk.latest.mask);
  const auto candidates = discovery_candidates(proposals, tracklets_, current, ac);
  std::vector<bool> spawned(np, false);
  for (std::size_t i : candidates) spawned[i] = !claimed[i];
  std::vector<Segment> to_spawn;
  std::vector<std::size_t> spawn_index;
  for (std::size_t i = 0; i < proposals.size(); ++i)
    if (spawned[i]) {
      to_spawn.push_back(proposals[i]);
      spawn_index.push_back(i);
    }
  SpawnConfig sc{config_.appearance, config_.memory, config_.seed};
  std::vector<Tracklet> born = discover_new_targets(to_spawn, {}, {}, X, sc, next_id_, ac);

  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (claimed[i]) continue;
    if (spawned[i]) continue;
    if (best_match[i]) {
      record_.events.push_back({t, EventKind::kAttach, best_match[i]->first, i, best_match[i]->second});
    } else {
      record_.events.push_back({t, EventKind::kDiscard, 0, i, 0.0});
    }
  }
  for (std::size_t r = 0; r < fp.rejected.size(); ++r) {
    record_.events.push_back({t, EventKind::kDiscard, 0, fp.proposals.size() + r, fp.rejected[r].score});
  }

  // Memory and model updates of existing tracklets.
  parallel_for(n_existing, [&](std::size_t k) {
    Tracklet& trk = tracklets_[k];
    if (!trk.latest.mask.empty()) {
      trk.memory->push(X, area_downsample(trk.latest.mask, ts), reliable[k], !trk.model.relu);
    }
    if (trk.memory->should_update(reliable[k])) {
      FitOptions opts;
      opts.iters_outer = config_.appearance.iters_update;
      opts.iters_cg = config_.appearance.iters_cg;
      opts.damping = config_.appearance.damping;
      trk.model = gauss_newton_fit(trk.model, trk.memory->samples(), opts).model;
    }
  });

  // Lifecycle.
  std::vector<Tracklet> kept;
  kept.reserve(n_existing + born.size());
  for (auto& trk : tracklets_) {
    if (trk.latest.mask.empty()) {
      ++trk.frames_lost;
      if (trk.frames_lost == 1) record_.events.push_back({t, EventKind::kLost, trk.id, {}, 0.0});
      if (trk.frames_lost >= ac.retire_after) {
        record_.events.push_back({t, EventKind::kRetire, trk.id, {}, 0.0});
        continue;
      }
    } else {
      if (trk.frames_lost > 0) record_.events.push_back({t, EventKind::kRecover, trk.id, {}, 0.0});
      trk.frames_lost = 0;
    }
    kept.push_back(std::move(trk));
  }
  for (std::size_t b = 0; b < born.size(); ++b) {
    Tracklet& trk = born[b];
    trk.score = upsample_score(predict(trk.model, X), ts, h, w);
    record_.events.push_back({t, EventKind::kSpawn, trk.id, spawn_index[b], fp.proposals[spawn_index[b]].score});
    kept.push_back(std::move(trk));
  }
  tracklets_ = std::move(kept);

  // Non-overlapping labeling.
  std::vector<BinaryMask> masks;
  std::vector<Tensor3> scores;
  std::vector<std::uint32_t> ids;
  for (const auto& trk : tracklets_) {
    if (trk.latest.mask.empty()) continue;
    masks.push_back(trk.latest.mask);
    scores.push_back(trk.score);
    ids.push_back(trk.id);
  }
  InstanceMask out = masks.empty() ? InstanceMask(h, w) : resolve_overlaps(masks, scores, ids);
  scores_.clear();
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const BinaryMask mine = out.select(ids[k]);
    if (!mine.empty()) scores_[ids[k]] = mean_inside(scores[k], mine);
  }
  last_proposals_.clear();
  for (const auto& p : fp.proposals) last_proposals_.push_back({p.mask, p.score});

  record_.timing.push_back({proposal_ms, elapsed_ms(t0)});
  prev_frame_ = frame;
  prev_mask_ = out;
  ++frame_;
  return out;
}

RunResult run_pipeline(const std::vector<Frame>& frames, const PipelineConfig& config, const ModelBundle& model) {
  RunResult r;
  Segmenter seg(config, model);
  for (const auto& f : frames) {
    r.masks.push_back(seg.step(f));
    r.track_scores.push_back(seg.track_scores());
    r.proposals.push_back(seg.last_proposals());
  }
  r.record = seg.record();
  return r;
}

RunResult run_pipeline_on_disk(const std::filesystem::path& dataset, const std::filesystem::path& out,
                               const PipelineConfig& config, const ModelBundle& model,
                               std::optional<std::size_t> max_frames) {
  const Manifest m = read_manifest(dataset);
  const std::size_t n = max_frames ? std::min(*max_frames, m.frame_files.size()) : m.frame_files.size();
  RunResult r;
  Segmenter seg(config, model);
  for (std::size_t t = 0; t < n; ++t) {
    const Frame f = read_ppm(dataset / m.frame_files[t]);
    if (f.height != m.height || f.width != m.width) throw DataError("frame size differs from manifest: " + m.frame_files[t]);
    r.masks.push_back(seg.step(f));
    r.track_scores.push_back(seg.track_scores());
    r.proposals.push_back(seg.last_proposals());
  }
  r.record = seg.record();
  write_video(out, {}, r.masks, r.track_scores);
  write_text(out / "run_record.json", run_record_to_json(r.record));
  return r;
}

TimingSummary summarize_timing(const RunRecord& record) {
  TimingSummary s;
  s.frames = record.timing.size();
  if (s.frames == 0) return s;
  for (const auto& f : record.timing) {
    s.proposal_ms += f.proposal_ms;
    s.tracking_ms += f.tracking_ms;
    s.worst_total_ms = std::max(s.worst_total_ms, f.proposal_ms + f.tracking_ms);
  }
  s.proposal_ms /= static_cast<double>(s.frames);
  s.tracking_ms /= static_cast<double>(s.frames);
  s.total_ms = s.proposal_ms + s.tracking_ms;
  return s;
}

std::string timing_to_json(const TimingSummary& s, double budget_ms) {
  const nlohmann::json j = {{"frames", s.frames},
                            {"proposal_ms_per_frame", s.proposal_ms},
                            {"tracking_ms_per_frame", s.tracking_ms},
                            {"total_ms_per_frame", s.total_ms},
                            {"worst_frame_ms", s.worst_total_ms},
                            {"budget_ms", budget_ms},
                            {"within_budget", s.total_ms < budget_ms},
                            {"workers", worker_count()}};
  return j.dump(2) + "\n";
}

std::vector<HeadExample> make_training_examples(const std::vector<Frame>& frames, const TrackSet& masks,
                                                const PipelineConfig& config, const ModelBundle& model) {
  require(frames.size() == masks.size(), "make_training_examples: frame/mask count mismatch");
  std::vector<HeadExample> out(frames.size());
  parallel_for(frames.size(), [&](std::size_t t) {
    TaskInputs in = task_inputs(frames[t], t > 0 ? &frames[t - 1] : nullptr, t > 0 ? &masks[t - 1] : nullptr,
                                config, model);
    out[t] = HeadExample{std::move(in.sal), std::move(in.ins), std::move(in.low),
                         make_head_targets(masks[t], config.proposals.sigma)};
  });
  return out;
}

std::vector<HeadExample> synthetic_training_set(const PipelineConfig& config, const ModelBundle& model,
                                                std::size_t videos, std::size_t frames) {
  require(frames >= 2, "synthetic_training_set: need at least two frames per video");
  std::vector<HeadExample> out;
  for (std::size_t i = 0; i < videos; ++i) {
    const Video v = render_scene(random_scene(mix_seed(config.seed, 1000 + i), frames));
    for (auto& e : make_training_examples(v.frames, v.masks, config, model)) out.push_back(std::move(e));
  }
  return out;
}

ModelBundle initial_model(const PipelineConfig& config) {
  config.validate();
  ModelBundle m;
  m.heads = HeadParams::seeded(config.heads, mix_seed(config.seed, 1));
  const std::size_t c = config.features.channels;
  m.sgm_salient = SgmParams::seeded(c, SgmParams::default_hidden(c), mix_seed(config.seed, 2));
  m.sgm_instance = SgmParams::seeded(c, SgmParams::default_hidden(c), mix_seed(config.seed, 3));
  return m;
}

}  // namespace vmos
