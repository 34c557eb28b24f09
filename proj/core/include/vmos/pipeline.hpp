#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vmos/association.hpp"
#include "vmos/config.hpp"
#include "vmos/eval.hpp"
#include "vmos/features.hpp"
#include "vmos/heads.hpp"
#include "vmos/io.hpp"

namespace vmos {

enum class EventKind {
  kSpawn,    // proposal started a new tracklet
  kSwap,     // proposal replaced a tracklet's result (reliable verification)
  kAttach,   // proposal matched a tracklet below the swap threshold
  kDiscard,  // proposal too small or overlapping a tracked target
  kLost,     // tracklet produced an empty mask (first empty frame of a run)
  kRecover,  // tracklet produced a mask again after being lost
  kRetire,   // tracklet removed after too many empty frames
};

const char* event_name(EventKind kind);

struct TrackEvent {
  std::size_t frame = 0;
  EventKind kind = EventKind::kSpawn;
  std::uint32_t tracklet = 0;            // 0 when no tracklet is involved
  std::optional<std::size_t> proposal;   // proposal index within the frame
  double score = 0.0;

  friend bool operator==(const TrackEvent&, const TrackEvent&) = default;
};

struct FrameTiming {
  double proposal_ms = 0.0;
  double tracking_ms = 0.0;
};

struct RunRecord {
  std::vector<FrameTiming> timing;
  std::vector<TrackEvent> events;
};

std::string run_record_to_json(const RunRecord& record);

/// Output of the proposal stage for one frame.
struct FrameProposals {
  Tensor3 foreground;  // probability at frame resolution
  InstanceOutput instance;
  std::vector<Proposal> proposals;  // after the area filter
  std::vector<Proposal> rejected;   // below the area filter
  Tensor3 tracker_features;
};

/// Online segmenter: frames are fed in order and each output depends only
/// on the frames seen so far.
class Segmenter {
 public:
  Segmenter(PipelineConfig config, ModelBundle model);

  InstanceMask step(const Frame& frame);

  std::size_t frame_index() const noexcept { return frame_; }
  const RunRecord& record() const noexcept { return record_; }
  const std::vector<Tracklet>& tracklets() const noexcept { return tracklets_; }
  /// Mean appearance score inside each tracklet's final mask, last frame.
  const std::map<std::uint32_t, double>& track_scores() const noexcept { return scores_; }
  /// Proposals of the last frame with their center scores.
  const std::vector<ScoredMask>& last_proposals() const noexcept { return last_proposals_; }

 private:
  FrameProposals propose(const Frame& frame) const;

  PipelineConfig config_;
  ModelBundle model_;
  std::size_t frame_ = 0;
  std::optional<Frame> prev_frame_;
  InstanceMask prev_mask_;
  std::vector<Tracklet> tracklets_;  // active, ascending id
  std::uint32_t next_id_ = 1;
  RunRecord record_;
  std::map<std::uint32_t, double> scores_;
  std::vector<ScoredMask> last_proposals_;
};

struct RunResult {
  TrackSet masks;
  std::vector<std::map<std::uint32_t, double>> track_scores;
  std::vector<std::vector<ScoredMask>> proposals;
  RunRecord record;
};

RunResult run_pipeline(const std::vector<Frame>& frames, const PipelineConfig& config, const ModelBundle& model);

/// Reads a dataset directory, runs the pipeline and writes masks/,
/// manifest.json and run_record.json into `out`.
RunResult run_pipeline_on_disk(const std::filesystem::path& dataset, const std::filesystem::path& out,
                               const PipelineConfig& config, const ModelBundle& model,
                               std::optional<std::size_t> max_frames = {});

struct TimingSummary {
  std::size_t frames = 0;
  double proposal_ms = 0.0;  // mean per frame
  double tracking_ms = 0.0;
  double total_ms = 0.0;
  double worst_total_ms = 0.0;
};
TimingSummary summarize_timing(const RunRecord& record);
std::string timing_to_json(const TimingSummary& summary, double budget_ms);

// ---- training data -----------------------------------------------------------

/// Builds head training examples from consecutive frames, guiding each frame
/// with the previous frame and its ground-truth mask (the first frame, like
/// the first frame at run time, is unguided).
std::vector<HeadExample> make_training_examples(const std::vector<Frame>& frames, const TrackSet& masks,
                                                const PipelineConfig& config, const ModelBundle& model);

/// Training examples from `videos` random scenes of `frames` frames each;
/// scene i uses seed mix_seed(config.seed, 1000 + i).
std::vector<HeadExample> synthetic_training_set(const PipelineConfig& config, const ModelBundle& model,
                                                std::size_t videos, std::size_t frames = 6);

/// Fresh model: seeded heads and guidance modules.
ModelBundle initial_model(const PipelineConfig& config);

}  // namespace vmos
