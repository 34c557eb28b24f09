#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vmos/appearance.hpp"
#include "vmos/mask.hpp"
#include "vmos/memory.hpp"

namespace vmos {

struct AssociationConfig {
  double th_reid = 0.6;
  double iou_gate = 0.5;        // match score is zero unless IoU with the latest segment exceeds this
  double new_target_iou = 0.1;  // spawn only below this IoU with every current mask
  double mask_threshold = 0.5;  // score map -> tracking mask
  std::size_t retire_after = 20;  // consecutive empty frames

  friend bool operator==(const AssociationConfig&, const AssociationConfig&) = default;
};

/// |a & b| / |a | b|; zero when both are empty.
double iou(const BinaryMask& a, const BinaryMask& b);

/// Cosine similarity; zero if either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

/// Appearance descriptor of a segment: masked mean of the feature channels
/// followed by shape statistics (area fraction, centroid, second moments in
/// [-1, 1] image coordinates), L2-normalized. The mask is area-averaged onto
/// the feature grid with `stride`. Empty mask -> zero vector.
std::vector<double> embed(const BinaryMask& mask, const Tensor3& features, std::size_t stride);

struct Segment {
  BinaryMask mask;
  std::vector<double> embedding;
};

Segment make_segment(BinaryMask mask, const Tensor3& features, std::size_t stride);

/// Bilinear upsample of a 1-channel score map to frame size.
Tensor3 upsample_score(const Tensor3& score, std::size_t stride, std::size_t height, std::size_t width);

/// Upsample, threshold (strictly above), keep the largest component.
BinaryMask score_to_mask(const Tensor3& score, std::size_t stride, std::size_t height, std::size_t width,
                         double thr = 0.5);

/// max(0, cos(p, latest) + cos(p, first)) when IoU(p, latest) > iou_gate, else 0.
double match_score(const Segment& proposal, const Segment& latest, const Segment& first,
                   double iou_gate = 0.5);

struct Tracklet {
  std::uint32_t id = 0;
  Segment first;   // pseudo label, never modified
  Segment latest;  // tracking result of the current frame
  AppearanceModel model;
  std::optional<MemoryBank> memory;
  Tensor3 score;  // frame-resolution appearance score of the current frame
  std::size_t frames_lost = 0;
};

struct MatchDecision {
  std::uint32_t tracklet = 0;
  std::optional<std::size_t> best;  // argmax proposal, if any were scored
  double score = 0.0;
  bool reliable = false;  // score above th_reid; the proposal replaced the tracking result
};

/// Scores every proposal not marked in `claimed` (may be empty) against the
/// tracklet and swaps the best one in when its score exceeds th_reid. Ties
/// go to the lower proposal index.
MatchDecision verify_and_swap(Tracklet& trk, std::span<const Segment> proposals,
                              const AssociationConfig& config = {},
                              std::span<const bool> claimed = {});

/// Indices of proposals with zero match score against every tracklet and
/// IoU below new_target_iou with every current mask.
std::vector<std::size_t> discovery_candidates(std::span<const Segment> proposals,
                                              std::span<const Tracklet> tracklets,
                                              std::span<const BinaryMask> current_masks,
                                              const AssociationConfig& config = {});

struct SpawnConfig {
  AppearanceConfig appearance;
  MemoryConfig memory;
  std::uint64_t seed = 0;
};

/// Creates one tracklet per discovery candidate, fitting its model on the
/// proposal. Ids are taken from `next_id`, which is advanced.
std::vector<Tracklet> discover_new_targets(std::span<const Segment> proposals,
                                           std::span<const Tracklet> tracklets,
                                           std::span<const BinaryMask> current_masks,
                                           const Tensor3& features, const SpawnConfig& spawn,
                                           std::uint32_t& next_id, const AssociationConfig& config = {});

/// Non-overlapping labeling: pixels covered by several masks go to the
/// highest score, ties to the smaller id. Labels are the given ids.
InstanceMask resolve_overlaps(std::span<const BinaryMask> masks, std::span<const Tensor3> scores,
                              std::span<const std::uint32_t> ids);

}  // namespace vmos
