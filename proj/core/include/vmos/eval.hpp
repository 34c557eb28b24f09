#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vmos/mask.hpp"

namespace vmos {

/// IoU of two masks; 1 when both are empty.
double region_similarity(const BinaryMask& pred, const BinaryMask& gt);

/// Mask pixels with at least one in-image 4-neighbour outside the mask.
BinaryMask boundary(const BinaryMask& mask);

/// round(0.008 * image diagonal).
std::size_t default_boundary_tolerance(std::size_t height, std::size_t width);

/// Boundary F-measure: a boundary pixel counts as matched when the other
/// boundary has a pixel within `tolerance` (Euclidean). Both boundaries
/// empty -> 1; only one empty -> 0.
double boundary_accuracy(const BinaryMask& pred, const BinaryMask& gt, std::optional<std::size_t> tolerance = {});

/// Maximum-weight assignment on a rows x cols score matrix (row-major).
/// Returns, for each row, the assigned column or nullopt.
std::vector<std::optional<std::size_t>> max_weight_assignment(std::span<const double> scores, std::size_t rows,
                                                              std::size_t cols);

struct SeriesStats {
  double mean = 0.0;
  double recall = 0.0;  // fraction of values above 0.5
  double decay = 0.0;   // mean of the first ceil(n/4) values minus mean of the last ceil(n/4)
};
SeriesStats aggregate(std::span<const double> values);

/// Per-frame labelings of one video; the same id is the same track.
using TrackSet = std::vector<InstanceMask>;

struct TrackScores {
  std::uint32_t gt_id = 0;
  std::uint32_t pred_id = 0;  // 0 when no prediction was assigned
  std::vector<double> j;
  std::vector<double> f;
  SeriesStats j_stats;
  SeriesStats f_stats;
};

struct TrackAssignment {
  std::vector<TrackScores> tracks;  // one per ground-truth id, ascending
  double total = 0.0;               // summed per-track mean (J + F) / 2
};

/// Optimal one-to-one matching of predicted to ground-truth tracks by mean
/// (J + F) / 2 over the video. Unassigned ground-truth tracks are scored
/// against an empty prediction.
TrackAssignment assign_tracks(const TrackSet& pred, const TrackSet& gt);

struct ScoredMask {
  BinaryMask mask;
  double score = 0.0;
};

struct ApResult {
  double ap = 0.0;    // mean over IoU 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap75 = 0.0;
};

/// Average precision at one IoU threshold, 101-point interpolation.
double average_precision(std::span<const std::vector<ScoredMask>> proposals, const TrackSet& gt,
                         double iou_threshold);
ApResult mask_ap(std::span<const std::vector<ScoredMask>> proposals, const TrackSet& gt);

struct MetricReport {
  std::vector<TrackScores> tracks;
  double j_mean = 0.0;
  double f_mean = 0.0;
  double jf_mean = 0.0;
  std::optional<ApResult> ap;
};

MetricReport evaluate_tracks(const TrackSet& pred, const TrackSet& gt);

}  // namespace vmos
