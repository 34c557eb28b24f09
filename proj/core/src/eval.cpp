#include "vmos/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "vmos/errors.hpp"

namespace vmos {

namespace {

void check_same(const BinaryMask& a, const BinaryMask& b, const char* who) {
  require(a.same_size(b), std::string(who) + ": mask sizes differ");
}

// Fraction of `from` pixels with a `to` pixel within the disk of radius r.
double matched_fraction(const BinaryMask& from, const BinaryMask& to, std::size_t r) {
  const auto rr = static_cast<std::ptrdiff_t>(r);
  std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> disk;
  for (std::ptrdiff_t dy = -rr; dy <= rr; ++dy)
    for (std::ptrdiff_t dx = -rr; dx <= rr; ++dx)
      if (dy * dy + dx * dx <= rr * rr) disk.emplace_back(dy, dx);
  const auto h = static_cast<std::ptrdiff_t>(from.height);
  const auto w = static_cast<std::ptrdiff_t>(from.width);
  std::size_t total = 0;
  std::size_t hit = 0;
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      if (!from(static_cast<std::size_t>(y), static_cast<std::size_t>(x))) continue;
      ++total;
      for (const auto& [dy, dx] : disk) {
        const auto yy = y + dy;
        const auto xx = x + dx;
        if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
        if (to(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx))) {
          ++hit;
          break;
        }
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::set<std::uint32_t> all_ids(const TrackSet& set) {
  std::set<std::uint32_t> ids;
  for (const auto& f : set)
    for (std::uint32_t id : f.ids()) ids.insert(id);
  return ids;
}

void score_pair(const TrackSet& pred, const TrackSet& gt, std::uint32_t pred_id, std::uint32_t gt_id,
                TrackScores& out) {
  out.gt_id = gt_id;
  out.pred_id = pred_id;
  out.j.clear();
  out.f.clear();
  for (std::size_t t = 0; t < gt.size(); ++t) {
    const BinaryMask g = gt[t].select(gt_id);
    const BinaryMask p = pred_id == 0 ? BinaryMask(g.height, g.width) : pred[t].select(pred_id);
    out.j.push_back(region_similarity(p, g));
    out.f.push_back(boundary_accuracy(p, g));
  }
  out.j_stats = aggregate(out.j);
  out.f_stats = aggregate(out.f);
}

double pair_value(const TrackScores& s) { return 0.5 * (s.j_stats.mean + s.f_stats.mean); }

}  // namespace

double region_similarity(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt, "region_similarity");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    inter += (pred.bits[i] && gt.bits[i]) ? 1 : 0;
    uni += (pred.bits[i] || gt.bits[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BinaryMask boundary(const BinaryMask& mask) {
  BinaryMask out(mask.height, mask.width);
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask(y, x)) continue;
      const bool edge = (y > 0 && !mask(y - 1, x)) || (y + 1 < mask.height && !mask(y + 1, x)) ||
                        (x > 0 && !mask(y, x - 1)) || (x + 1 < mask.width && !mask(y, x + 1));
      out.set(y, x, edge);
    }
  }
  return out;
}

std::size_t default_boundary_tolerance(std::size_t height, std::size_t width) {
  const double diag = std::hypot(static_cast<double>(height), static_cast<double>(width));
  return static_cast<std::size_t>(std::lround(0.008 * diag));
}

double boundary_accuracy(const BinaryMask& pred, const BinaryMask& gt, std::optional<std::size_t> tolerance) {
  check_same(pred, gt, "boundary_accuracy");
  const std::size_t tol = tolerance.value_or(default_boundary_tolerance(gt.height, gt.width));
  const BinaryMask bp = boundary(pred);
  const BinaryMask bg = boundary(gt);
  const bool ep = bp.empty();
  const bool eg = bg.empty();
  if (ep && eg) return 1.0;
  if (ep || eg) return 0.0;
  const double precision = matched_fraction(bp, bg, tol);
  const double recall = matched_fraction(bg, bp, tol);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<std::optional<std::size_t>> max_weight_assignment(std::span<const double> scores, std::size_t rows,
                                                              std::size_t cols) {
  require(scores.size() == rows * cols, "max_weight_assignment: matrix size mismatch");
  std::vector<std::optional<std::size_t>> result(rows);
  if (rows == 0 || cols == 0) return result;
  // Hungarian method on a square cost matrix (padding costs zero).
  const std::size_t n = std::max(rows, cols);
  auto cost = [&](std::size_t i, std::size_t j) {
    return (i < rows && j < cols) ? -scores[i * cols + j] : 0.0;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0);
  std::vector<double> v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0);
  std::vector<std::size_t> way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j] - 1;
    if (i < rows && j - 1 < cols) result[i] = j - 1;
  }
  return result;
}

SeriesStats aggregate(std::span<const double> values) {
  require(!values.empty(), "aggregate: empty sequence");
  SeriesStats s;
  s.mean = mean_of(values);
  const auto above = std::count_if(values.begin(), values.end(), [](double v) { return v > 0.5; });
  s.recall = static_cast<double>(above) / static_cast<double>(values.size());
  const std::size_t q = (values.size() + 3) / 4;
  s.decay = mean_of(values.first(q)) - mean_of(values.last(q));
  return s;
}

TrackAssignment assign_tracks(const TrackSet& pred, const TrackSet& gt) {
  require(pred.size() == gt.size(), "assign_tracks: frame counts differ");
  for (std::size_t t = 0; t < gt.size(); ++t) {
    require(pred[t].height == gt[t].height && pred[t].width == gt[t].width, "assign_tracks: frame sizes differ");
  }
  const auto gset = all_ids(gt);
  const auto pset = all_ids(pred);
  const std::vector<std::uint32_t> gids(gset.begin(), gset.end());
  const std::vector<std::uint32_t> pids(pset.begin(), pset.end());

  // Columns: predicted tracks, then one empty track per ground-truth row, so
  // leaving a track unmatched is itself a scored choice.
  const std::size_t np = pids.size();
  const std::size_t cols = np + gids.size();
  std::vector<TrackScores> table(gids.size() * np);
  std::vector<TrackScores> empty(gids.size());
  std::vector<double> value(gids.size() * cols, 0.0);
  for (std::size_t i = 0; i < gids.size(); ++i) {
    for (std::size_t k = 0; k < np; ++k) {
      score_pair(pred, gt, pids[k], gids[i], table[i * np + k]);
      value[i * cols + k] = pair_value(table[i * np + k]);
    }
    score_pair(pred, gt, 0, gids[i], empty[i]);
    for (std::size_t k = np; k < cols; ++k) value[i * cols + k] = pair_value(empty[i]);
  }
  const auto match = max_weight_assignment(value, gids.size(), cols);

  TrackAssignment out;
  for (std::size_t i = 0; i < gids.size(); ++i) {
    TrackScores s = match[i] && *match[i] < np ? table[i * np + *match[i]] : empty[i];
    out.total += pair_value(s);
    out.tracks.push_back(std::move(s));
  }
  return out;
}

double average_precision(std::span<const std::vector<ScoredMask>> proposals, const TrackSet& gt,
                         double iou_threshold) {
  require(proposals.size() == gt.size(), "average_precision: frame counts differ");
  struct Entry {
    double score;
    std::size_t frame;
    std::size_t index;
  };
  std::vector<Entry> order;
  std::size_t n_gt = 0;
  std::vector<std::vector<BinaryMask>> gt_masks(gt.size());
  for (std::size_t t = 0; t < gt.size(); ++t) {
    for (std::uint32_t id : gt[t].ids()) gt_masks[t].push_back(gt[t].select(id));
    n_gt += gt_masks[t].size();
    for (std::size_t k = 0; k < proposals[t].size(); ++k) order.push_back({proposals[t][k].score, t, k});
  }
  if (n_gt == 0 || order.empty()) return 0.0;
  std::stable_sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });

  std::vector<std::vector<char>> taken(gt.size());
  for (std::size_t t = 0; t < gt.size(); ++t) taken[t].assign(gt_masks[t].size(), 0);
  std::vector<double> precision;
  std::vector<double> recall;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const Entry& e : order) {
    const BinaryMask& m = proposals[e.frame][e.index].mask;
    double best = -1.0;
    std::optional<std::size_t> which;
    for (std::size_t g = 0; g < gt_masks[e.frame].size(); ++g) {
      if (taken[e.frame][g]) continue;
      check_same(m, gt_masks[e.frame][g], "average_precision");
      double inter = 0.0;
      double uni = 0.0;
      for (std::size_t i = 0; i < m.bits.size(); ++i) {
        inter += (m.bits[i] && gt_masks[e.frame][g].bits[i]) ? 1.0 : 0.0;
        uni += (m.bits[i] || gt_masks[e.frame][g].bits[i]) ? 1.0 : 0.0;
      }
      const double v = uni == 0.0 ? 0.0 : inter / uni;
      if (v >= iou_threshold && v > best) {
        best = v;
        which = g;
      }
    }
    if (which) {
      taken[e.frame][*which] = 1;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  for (std::size_t i = precision.size() - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

ApResult mask_ap(std::span<const std::vector<ScoredMask>> proposals, const TrackSet& gt) {
  ApResult r;
  double sum = 0.0;
  for (int k = 0; k < 10; ++k) {
    const double thr = 0.5 + 0.05 * k;
    const double ap = average_precision(proposals, gt, thr);
    sum += ap;
    if (k == 0) r.ap50 = ap;
    if (k == 5) r.ap75 = ap;
  }
  r.ap = sum / 10.0;
  return r;
}

MetricReport evaluate_tracks(const TrackSet& pred, const TrackSet& gt) {
  MetricReport rep;
  if (gt.empty()) {
    rep.j_mean = rep.f_mean = rep.jf_mean = 1.0;
    return rep;
  }
  TrackAssignment a = assign_tracks(pred, gt);
  rep.tracks = std::move(a.tracks);
  if (rep.tracks.empty()) {
    const double v = all_ids(pred).empty() ? 1.0 : 0.0;
    rep.j_mean = rep.f_mean = rep.jf_mean = v;
    return rep;
  }
  double js = 0.0;
  double fs = 0.0;
  for (const auto& t : rep.tracks) {
    js += t.j_stats.mean;
    fs += t.f_stats.mean;
  }
  rep.j_mean = js / static_cast<double>(rep.tracks.size());
  rep.f_mean = fs / static_cast<double>(rep.tracks.size());
  rep.jf_mean = 0.5 * (rep.j_mean + rep.f_mean);
  return rep;
}

}  // namespace vmos
