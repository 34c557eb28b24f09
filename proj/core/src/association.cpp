#include "vmos/association.hpp"

#include <algorithm>
#include <cmath>

#include "vmos/errors.hpp"
#include "vmos/random.hpp"

namespace vmos {

double iou(const BinaryMask& a, const BinaryMask& b) {
  require(a.same_size(b), "iou: mask sizes differ");
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
    uni += (a.bits[i] || b.bits[i]) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine: dimension mismatch");
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::vector<double> embed(const BinaryMask& mask, const Tensor3& features, std::size_t stride) {
  const Tensor3 weights = area_downsample(mask, stride);
  require(weights.height() == features.height() && weights.width() == features.width(),
          "embed: mask does not map onto the feature grid");
  const std::size_t c = features.channels();
  std::vector<double> out(c + 6, 0.0);
  const std::size_t area = mask.area();
  if (area == 0) return out;

  double wsum = 0.0;
  for (double w : weights.data()) wsum += w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const auto plane = features.plane(ch);
    double s = 0.0;
    for (std::size_t i = 0; i < plane.size(); ++i) s += weights.data()[i] * plane[i];
    out[ch] = s / wsum;
  }

  // Shape statistics in [-1, 1] coordinates.
  const double sy = 2.0 / static_cast<double>(mask.height);
  const double sx = 2.0 / static_cast<double>(mask.width);
  double my = 0.0;
  double mx = 0.0;
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x)
      if (mask(y, x)) {
        my += (static_cast<double>(y) + 0.5) * sy - 1.0;
        mx += (static_cast<double>(x) + 0.5) * sx - 1.0;
      }
  const double n = static_cast<double>(area);
  my /= n;
  mx /= n;
  double vyy = 0.0;
  double vxx = 0.0;
  double vxy = 0.0;
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x)
      if (mask(y, x)) {
        const double dy = (static_cast<double>(y) + 0.5) * sy - 1.0 - my;
        const double dx = (static_cast<double>(x) + 0.5) * sx - 1.0 - mx;
        vyy += dy * dy;
        vxx += dx * dx;
        vxy += dy * dx;
      }
  out[c + 0] = n / static_cast<double>(mask.height * mask.width);
  out[c + 1] = my;
  out[c + 2] = mx;
  out[c + 3] = vyy / n;
  out[c + 4] = vxx / n;
  out[c + 5] = vxy / n;

  double norm = 0.0;
  for (double v : out) norm += v * v;
  norm = std::sqrt(norm);
  if (norm == 0.0) return out;
  for (double& v : out) v /= norm;
  return out;
}

Segment make_segment(BinaryMask mask, const Tensor3& features, std::size_t stride) {
  std::vector<double> e = embed(mask, features, stride);
  return {std::move(mask), std::move(e)};
}

Tensor3 upsample_score(const Tensor3& score, std::size_t stride, std::size_t height, std::size_t width) {
  require(score.channels() == 1, "upsample_score: expected a single-channel map");
  require(score.height() * stride >= height && score.width() * stride >= width,
          "upsample_score: map too small for the frame");
  return crop(bilinear_upsample(score, stride), height, width);
}

BinaryMask score_to_mask(const Tensor3& score, std::size_t stride, std::size_t height, std::size_t width,
                         double thr) {
  return largest_component(threshold(upsample_score(score, stride, height, width), thr));
}

double match_score(const Segment& proposal, const Segment& latest, const Segment& first, double iou_gate) {
  if (!(iou(proposal.mask, latest.mask) > iou_gate)) return 0.0;
  const double s = cosine(proposal.embedding, latest.embedding) + cosine(proposal.embedding, first.embedding);
  return std::max(0.0, s);
}

MatchDecision verify_and_swap(Tracklet& trk, std::span<const Segment> proposals, const AssociationConfig& config,
                              std::span<const bool> claimed) {
  require(claimed.empty() || claimed.size() == proposals.size(), "verify_and_swap: claim flags size mismatch");
  MatchDecision d;
  d.tracklet = trk.id;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (!claimed.empty() && claimed[i]) continue;
    const double s = match_score(proposals[i], trk.latest, trk.first, config.iou_gate);
    if (!d.best || s > d.score) {
      d.best = i;
      d.score = s;
    }
  }
  if (d.best && d.score > config.th_reid) {
    d.reliable = true;
    trk.latest = proposals[*d.best];
  }
  return d;
}

std::vector<std::size_t> discovery_candidates(std::span<const Segment> proposals,
                                              std::span<const Tracklet> tracklets,
                                              std::span<const BinaryMask> current_masks,
                                              const AssociationConfig& config) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (proposals[i].mask.empty()) continue;
    const bool matched = std::any_of(tracklets.begin(), tracklets.end(), [&](const Tracklet& t) {
      return match_score(proposals[i], t.latest, t.first, config.iou_gate) != 0.0;
    });
    if (matched) continue;
    const bool overlaps = std::any_of(current_masks.begin(), current_masks.end(), [&](const BinaryMask& m) {
      return !(iou(proposals[i].mask, m) < config.new_target_iou);
    });
    if (!overlaps) out.push_back(i);
  }
  return out;
}

std::vector<Tracklet> discover_new_targets(std::span<const Segment> proposals,
                                           std::span<const Tracklet> tracklets,
                                           std::span<const BinaryMask> current_masks,
                                           const Tensor3& features, const SpawnConfig& spawn,
                                           std::uint32_t& next_id, const AssociationConfig& config) {
  std::vector<Tracklet> born;
  for (std::size_t i : discovery_candidates(proposals, tracklets, current_masks, config)) {
    Tracklet t;
    t.id = next_id++;
    t.first = proposals[i];
    t.latest = proposals[i];
    InitResult init = init_model(proposals[i].mask, features, spawn.appearance, mix_seed(spawn.seed, t.id));
    t.model = std::move(init.model);
    t.memory.emplace(std::move(init.sample), spawn.memory);
    born.push_back(std::move(t));
  }
  return born;
}

InstanceMask resolve_overlaps(std::span<const BinaryMask> masks, std::span<const Tensor3> scores,
                              std::span<const std::uint32_t> ids) {
  require(masks.size() == scores.size() && masks.size() == ids.size(), "resolve_overlaps: input sizes differ");
  if (masks.empty()) return {};
  const std::size_t h = masks[0].height;
  const std::size_t w = masks[0].width;
  for (std::size_t k = 0; k < masks.size(); ++k) {
    require(masks[k].height == h && masks[k].width == w, "resolve_overlaps: mask sizes differ");
    require(scores[k].shape() == Shape3{1, h, w}, "resolve_overlaps: score map does not match its mask");
    require(ids[k] != 0, "resolve_overlaps: id 0 is reserved for background");
  }
  InstanceMask out(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < masks.size(); ++k) {
      if (!masks[k].bits[i]) continue;
      if (!best) {
        best = k;
        continue;
      }
      const double s = scores[k].data()[i];
      const double sb = scores[*best].data()[i];
      if (s > sb || (s == sb && ids[k] < ids[*best])) best = k;
    }
    if (best) out.labels[i] = ids[*best];
  }
  return out;
}

}  // namespace vmos
