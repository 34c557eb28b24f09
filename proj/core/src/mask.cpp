#include "vmos/mask.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "vmos/errors.hpp"

namespace vmos {

std::size_t BinaryMask::area() const noexcept {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::vector<std::uint32_t> InstanceMask::ids() const {
  std::set<std::uint32_t> s(labels.begin(), labels.end());
  s.erase(0);
  return {s.begin(), s.end()};
}

BinaryMask InstanceMask::select(std::uint32_t id) const {
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < labels.size(); ++i) m.bits[i] = labels[i] == id ? 1 : 0;
  return m;
}

BinaryMask InstanceMask::foreground() const {
  BinaryMask m(height, width);
  for (std::size_t i = 0; i < labels.size(); ++i) m.bits[i] = labels[i] != 0 ? 1 : 0;
  return m;
}

std::optional<Point2> centroid(const BinaryMask& mask) {
  double sy = 0.0;
  double sx = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (mask(y, x)) {
        sy += static_cast<double>(y);
        sx += static_cast<double>(x);
        ++n;
      }
    }
  }
  if (n == 0) return std::nullopt;
  return Point2{sy / static_cast<double>(n), sx / static_cast<double>(n)};
}

BinaryMask largest_component(const BinaryMask& mask) {
  const std::size_t n = mask.bits.size();
  std::vector<std::uint32_t> comp(n, 0);
  std::vector<std::size_t> stack;
  std::uint32_t next = 0;
  std::uint32_t best = 0;
  std::size_t best_size = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (!mask.bits[start] || comp[start]) continue;
    ++next;
    std::size_t size = 0;
    stack.push_back(start);
    comp[start] = next;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::size_t y = p / mask.width;
      const std::size_t x = p % mask.width;
      auto visit = [&](std::size_t q) {
        if (mask.bits[q] && !comp[q]) {
          comp[q] = next;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - mask.width);
      if (y + 1 < mask.height) visit(p + mask.width);
      if (x > 0) visit(p - 1);
      if (x + 1 < mask.width) visit(p + 1);
    }
    if (size > best_size) {
      best_size = size;
      best = next;
    }
  }
  BinaryMask out(mask.height, mask.width);
  if (best == 0) return out;
  for (std::size_t i = 0; i < n; ++i) out.bits[i] = comp[i] == best ? 1 : 0;
  return out;
}

Tensor3 area_downsample(const BinaryMask& mask, std::size_t stride) {
  require(stride >= 1, "area_downsample: stride must be positive");
  const std::size_t gh = (mask.height + stride - 1) / stride;
  const std::size_t gw = (mask.width + stride - 1) / stride;
  Tensor3 out(1, gh, gw);
  for (std::size_t cy = 0; cy < gh; ++cy) {
    const std::size_t y1 = std::min(mask.height, (cy + 1) * stride);
    for (std::size_t cx = 0; cx < gw; ++cx) {
      const std::size_t x1 = std::min(mask.width, (cx + 1) * stride);
      std::size_t on = 0;
      std::size_t total = 0;
      for (std::size_t y = cy * stride; y < y1; ++y)
        for (std::size_t x = cx * stride; x < x1; ++x) {
          on += mask(y, x) ? 1 : 0;
          ++total;
        }
      out(0, cy, cx) = static_cast<double>(on) / static_cast<double>(total);
    }
  }
  return out;
}

BinaryMask threshold(const Tensor3& map, double thr, std::size_t channel) {
  require(channel < map.channels(), "threshold: channel out of range");
  BinaryMask m(map.height(), map.width());
  const auto p = map.plane(channel);
  for (std::size_t i = 0; i < p.size(); ++i) m.bits[i] = p[i] > thr ? 1 : 0;
  return m;
}

}  // namespace vmos
