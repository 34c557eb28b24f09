#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "vmos/tensor.hpp"

namespace vmos {

/// Per-pixel binary raster (0/1), row-major.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, bool value = false)
      : height(h), width(w), bits(h * w, value ? 1 : 0) {}

  bool operator()(std::size_t y, std::size_t x) const noexcept { return bits[y * width + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v) noexcept { bits[y * width + x] = v ? 1 : 0; }
  std::size_t area() const noexcept;
  bool empty() const noexcept { return area() == 0; }
  bool same_size(const BinaryMask& o) const noexcept { return height == o.height && width == o.width; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Per-pixel instance labels; 0 is background. One label per pixel, so
/// instances never overlap.
struct InstanceMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> labels;

  InstanceMask() = default;
  InstanceMask(std::size_t h, std::size_t w) : height(h), width(w), labels(h * w, 0) {}

  std::uint32_t operator()(std::size_t y, std::size_t x) const noexcept { return labels[y * width + x]; }
  std::uint32_t& at(std::size_t y, std::size_t x) noexcept { return labels[y * width + x]; }

  // Sorted distinct nonzero labels.
  std::vector<std::uint32_t> ids() const;
  BinaryMask select(std::uint32_t id) const;
  BinaryMask foreground() const;

  friend bool operator==(const InstanceMask&, const InstanceMask&) = default;
};

struct Point2 {
  double y = 0.0;
  double x = 0.0;
};

// Mean pixel coordinate; nullopt for an empty mask.
std::optional<Point2> centroid(const BinaryMask& mask);

// Largest 4-connected component; ties go to the component reached first in
// raster order.
BinaryMask largest_component(const BinaryMask& mask);

// Fraction of covered pixels in each stride x stride cell (ceil grid).
Tensor3 area_downsample(const BinaryMask& mask, std::size_t stride);

BinaryMask threshold(const Tensor3& map, double thr, std::size_t channel = 0);

}  // namespace vmos
