#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "vmos/mask.hpp"
#include "vmos/tensor.hpp"

namespace vmos {

/// RGB image with values in [0, 1], stored interleaved row-major (y, x, c).
struct Frame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> rgb;

  Frame() = default;
  Frame(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), rgb(h * w * 3, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t c) noexcept { return rgb[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const noexcept { return rgb[(y * width + x) * 3 + c]; }
  void validate() const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

struct FeatureConfig {
  std::size_t stride = 16;
  std::size_t channels = 32;
  // Box-filter radii standing in for the three dilated ASPP branches.
  std::array<std::size_t, 3> box_radii{6, 12, 18};

  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

// Layout of the handcrafted recipe before it is tiled to `channels`.
namespace feature_channel {
inline constexpr std::size_t kMeanR = 0;
inline constexpr std::size_t kStdR = 3;
inline constexpr std::size_t kGradX = 6;
inline constexpr std::size_t kGradY = 7;
inline constexpr std::size_t kHist = 8;  // 8 orientation bins
inline constexpr std::size_t kBox = 16;  // 3 scales
inline constexpr std::size_t kPosX = 19;
inline constexpr std::size_t kPosY = 20;
// Guidance features reuse the two position slots.
inline constexpr std::size_t kForeground = 19;
inline constexpr std::size_t kInstanceCount = 20;
inline constexpr std::size_t kBase = 21;
}  // namespace feature_channel

struct FeatureBundle {
  Tensor3 sal;
  Tensor3 ins;
  std::size_t stride = 16;
};

/// Handcrafted per-cell features at `stride` with channels tiled to
/// `channels` (channel c holds recipe entry c mod 21). This is the
/// unpermuted view used for low-level skip features and the tracker.
Tensor3 extract_base_features(const Frame& frame, std::size_t stride, std::size_t channels,
                              const std::array<std::size_t, 3>& box_radii = {6, 12, 18});

/// Task features for the two heads. `ins` is `sal` with channels reversed.
FeatureBundle extract_task_features(const Frame& frame, const FeatureConfig& config);

/// Features of the previous frame stacked with its segmentation: the
/// position channels become foreground fraction and distinct-instance count.
Tensor3 extract_guidance_features(const Frame& prev_frame, const InstanceMask& prev_mask,
                                  const FeatureConfig& config);

}  // namespace vmos
