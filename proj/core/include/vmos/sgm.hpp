#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "vmos/tensor.hpp"

namespace vmos {

/// Excitation MLP of a guidance module: fc1 (hidden x 2C), ReLU, fc2 (2C x hidden).
struct SgmParams {
  std::size_t channels = 0;
  std::size_t hidden = 0;
  std::vector<double> fc1_weight;  // row-major hidden x 2C
  std::vector<double> fc1_bias;    // hidden
  std::vector<double> fc2_weight;  // row-major 2C x hidden
  std::vector<double> fc2_bias;    // 2C

  static std::size_t default_hidden(std::size_t channels);
  static SgmParams zeros(std::size_t channels, std::size_t hidden);
  // Uniform in +-1/sqrt(fan_in), biases zero.
  static SgmParams seeded(std::size_t channels, std::size_t hidden, std::uint64_t seed);
  void validate() const;

  friend bool operator==(const SgmParams&, const SgmParams&) = default;
};

struct FusionWeights {
  std::vector<double> alpha;  // weight of the current-frame task feature
  std::vector<double> beta;   // weight of the guidance feature
};

std::vector<double> squeeze(const Tensor3& x);

FusionWeights excite(std::span<const double> c_task, std::span<const double> c_guid,
                     const SgmParams& params);

Tensor3 fuse(const Tensor3& x_task, const Tensor3& x_guid, const FusionWeights& w);

/// squeeze -> excite -> fuse.
Tensor3 guide(const Tensor3& x_task, const Tensor3& x_guid, const SgmParams& params);

}  // namespace vmos
