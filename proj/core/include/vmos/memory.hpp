#pragma once

#include <cstddef>
#include <vector>

#include "vmos/appearance.hpp"

namespace vmos {

struct MemoryConfig {
  double gamma = 0.1;
  std::size_t capacity = 32;
  std::size_t update_period = 8;

  friend bool operator==(const MemoryConfig&, const MemoryConfig&) = default;
};

/// Weighted training set of one target. The first sample (the pseudo label)
/// enters with weight gamma; each later sample gets the previous base weight
/// divided by (1 - gamma), doubled when reliable. Weights are renormalized
/// to sum to one after every push.
class MemoryBank {
 public:
  MemoryBank(TrainSample initial, const MemoryConfig& config = {});

  void push(Tensor3 features, Tensor3 target, bool reliable, bool with_gram = true);

  /// Counts frames since the last refit; true (and resets) when the frame is
  /// reliable or the period has elapsed.
  bool should_update(bool reliable);

  const std::vector<TrainSample>& samples() const noexcept { return samples_; }
  std::vector<double> weights() const;
  std::size_t size() const noexcept { return samples_.size(); }
  std::size_t frames_since_update() const noexcept { return frames_since_update_; }
  const MemoryConfig& config() const noexcept { return config_; }

 private:
  void normalize();

  MemoryConfig config_;
  std::vector<TrainSample> samples_;  // samples_[0] is the pseudo label
  double last_base_ = 0.0;            // undoubled weight of the newest sample, same units as alphas
  std::size_t frames_since_update_ = 0;
};

}  // namespace vmos
