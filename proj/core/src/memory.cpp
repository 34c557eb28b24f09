#include "vmos/memory.hpp"

#include <utility>

#include "vmos/errors.hpp"

namespace vmos {

MemoryBank::MemoryBank(TrainSample initial, const MemoryConfig& config) : config_(config) {
  require(config.gamma > 0.0 && config.gamma < 1.0, "MemoryBank: gamma must lie in (0, 1)");
  require(config.capacity >= 2, "MemoryBank: capacity must hold the pseudo label and one more sample");
  require(config.update_period >= 1, "MemoryBank: update period must be positive");
  initial.alpha = config.gamma;
  last_base_ = config.gamma;
  samples_.push_back(std::move(initial));
  normalize();
}

void MemoryBank::push(Tensor3 features, Tensor3 target, bool reliable, bool with_gram) {
  const double base = last_base_ / (1.0 - config_.gamma);
  last_base_ = base;
  samples_.push_back(make_sample(std::move(features), std::move(target), reliable ? 2.0 * base : base, with_gram));

  if (samples_.size() > config_.capacity) {
    std::size_t victim = 1;
    for (std::size_t i = 2; i < samples_.size(); ++i) {
      if (samples_[i].alpha < samples_[victim].alpha) victim = i;
    }
    samples_.erase(samples_.begin() + static_cast<std::ptrdiff_t>(victim));
  }
  normalize();
}

void MemoryBank::normalize() {
  double total = 0.0;
  for (const auto& s : samples_) total += s.alpha;
  for (auto& s : samples_) s.alpha /= total;
  last_base_ /= total;
}

bool MemoryBank::should_update(bool reliable) {
  ++frames_since_update_;
  if (reliable || frames_since_update_ >= config_.update_period) {
    frames_since_update_ = 0;
    return true;
  }
  return false;
}

std::vector<double> MemoryBank::weights() const {
  std::vector<double> w;
  w.reserve(samples_.size());
  for (const auto& s : samples_) w.push_back(s.alpha);
  return w;
}

}  // namespace vmos
