#include "vmos/sgm.hpp"

#include <algorithm>
#include <cmath>

#include "vmos/errors.hpp"
#include "vmos/random.hpp"

namespace vmos {

std::size_t SgmParams::default_hidden(std::size_t channels) { return std::max<std::size_t>(8, channels / 2); }

SgmParams SgmParams::zeros(std::size_t channels, std::size_t hidden) {
  SgmParams p;
  p.channels = channels;
  p.hidden = hidden;
  p.fc1_weight.assign(hidden * 2 * channels, 0.0);
  p.fc1_bias.assign(hidden, 0.0);
  p.fc2_weight.assign(2 * channels * hidden, 0.0);
  p.fc2_bias.assign(2 * channels, 0.0);
  return p;
}

SgmParams SgmParams::seeded(std::size_t channels, std::size_t hidden, std::uint64_t seed) {
  SgmParams p = zeros(channels, hidden);
  Rng rng(seed);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(2 * channels));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (double& v : p.fc1_weight) v = rng.uniform(-s1, s1);
  for (double& v : p.fc2_weight) v = rng.uniform(-s2, s2);
  return p;
}

void SgmParams::validate() const {
  require(channels > 0 && hidden > 0, "SgmParams: sizes must be positive");
  require(fc1_weight.size() == hidden * 2 * channels && fc1_bias.size() == hidden &&
              fc2_weight.size() == 2 * channels * hidden && fc2_bias.size() == 2 * channels,
          "SgmParams: parameter sizes are inconsistent");
}

std::vector<double> squeeze(const Tensor3& x) { return global_avg_pool(x); }

FusionWeights excite(std::span<const double> c_task, std::span<const double> c_guid,
                     const SgmParams& params) {
  params.validate();
  const std::size_t c = params.channels;
  require(c_task.size() == c && c_guid.size() == c,
          "excite: descriptor length does not match parameter channels");
  std::vector<double> desc(c_task.begin(), c_task.end());
  desc.insert(desc.end(), c_guid.begin(), c_guid.end());

  std::vector<double> hidden(params.hidden);
  for (std::size_t j = 0; j < params.hidden; ++j) {
    double s = params.fc1_bias[j];
    for (std::size_t i = 0; i < 2 * c; ++i) s += params.fc1_weight[j * 2 * c + i] * desc[i];
    hidden[j] = s > 0.0 ? s : 0.0;
  }
  std::vector<double> logits(2 * c);
  for (std::size_t i = 0; i < 2 * c; ++i) {
    double s = params.fc2_bias[i];
    for (std::size_t j = 0; j < params.hidden; ++j) s += params.fc2_weight[i * params.hidden + j] * hidden[j];
    logits[i] = s;
  }
  const std::vector<double> z = softmax_pairwise(logits);
  FusionWeights w;
  w.alpha.assign(z.begin(), z.begin() + static_cast<std::ptrdiff_t>(c));
  w.beta.assign(z.begin() + static_cast<std::ptrdiff_t>(c), z.end());
  return w;
}

Tensor3 fuse(const Tensor3& x_task, const Tensor3& x_guid, const FusionWeights& w) {
  require(x_task.shape() == x_guid.shape(), "fuse: task and guidance shapes differ");
  require(w.alpha.size() == x_task.channels() && w.beta.size() == x_task.channels(),
          "fuse: fusion weight length does not match channels");
  Tensor3 out(x_task.shape());
  for (std::size_t c = 0; c < x_task.channels(); ++c) {
    const double a = w.alpha[c];
    const double b = w.beta[c];
    const auto t = x_task.plane(c);
    const auto g = x_guid.plane(c);
    auto d = out.plane(c);
    for (std::size_t i = 0; i < d.size(); ++i) {
      // a + b may sit one ulp away from 1; keep the result inside the hull.
      const double lo = std::min(t[i], g[i]);
      const double hi = std::max(t[i], g[i]);
      d[i] = std::clamp(a * t[i] + b * g[i], lo, hi);
    }
  }
  return out;
}

Tensor3 guide(const Tensor3& x_task, const Tensor3& x_guid, const SgmParams& params) {
  require(x_task.shape() == x_guid.shape(), "guide: task and guidance shapes differ");
  const auto c_task = squeeze(x_task);
  const auto c_guid = squeeze(x_guid);
  return fuse(x_task, x_guid, excite(c_task, c_guid, params));
}

}  // namespace vmos
