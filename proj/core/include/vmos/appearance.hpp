#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "vmos/mask.hpp"
#include "vmos/tensor.hpp"

namespace vmos {

struct AppearanceConfig {
  std::size_t hidden = 96;  // output channels of the 1x1 layer
  std::size_t stride = 4;   // score-map stride relative to the frame
  double lambda1 = 1e-2;
  double lambda2 = 1e-2;
  double damping = 1e-4;
  std::size_t iters_init = 5;
  std::size_t iters_update = 2;
  std::size_t iters_cg = 10;
  bool relu = false;  // activation between the two layers
  double w2_init_scale = 0.01;

  friend bool operator==(const AppearanceConfig&, const AppearanceConfig&) = default;
};

/// Target score predictor S = W2 * act(W1 * X): W1 is 1x1 (C -> hidden),
/// W2 is 3x3 (hidden -> 1). W1 carries no bias; W2's scalar bias is fitted
/// but not regularized.
struct AppearanceModel {
  ConvKernel w1;
  ConvKernel w2;
  double lambda1 = 1e-2;
  double lambda2 = 1e-2;
  bool relu = false;

  std::size_t in_channels() const noexcept { return w1.in_channels; }
  std::size_t hidden() const noexcept { return w1.out_channels; }

  /// W1 uniform in +-1/sqrt(C), W2 uniform in +-w2_init_scale.
  static AppearanceModel seeded(std::size_t channels, const AppearanceConfig& config,
                                std::uint64_t seed);
  void validate() const;

  friend bool operator==(const AppearanceModel&, const AppearanceModel&) = default;
};

/// Sufficient statistics of one sample for the linear model: with P the
/// 3x3 patch matrix of X augmented by a constant column,
/// hessian = P^T P, rhs = P^T y, target_sq = y^T y.
struct GramStats {
  std::size_t dim = 0;  // 9 * C + 1
  std::vector<double> hessian;
  std::vector<double> rhs;
  double target_sq = 0.0;
};

GramStats compute_gram(const Tensor3& features, const Tensor3& target);

struct TrainSample {
  Tensor3 features;
  Tensor3 target;  // 1 x H x W soft labels in [0, 1]
  double alpha = 1.0;
  std::shared_ptr<const GramStats> gram;  // optional cache for the linear solver
};

/// Builds a sample and, when `with_gram` is set, its cached statistics.
TrainSample make_sample(Tensor3 features, Tensor3 target, double alpha, bool with_gram = true);

Tensor3 predict(const AppearanceModel& model, const Tensor3& features);

/// sum_j alpha_j |predict(X_j) - y_j|^2 + lambda1 |W1|^2 + lambda2 |W2|^2.
double objective(const AppearanceModel& model, std::span<const TrainSample> bank);

enum class SolverPath {
  kAuto,    // Gram statistics when the model is linear and every sample has them
  kDirect,  // explicit residuals through the convolution layers
  kGram,
};

struct FitOptions {
  std::size_t iters_outer = 5;
  std::size_t iters_cg = 10;
  double damping = 1e-4;
  bool fit_w1 = true;
  SolverPath path = SolverPath::kAuto;
};

struct FitResult {
  AppearanceModel model;
  std::vector<double> trace;  // objective before the first and after every outer iteration
  std::vector<double> first_step;  // search direction of the first iteration
};

/// Damped Gauss-Newton: each outer iteration solves
/// (J^T J + damping I) d = -J^T r with zero-initialized conjugate gradient,
/// then halves the step (up to 8 times) until the objective does not grow.
/// Throws NumericalError on a non-finite objective.
FitResult gauss_newton_fit(AppearanceModel model, std::span<const TrainSample> bank,
                           const FitOptions& options);

struct InitResult {
  AppearanceModel model;
  TrainSample sample;
  std::vector<double> trace;
};

/// Fits a fresh model to a single pseudo-label: the mask is area-averaged
/// onto the feature grid and becomes the first memory sample.
InitResult init_model(const BinaryMask& pseudo_gt, const Tensor3& features,
                      const AppearanceConfig& config, std::uint64_t seed);

/// Process-wide counters over every gauss_newton_fit call.
struct FitCounters {
  std::size_t fits = 0;
  std::size_t non_monotone = 0;  // traces with an increase; must stay zero
};
FitCounters fit_counters();

}  // namespace vmos
