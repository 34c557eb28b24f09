#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vmos/mask.hpp"
#include "vmos/tensor.hpp"

namespace vmos {

struct HeadConfig {
  std::size_t feature_channels = 32;  // channels of the fused stride-16 feature
  std::size_t low_channels = 32;      // channels of each skip feature (strides 8 and 4)
  std::size_t width = 16;             // decoder width
  std::size_t head_stride = 4;        // resolution of the 1x1 output before the final upsample

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

/// upsample x2, concat stride-8 skip, 5x5 conv, upsample x2, concat stride-4
/// skip, two 5x5 convs, 1x1 output. ReLU follows each 5x5 conv.
struct DecoderParams {
  ConvKernel conv_a;
  ConvKernel conv_b;
  ConvKernel conv_c;
  ConvKernel conv_out;

  friend bool operator==(const DecoderParams&, const DecoderParams&) = default;
};

struct HeadParams {
  HeadConfig config;
  DecoderParams salient;   // 1 output: foreground logit
  DecoderParams instance;  // 3 outputs: center logit, dy, dx

  static HeadParams zeros(const HeadConfig& config);
  static HeadParams seeded(const HeadConfig& config, std::uint64_t seed);
  void validate() const;

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

struct LowLevelFeatures {
  Tensor3 stride8;
  Tensor3 stride4;
};

/// Foreground probability at frame resolution (1 x out_h x out_w).
Tensor3 salient_forward(const Tensor3& feat, const LowLevelFeatures& low, const DecoderParams& params,
                        std::size_t head_stride, std::size_t out_h, std::size_t out_w);

struct InstanceOutput {
  Tensor3 heatmap;  // 1 x h x w, logistic
  Tensor3 offsets;  // 2 x h x w (dy, dx) in frame pixels
};

/// Offsets are predicted in head-stride units and scaled by the stride when
/// brought to frame resolution.
InstanceOutput instance_forward(const Tensor3& feat, const LowLevelFeatures& low,
                                const DecoderParams& params, std::size_t head_stride,
                                std::size_t out_h, std::size_t out_w);

// ---- targets and losses --------------------------------------------------

struct InstanceCenter {
  std::uint32_t id = 0;
  Point2 center;
};

// Centroid of every instance, ordered by id.
std::vector<InstanceCenter> instance_centers(const InstanceMask& gt);

/// max_k exp(-|p - c_k|^2 / (2 sigma^2)); all zero without instances.
Tensor3 encode_center_targets(const InstanceMask& gt, double sigma = 10.0);

struct OffsetTargets {
  Tensor3 offsets;  // 2 x h x w, c_k - p on foreground, 0 elsewhere
  BinaryMask valid;
};
OffsetTargets encode_offset_targets(const InstanceMask& gt);

/// Mean binary cross-entropy, predictions clamped to [1e-7, 1 - 1e-7].
/// Throws ContractError when a prediction is outside (0, 1).
double loss_salient(const Tensor3& pred, const BinaryMask& gt_foreground);
double loss_center(const Tensor3& pred, const Tensor3& target);
/// Mean absolute error over both components of the valid pixels.
double loss_offset(const Tensor3& pred, const Tensor3& target, const BinaryMask& valid);

// ---- inference-time grouping -------------------------------------------

struct CenterPeak {
  std::size_t y = 0;
  std::size_t x = 0;
  double score = 0.0;

  friend bool operator==(const CenterPeak&, const CenterPeak&) = default;
};

/// Window-maximum peaks above `threshold`, equal values resolved in favour of
/// the lexicographically smallest (y, x). At most top_k, sorted by score
/// (descending) then position.
std::vector<CenterPeak> detect_centers(const Tensor3& heatmap, std::size_t nms_window = 7,
                                       double threshold = 0.1, std::size_t top_k = 50);

struct Proposal {
  BinaryMask mask;
  Point2 center;
  double score = 0.0;
  std::uint32_t label = 0;  // label in the grouping InstanceMask
};

struct Grouping {
  InstanceMask labels;  // center k -> label k + 1
  std::vector<Proposal> proposals;
};

/// Each foreground pixel p goes to argmin_k |p + offset(p) - c_k| (ties to
/// the lower index). Proposals are the largest connected piece of each
/// center's pixels; centers without pixels yield no proposal.
Grouping group_instances(const BinaryMask& foreground, const Tensor3& offsets,
                         std::span<const CenterPeak> centers);

// ---- training ------------------------------------------------------------

struct HeadTargets {
  BinaryMask foreground;
  Tensor3 center;
  OffsetTargets offset;
};
HeadTargets make_head_targets(const InstanceMask& gt, double sigma = 10.0);

/// One training sample: fused stride-16 features for both heads, the skip
/// features, and precomputed targets at frame resolution.
struct HeadExample {
  Tensor3 sal;
  Tensor3 ins;
  LowLevelFeatures low;
  HeadTargets targets;
};

struct HeadLoss {
  double salient = 0.0;
  double center = 0.0;
  double offset = 0.0;
  double total() const noexcept { return salient + center + offset; }
};

struct LossWeights {
  double salient = 1.0;
  double center = 1.0;
  double offset = 1.0;
};

HeadLoss head_loss(const HeadExample& example, const HeadParams& params);
/// Adds the gradient of the weighted loss sum into `grad`, which must have
/// params' shape. The returned components are unweighted.
HeadLoss head_loss_and_gradient(const HeadExample& example, const HeadParams& params,
                                HeadParams& grad, const LossWeights& weights = {});

struct HeadTrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 40;
  std::size_t batch_size = 4;
  bool poly_schedule = true;  // lr * (1 - step/steps)^0.9
  std::uint64_t seed = 0;     // sample order

  friend bool operator==(const HeadTrainConfig&, const HeadTrainConfig&) = default;
};

struct HeadTrainResult {
  HeadParams params;
  std::vector<double> epoch_loss;  // mean total loss seen during each epoch
};

/// Momentum SGD on the summed salient, center and offset losses.
/// Throws NumericalError if the loss becomes non-finite.
HeadTrainResult train_heads(std::span<const HeadExample> examples, HeadParams init,
                            const HeadTrainConfig& config,
                            const std::function<void(std::size_t, double)>& on_epoch = {});

/// Named view of one weight or bias array, used by the optimizer and the
/// parameter file.
struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> values;
};
std::vector<ParamBlock> parameter_blocks(HeadParams& params);

}  // namespace vmos
