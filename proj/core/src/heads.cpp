#include "vmos/heads.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "vmos/errors.hpp"
#include "vmos/random.hpp"

namespace vmos {

namespace {

constexpr std::size_t kKernel = 5;

DecoderParams decoder_zeros(const HeadConfig& c, std::size_t outputs) {
  return {ConvKernel::zeros(c.width, c.feature_channels + c.low_channels, kKernel, kKernel),
          ConvKernel::zeros(c.width, c.width + c.low_channels, kKernel, kKernel),
          ConvKernel::zeros(c.width, c.width, kKernel, kKernel),
          ConvKernel::zeros(outputs, c.width, 1, 1)};
}

void fill_uniform(ConvKernel& k, Rng& rng, double gain) {
  const double fan_in = static_cast<double>(k.in_channels * k.kernel_h * k.kernel_w);
  const double bound = gain / std::sqrt(fan_in);
  for (double& v : k.weights) v = rng.uniform(-bound, bound);
}

void seed_decoder(DecoderParams& d, Rng& rng) {
  const double he = std::sqrt(6.0);
  fill_uniform(d.conv_a, rng, he);
  fill_uniform(d.conv_b, rng, he);
  fill_uniform(d.conv_c, rng, he);
  fill_uniform(d.conv_out, rng, 1.0);
}

Tensor3 slice_channels(const Tensor3& t, std::size_t begin, std::size_t count) {
  Tensor3 out(count, t.height(), t.width());
  for (std::size_t c = 0; c < count; ++c) {
    const auto src = t.plane(begin + c);
    std::copy(src.begin(), src.end(), out.plane(c).begin());
  }
  return out;
}

struct DecoderCache {
  Tensor3 cat_a;
  Tensor3 a_pre;
  Tensor3 a;
  Shape3 a_up_shape;
  Tensor3 cat_b;
  Tensor3 b_pre;
  Tensor3 b;
  Tensor3 c_pre;
  Tensor3 c;
  Shape3 logits_shape;
  Shape3 full_shape;
};

// Frame-resolution logits of the decoder.
Tensor3 decoder_forward(const Tensor3& feat, const LowLevelFeatures& low, const DecoderParams& p,
                        std::size_t head_stride, std::size_t out_h, std::size_t out_w,
                        DecoderCache* cache) {
  const std::size_t h8 = low.stride8.height();
  const std::size_t w8 = low.stride8.width();
  const std::size_t h4 = low.stride4.height();
  const std::size_t w4 = low.stride4.width();
  require(feat.height() * 2 >= h8 && feat.width() * 2 >= w8 && h8 * 2 >= h4 && w8 * 2 >= w4,
          "decoder: skip feature grids do not match the stride-16 feature");
  require(h4 * head_stride >= out_h && w4 * head_stride >= out_w,
          "decoder: output size exceeds the head grid");

  Tensor3 cat_a = concat_channels(crop(bilinear_upsample(feat, 2), h8, w8), low.stride8);
  Tensor3 a_pre = conv2d(cat_a, p.conv_a);
  Tensor3 a = relu(a_pre);
  Tensor3 a_up = bilinear_upsample(a, 2);
  const Shape3 a_up_shape = a_up.shape();
  Tensor3 cat_b = concat_channels(crop(a_up, h4, w4), low.stride4);
  Tensor3 b_pre = conv2d(cat_b, p.conv_b);
  Tensor3 b = relu(b_pre);
  Tensor3 c_pre = conv2d(b, p.conv_c);
  Tensor3 c = relu(c_pre);
  Tensor3 logits = conv2d(c, p.conv_out);
  Tensor3 full = bilinear_upsample(logits, head_stride);
  const Shape3 full_shape = full.shape();
  Tensor3 out = crop(full, out_h, out_w);
  if (cache) {
    *cache = {std::move(cat_a), std::move(a_pre), std::move(a), a_up_shape, std::move(cat_b),
              std::move(b_pre), std::move(b), std::move(c_pre), std::move(c), logits.shape(),
              full_shape};
  }
  return out;
}

void accumulate(ConvKernel& dst, const ConvKernel& src) {
  for (std::size_t i = 0; i < dst.weights.size(); ++i) dst.weights[i] += src.weights[i];
  for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += src.bias[i];
}

void decoder_backward(const DecoderCache& cache, const DecoderParams& p, std::size_t head_stride,
                      const Tensor3& grad_logits, DecoderParams& grad) {
  const Tensor3 g_full = crop_backward(cache.full_shape, grad_logits);
  const Tensor3 g_logits = bilinear_upsample_backward(cache.logits_shape, head_stride, g_full);

  ConvGradients g_out = conv2d_backward(cache.c, p.conv_out, g_logits);
  accumulate(grad.conv_out, g_out.kernel);
  ConvGradients g_c = conv2d_backward(cache.b, p.conv_c, relu_backward(cache.c_pre, g_out.input));
  accumulate(grad.conv_c, g_c.kernel);
  // Only the decoder part of the concatenation needs an input gradient.
  const std::size_t width = cache.a.channels();
  ConvGradients g_b = conv2d_backward(cache.cat_b, p.conv_b, relu_backward(cache.b_pre, g_c.input), width);
  accumulate(grad.conv_b, g_b.kernel);

  const Tensor3 g_a_up = crop_backward(cache.a_up_shape, slice_channels(g_b.input, 0, width));
  const Tensor3 g_a = relu_backward(cache.a_pre, bilinear_upsample_backward(cache.a.shape(), 2, g_a_up));
  ConvGradients g_a_conv = conv2d_backward(cache.cat_a, p.conv_a, g_a, 0);
  accumulate(grad.conv_a, g_a_conv.kernel);
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + e^z) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct Frames {
  std::size_t h;
  std::size_t w;
};

Frames frame_size(const HeadExample& ex) {
  return {ex.targets.foreground.height, ex.targets.foreground.width};
}

}  // namespace

// ---- parameters ------------------------------------------------------------

HeadParams HeadParams::zeros(const HeadConfig& config) {
  return {config, decoder_zeros(config, 1), decoder_zeros(config, 3)};
}

HeadParams HeadParams::seeded(const HeadConfig& config, std::uint64_t seed) {
  HeadParams p = zeros(config);
  Rng rng(seed);
  seed_decoder(p.salient, rng);
  seed_decoder(p.instance, rng);
  // Start the center logit low: most of the target heatmap is near zero.
  p.instance.conv_out.bias[0] = -2.0;
  return p;
}

void HeadParams::validate() const {
  const HeadParams ref = zeros(config);
  auto check = [](const DecoderParams& d, const DecoderParams& r, const char* which) {
    for (auto [k, kr] : {std::pair{&d.conv_a, &r.conv_a}, std::pair{&d.conv_b, &r.conv_b},
                         std::pair{&d.conv_c, &r.conv_c}, std::pair{&d.conv_out, &r.conv_out}}) {
      require(k->same_shape(*kr), std::string("HeadParams: ") + which + " decoder shape mismatch");
      k->validate();
    }
  };
  check(salient, ref.salient, "salient");
  check(instance, ref.instance, "instance");
}

std::vector<ParamBlock> parameter_blocks(HeadParams& params) {
  std::vector<ParamBlock> blocks;
  auto add_kernel = [&](const std::string& name, ConvKernel& k) {
    blocks.push_back({name + ".weight", {k.out_channels, k.in_channels, k.kernel_h, k.kernel_w},
                      std::span<double>(k.weights)});
    blocks.push_back({name + ".bias", {k.out_channels}, std::span<double>(k.bias)});
  };
  auto add_decoder = [&](const std::string& prefix, DecoderParams& d) {
    add_kernel(prefix + ".conv_a", d.conv_a);
    add_kernel(prefix + ".conv_b", d.conv_b);
    add_kernel(prefix + ".conv_c", d.conv_c);
    add_kernel(prefix + ".conv_out", d.conv_out);
  };
  add_decoder("salient", params.salient);
  add_decoder("instance", params.instance);
  return blocks;
}

// ---- forward -----------------------------------------------------------------

Tensor3 salient_forward(const Tensor3& feat, const LowLevelFeatures& low, const DecoderParams& params,
                        std::size_t head_stride, std::size_t out_h, std::size_t out_w) {
  require(params.conv_out.out_channels == 1, "salient_forward: decoder must have one output");
  return sigmoid(decoder_forward(feat, low, params, head_stride, out_h, out_w, nullptr));
}

InstanceOutput instance_forward(const Tensor3& feat, const LowLevelFeatures& low,
                                const DecoderParams& params, std::size_t head_stride,
                                std::size_t out_h, std::size_t out_w) {
  require(params.conv_out.out_channels == 3, "instance_forward: decoder must have three outputs");
  const Tensor3 logits = decoder_forward(feat, low, params, head_stride, out_h, out_w, nullptr);
  InstanceOutput out{sigmoid(slice_channels(logits, 0, 1)),
                     scale(slice_channels(logits, 1, 2), static_cast<double>(head_stride))};
  return out;
}

// ---- targets -------------------------------------------------------------------

std::vector<InstanceCenter> instance_centers(const InstanceMask& gt) {
  std::vector<InstanceCenter> out;
  for (std::uint32_t id : gt.ids()) {
    if (auto c = centroid(gt.select(id))) out.push_back({id, *c});
  }
  return out;
}

Tensor3 encode_center_targets(const InstanceMask& gt, double sigma) {
  require(sigma > 0.0, "encode_center_targets: sigma must be positive");
  Tensor3 t(1, gt.height, gt.width);
  const auto centers = instance_centers(gt);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t y = 0; y < gt.height; ++y) {
    for (std::size_t x = 0; x < gt.width; ++x) {
      double best = 0.0;
      for (const auto& c : centers) {
        const double dy = static_cast<double>(y) - c.center.y;
        const double dx = static_cast<double>(x) - c.center.x;
        best = std::max(best, std::exp(-(dy * dy + dx * dx) * inv));
      }
      t(0, y, x) = best;
    }
  }
  return t;
}

OffsetTargets encode_offset_targets(const InstanceMask& gt) {
  OffsetTargets out{Tensor3(2, gt.height, gt.width), BinaryMask(gt.height, gt.width)};
  for (const auto& c : instance_centers(gt)) {
    for (std::size_t y = 0; y < gt.height; ++y) {
      for (std::size_t x = 0; x < gt.width; ++x) {
        if (gt(y, x) != c.id) continue;
        out.offsets(0, y, x) = c.center.y - static_cast<double>(y);
        out.offsets(1, y, x) = c.center.x - static_cast<double>(x);
        out.valid.set(y, x, true);
      }
    }
  }
  return out;
}

HeadTargets make_head_targets(const InstanceMask& gt, double sigma) {
  return {gt.foreground(), encode_center_targets(gt, sigma), encode_offset_targets(gt)};
}

// ---- losses --------------------------------------------------------------------

double loss_salient(const Tensor3& pred, const BinaryMask& gt_foreground) {
  require(pred.channels() == 1 && pred.height() == gt_foreground.height &&
              pred.width() == gt_foreground.width,
          "loss_salient: prediction and ground truth sizes differ");
  constexpr double kEps = 1e-7;
  double sum = 0.0;
  const auto p = pred.plane(0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] > 0.0 && p[i] < 1.0, "loss_salient: prediction outside (0, 1)");
    const double q = std::clamp(p[i], kEps, 1.0 - kEps);
    sum -= gt_foreground.bits[i] ? std::log(q) : std::log(1.0 - q);
  }
  return p.empty() ? 0.0 : sum / static_cast<double>(p.size());
}

double loss_center(const Tensor3& pred, const Tensor3& target) {
  require(pred.shape() == target.shape(), "loss_center: shape mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    sum += d * d;
  }
  return pred.empty() ? 0.0 : sum / static_cast<double>(pred.size());
}

double loss_offset(const Tensor3& pred, const Tensor3& target, const BinaryMask& valid) {
  require(pred.shape() == target.shape() && pred.channels() == 2 && pred.height() == valid.height &&
              pred.width() == valid.width,
          "loss_offset: shape mismatch");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < valid.bits.size(); ++i) {
    if (!valid.bits[i]) continue;
    for (std::size_t c = 0; c < 2; ++c) sum += std::abs(pred.plane(c)[i] - target.plane(c)[i]);
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(2 * n);
}

// ---- training objective ---------------------------------------------------------

namespace {

HeadLoss evaluate_heads(const HeadExample& ex, const HeadParams& params, HeadParams* grad,
                        const LossWeights& wt = {}) {
  const auto [h, w] = frame_size(ex);
  const std::size_t hs = params.config.head_stride;
  const auto n = static_cast<double>(h * w);
  HeadLoss loss;

  DecoderCache sal_cache;
  const Tensor3 zs = decoder_forward(ex.sal, ex.low, params.salient, hs, h, w, grad ? &sal_cache : nullptr);
  Tensor3 g_sal(zs.shape());
  {
    const auto z = zs.plane(0);
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double y = ex.targets.foreground.bits[i] ? 1.0 : 0.0;
      sum += softplus(z[i]) - z[i] * y;
      g_sal.plane(0)[i] = wt.salient * (logistic(z[i]) - y) / n;
    }
    loss.salient = sum / n;
  }

  DecoderCache ins_cache;
  const Tensor3 zi = decoder_forward(ex.ins, ex.low, params.instance, hs, h, w, grad ? &ins_cache : nullptr);
  Tensor3 g_ins(zi.shape());
  {
    const auto z = zi.plane(0);
    const auto t = ex.targets.center.plane(0);
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double p = logistic(z[i]);
      const double d = p - t[i];
      sum += d * d;
      g_ins.plane(0)[i] = wt.center * 2.0 * d * p * (1.0 - p) / n;
    }
    loss.center = sum / n;

    const auto& valid = ex.targets.offset.valid;
    const std::size_t nvalid = valid.area();
    const double s = static_cast<double>(hs);
    if (nvalid > 0) {
      const double norm = 1.0 / static_cast<double>(2 * nvalid);
      const double gs = wt.offset * s * norm;
      double acc = 0.0;
      for (std::size_t c = 0; c < 2; ++c) {
        const auto zc = zi.plane(1 + c);
        const auto tc = ex.targets.offset.offsets.plane(c);
        auto gc = g_ins.plane(1 + c);
        for (std::size_t i = 0; i < zc.size(); ++i) {
          if (!valid.bits[i]) continue;
          const double d = s * zc[i] - tc[i];
          acc += std::abs(d);
          gc[i] = d > 0.0 ? gs : (d < 0.0 ? -gs : 0.0);
        }
      }
      loss.offset = acc * norm;
    }
  }

  if (grad) {
    decoder_backward(sal_cache, params.salient, hs, g_sal, grad->salient);
    decoder_backward(ins_cache, params.instance, hs, g_ins, grad->instance);
  }
  return loss;
}

}  // namespace

HeadLoss head_loss(const HeadExample& example, const HeadParams& params) {
  return evaluate_heads(example, params, nullptr);
}

HeadLoss head_loss_and_gradient(const HeadExample& example, const HeadParams& params,
                                HeadParams& grad, const LossWeights& weights) {
  require(grad.config == params.config, "head_loss_and_gradient: gradient shape mismatch");
  return evaluate_heads(example, params, &grad, weights);
}

HeadTrainResult train_heads(std::span<const HeadExample> examples, HeadParams init,
                            const HeadTrainConfig& config,
                            const std::function<void(std::size_t, double)>& on_epoch) {
  require(!examples.empty(), "train_heads: dataset is empty");
  require(config.batch_size >= 1, "train_heads: batch size must be positive");
  require(config.learning_rate >= 0.0 && config.momentum >= 0.0 && config.momentum < 1.0,
          "train_heads: invalid optimizer settings");
  init.validate();

  HeadTrainResult result{std::move(init), {}};
  HeadParams velocity = HeadParams::zeros(result.params.config);
  auto param_blocks = parameter_blocks(result.params);
  auto vel_blocks = parameter_blocks(velocity);

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  const std::size_t batches = (examples.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * config.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      HeadParams grad = HeadParams::zeros(result.params.config);
      for (std::size_t k = begin; k < end; ++k) {
        const HeadLoss l = evaluate_heads(examples[order[k]], result.params, &grad);
        if (!std::isfinite(l.total())) {
          throw NumericalError("train_heads: loss became non-finite at epoch " +
                               std::to_string(epoch) + " (salient " + std::to_string(l.salient) +
                               ", center " + std::to_string(l.center) + ", offset " +
                               std::to_string(l.offset) + ")");
        }
        epoch_sum += l.total();
      }
      double lr = config.learning_rate;
      if (config.poly_schedule && total_steps > 0) {
        lr *= std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), 0.9);
      }
      if (lr == 0.0) continue;
      const double inv_batch = 1.0 / static_cast<double>(end - begin);
      auto grad_blocks = parameter_blocks(grad);
      for (std::size_t k = 0; k < param_blocks.size(); ++k) {
        const bool is_weight = param_blocks[k].name.ends_with(".weight");
        auto w = param_blocks[k].values;
        auto v = vel_blocks[k].values;
        auto g = grad_blocks[k].values;
        for (std::size_t i = 0; i < w.size(); ++i) {
          double gi = g[i] * inv_batch;
          if (is_weight) gi += config.weight_decay * w[i];
          v[i] = config.momentum * v[i] + gi;
          w[i] -= lr * v[i];
        }
      }
    }
    const double mean = epoch_sum / static_cast<double>(examples.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

// ---- grouping ------------------------------------------------------------------

std::vector<CenterPeak> detect_centers(const Tensor3& heatmap, std::size_t nms_window,
                                       double threshold, std::size_t top_k) {
  require(heatmap.channels() == 1, "detect_centers: heatmap must have one channel");
  const Tensor3 pooled = max_pool2d(heatmap, nms_window);
  const auto r = static_cast<std::ptrdiff_t>(nms_window / 2);
  const auto h = static_cast<std::ptrdiff_t>(heatmap.height());
  const auto w = static_cast<std::ptrdiff_t>(heatmap.width());
  std::vector<CenterPeak> peaks;
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const auto uy = static_cast<std::size_t>(y);
      const auto ux = static_cast<std::size_t>(x);
      const double v = heatmap(0, uy, ux);
      if (!(v > threshold) || v != pooled(0, uy, ux)) continue;
      // An equal value earlier in raster order within the window wins.
      bool earlier_tie = false;
      for (std::ptrdiff_t yy = std::max<std::ptrdiff_t>(0, y - r); yy <= y && !earlier_tie; ++yy) {
        for (std::ptrdiff_t xx = std::max<std::ptrdiff_t>(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
          if (yy == y && xx >= x) break;
          if (heatmap(0, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) == v) {
            earlier_tie = true;
            break;
          }
        }
      }
      if (!earlier_tie) peaks.push_back({uy, ux, v});
    }
  }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [](const CenterPeak& a, const CenterPeak& b) { return a.score > b.score; });
  if (peaks.size() > top_k) peaks.resize(top_k);
  return peaks;
}

Grouping group_instances(const BinaryMask& foreground, const Tensor3& offsets,
                         std::span<const CenterPeak> centers) {
  require(offsets.channels() == 2 && offsets.height() == foreground.height &&
              offsets.width() == foreground.width,
          "group_instances: offset field does not match the foreground map");
  Grouping g{InstanceMask(foreground.height, foreground.width), {}};
  if (centers.empty()) return g;
  for (std::size_t y = 0; y < foreground.height; ++y) {
    for (std::size_t x = 0; x < foreground.width; ++x) {
      if (!foreground(y, x)) continue;
      const double py = static_cast<double>(y) + offsets(0, y, x);
      const double px = static_cast<double>(x) + offsets(1, y, x);
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double dy = py - static_cast<double>(centers[k].y);
        const double dx = px - static_cast<double>(centers[k].x);
        const double d = dy * dy + dx * dx;
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      g.labels.at(y, x) = static_cast<std::uint32_t>(best + 1);
    }
  }
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const auto label = static_cast<std::uint32_t>(k + 1);
    BinaryMask piece = largest_component(g.labels.select(label));
    if (piece.empty()) continue;
    g.proposals.push_back({std::move(piece),
                           Point2{static_cast<double>(centers[k].y), static_cast<double>(centers[k].x)},
                           centers[k].score, label});
  }
  return g;
}

}  // namespace vmos
