#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vmos {

struct Shape3 {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t plane() const noexcept { return height * width; }
  std::size_t size() const noexcept { return channels * height * width; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Dense channels x height x width array of doubles, row-major in
/// (channel, row, column) order.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
  Tensor3(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> data);
  explicit Tensor3(Shape3 shape, double fill = 0.0)
      : Tensor3(shape.channels, shape.height, shape.width, fill) {}

  Shape3 shape() const noexcept { return shape_; }
  std::size_t channels() const noexcept { return shape_.channels; }
  std::size_t height() const noexcept { return shape_.height; }
  std::size_t width() const noexcept { return shape_.width; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  double operator()(std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }

  std::span<double> plane(std::size_t c) noexcept {
    return {data_.data() + c * shape_.plane(), shape_.plane()};
  }
  std::span<const double> plane(std::size_t c) const noexcept {
    return {data_.data() + c * shape_.plane(), shape_.plane()};
  }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  void fill(double v);
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  Shape3 shape_{};
  std::vector<double> data_;
};

/// Convolution weights laid out as (out, in, kh, kw) plus one bias per output.
struct ConvKernel {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t dilation = 1;
  std::vector<double> weights;
  std::vector<double> bias;

  static ConvKernel zeros(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw,
                          std::size_t dilation = 1);

  double& at(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) noexcept {
    return weights[((o * in_channels + i) * kernel_h + ky) * kernel_w + kx];
  }
  double at(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const noexcept {
    return weights[((o * in_channels + i) * kernel_h + ky) * kernel_w + kx];
  }
  bool same_shape(const ConvKernel& other) const noexcept;

  // Throws ContractError when sizes are inconsistent or a kernel side is even.
  void validate() const;

  friend bool operator==(const ConvKernel&, const ConvKernel&) = default;
};

struct ConvGradients {
  Tensor3 input;
  ConvKernel kernel;  // weights and bias hold d(loss)/d(parameter)
};

// Same-size cross-correlation with zero padding (k-1)*dilation/2.
Tensor3 conv2d(const Tensor3& input, const ConvKernel& kernel);

// Gradients of sum(grad_out * conv2d(input, kernel)).
// Only the first `input_grad_channels` channels of the input gradient are
// computed (the rest stay zero); with 0 the input gradient is left empty.
inline constexpr std::size_t kAllChannels = static_cast<std::size_t>(-1);
ConvGradients conv2d_backward(const Tensor3& input, const ConvKernel& kernel,
                              const Tensor3& grad_out, std::size_t input_grad_channels = kAllChannels);

// Mean of each channel.
std::vector<double> global_avg_pool(const Tensor3& input);

// Align-corners-false bilinear resize by an integer factor.
Tensor3 bilinear_upsample(const Tensor3& input, std::size_t factor);
Tensor3 bilinear_upsample_backward(Shape3 input_shape, std::size_t factor,
                                   const Tensor3& grad_out);

// Column-wise softmax of a 2 x C logit block stored as [row0..., row1...].
std::vector<double> softmax_pairwise(std::span<const double> logits);

Tensor3 relu(const Tensor3& input);
// Passes grad_out where pre_activation > 0.
Tensor3 relu_backward(const Tensor3& pre_activation, const Tensor3& grad_out);
Tensor3 sigmoid(const Tensor3& input);

// Sliding k x k maximum, stride 1, same size; out-of-image taps are skipped.
Tensor3 max_pool2d(const Tensor3& input, std::size_t k);

Tensor3 add(const Tensor3& a, const Tensor3& b);
Tensor3 mul(const Tensor3& a, const Tensor3& b);
Tensor3 scale(const Tensor3& a, double s);

Tensor3 concat_channels(const Tensor3& a, const Tensor3& b);
// Top-left crop to height x width.
Tensor3 crop(const Tensor3& input, std::size_t height, std::size_t width);
// Inverse of crop for gradients: zero-extends to shape.
Tensor3 crop_backward(Shape3 input_shape, const Tensor3& grad_out);

}  // namespace vmos
