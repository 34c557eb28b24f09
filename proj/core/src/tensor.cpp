#include "vmos/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vmos/errors.hpp"
#include "vmos/parallel.hpp"

namespace vmos {

Tensor3::Tensor3(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : shape_{channels, height, width}, data_(channels * height * width, fill) {}

Tensor3::Tensor3(std::size_t channels, std::size_t height, std::size_t width,
                 std::vector<double> data)
    : shape_{channels, height, width}, data_(std::move(data)) {
  require(data_.size() == shape_.size(), "Tensor3: data length does not match shape");
}

void Tensor3::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor3::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

ConvKernel ConvKernel::zeros(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw,
                             std::size_t dilation) {
  ConvKernel k;
  k.out_channels = out;
  k.in_channels = in;
  k.kernel_h = kh;
  k.kernel_w = kw;
  k.dilation = dilation;
  k.weights.assign(out * in * kh * kw, 0.0);
  k.bias.assign(out, 0.0);
  return k;
}

bool ConvKernel::same_shape(const ConvKernel& other) const noexcept {
  return out_channels == other.out_channels && in_channels == other.in_channels &&
         kernel_h == other.kernel_h && kernel_w == other.kernel_w &&
         dilation == other.dilation;
}

void ConvKernel::validate() const {
  require(out_channels > 0 && in_channels > 0 && kernel_h > 0 && kernel_w > 0 && dilation > 0,
          "ConvKernel: all dimensions must be positive");
  require(kernel_h % 2 == 1 && kernel_w % 2 == 1, "ConvKernel: even kernel sizes are not supported");
  require(weights.size() == out_channels * in_channels * kernel_h * kernel_w,
          "ConvKernel: weight count does not match shape");
  require(bias.size() == out_channels, "ConvKernel: bias count does not match out_channels");
}

namespace {

// Output columns [x_lo, x_hi) read input column x + off without leaving the image.
struct Span1 {
  std::size_t lo;
  std::size_t hi;
};

Span1 valid_range(std::size_t n, std::ptrdiff_t off) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(sn, sn - off);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

namespace {

// d[x] += sum_k w[k] * s[x + k * dil - pad] over in-range taps. The tap
// count is a template argument for the common sizes so the interior loop
// unrolls and vectorizes over x.
template <std::size_t KW>
void correlate_row(double* __restrict d, const double* __restrict s, const double* w, std::size_t n,
                   std::size_t kw_dyn, std::ptrdiff_t pad, std::ptrdiff_t dil) {
  const std::size_t kw = KW > 0 ? KW : kw_dyn;
  const auto sn = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t reach = static_cast<std::ptrdiff_t>(kw - 1) * dil - pad;
  const std::ptrdiff_t lo = std::clamp<std::ptrdiff_t>(pad, 0, sn);
  const std::ptrdiff_t hi = std::clamp<std::ptrdiff_t>(sn - reach, lo, sn);
  auto edge = [&](std::ptrdiff_t x) {
    double acc = 0.0;
    for (std::size_t k = 0; k < kw; ++k) {
      const std::ptrdiff_t xx = x + static_cast<std::ptrdiff_t>(k) * dil - pad;
      if (xx >= 0 && xx < sn) acc += w[k] * s[xx];
    }
    d[x] += acc;
  };
  for (std::ptrdiff_t x = 0; x < lo; ++x) edge(x);
  const double* base = s - pad;
  for (std::ptrdiff_t x = lo; x < hi; ++x) {
    double acc = 0.0;
    for (std::size_t k = 0; k < kw; ++k) acc += w[k] * base[x + static_cast<std::ptrdiff_t>(k) * dil];
    d[x] += acc;
  }
  for (std::ptrdiff_t x = std::max(hi, lo); x < sn; ++x) edge(x);
}

using RowFn = void (*)(double*, const double*, const double*, std::size_t, std::size_t, std::ptrdiff_t,
                       std::ptrdiff_t);

RowFn row_kernel(std::size_t kw) {
  switch (kw) {
    case 1: return &correlate_row<1>;
    case 3: return &correlate_row<3>;
    case 5: return &correlate_row<5>;
    default: return &correlate_row<0>;
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// acc[k] += sum_x g[x] * s[x + k * dil - pad] over in-range taps.
void kernel_grad_row(const double* g, const double* s, double* acc, std::size_t n, std::size_t kw,
                     std::ptrdiff_t pad, std::ptrdiff_t dil) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  if (kw == 5 && dil == 1 && pad == 2 && sn > 4) {
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0, a4 = 0.0;
    const double* b = s - 2;
#pragma omp simd reduction(+ : a0, a1, a2, a3, a4)
    for (std::ptrdiff_t x = 2; x < sn - 2; ++x) {
      const double gx = g[x];
      a0 += gx * b[x];
      a1 += gx * b[x + 1];
      a2 += gx * b[x + 2];
      a3 += gx * b[x + 3];
      a4 += gx * b[x + 4];
    }
    acc[0] += a0;
    acc[1] += a1;
    acc[2] += a2;
    acc[3] += a3;
    acc[4] += a4;
    for (std::ptrdiff_t x : {std::ptrdiff_t{0}, std::ptrdiff_t{1}, sn - 2, sn - 1}) {
      for (std::ptrdiff_t k = 0; k < 5; ++k) {
        const std::ptrdiff_t xx = x + k - 2;
        if (xx >= 0 && xx < sn) acc[k] += g[x] * s[xx];
      }
    }
    return;
  }
  for (std::size_t k = 0; k < kw; ++k) {
    const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(k) * dil - pad;
    const Span1 cols = valid_range(n, dx);
    if (cols.hi > cols.lo)
      acc[k] += dot(g + cols.lo, s + static_cast<std::ptrdiff_t>(cols.lo) + dx, cols.hi - cols.lo);
  }
}

}  // namespace

Tensor3 conv2d(const Tensor3& input, const ConvKernel& kernel) {
  kernel.validate();
  require(kernel.in_channels == input.channels(),
          "conv2d: kernel expects " + std::to_string(kernel.in_channels) +
              " input channels, got " + std::to_string(input.channels()));
  const std::size_t h = input.height();
  const std::size_t w = input.width();
  const auto pad_y = static_cast<std::ptrdiff_t>((kernel.kernel_h - 1) * kernel.dilation / 2);
  const auto pad_x = static_cast<std::ptrdiff_t>((kernel.kernel_w - 1) * kernel.dilation / 2);
  const auto dil = static_cast<std::ptrdiff_t>(kernel.dilation);
  const RowFn row = row_kernel(kernel.kernel_w);

  Tensor3 out(kernel.out_channels, h, w);
  parallel_for(kernel.out_channels, [&](std::size_t o) {
    auto dst = out.plane(o);
    std::fill(dst.begin(), dst.end(), kernel.bias[o]);
    for (std::size_t i = 0; i < kernel.in_channels; ++i) {
      const auto src = input.plane(i);
      for (std::size_t ky = 0; ky < kernel.kernel_h; ++ky) {
        const double* wrow = &kernel.weights[((o * kernel.in_channels + i) * kernel.kernel_h + ky) * kernel.kernel_w];
        if (std::all_of(wrow, wrow + kernel.kernel_w, [](double v) { return v == 0.0; })) continue;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * dil - pad_y;
        const Span1 rows = valid_range(h, dy);
        for (std::size_t y = rows.lo; y < rows.hi; ++y) {
          row(dst.data() + y * w, src.data() + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * w, wrow,
              w, kernel.kernel_w, pad_x, dil);
        }
      }
    }
  });
  return out;
}

ConvGradients conv2d_backward(const Tensor3& input, const ConvKernel& kernel,
                              const Tensor3& grad_out, std::size_t input_grad_channels) {
  kernel.validate();
  require(kernel.in_channels == input.channels(), "conv2d_backward: input channel mismatch");
  require(grad_out.shape() == Shape3{kernel.out_channels, input.height(), input.width()},
          "conv2d_backward: grad_out shape does not match forward output");
  const std::size_t h = input.height();
  const std::size_t w = input.width();
  const std::size_t kh = kernel.kernel_h;
  const std::size_t kw = kernel.kernel_w;
  const auto pad_y = static_cast<std::ptrdiff_t>((kh - 1) * kernel.dilation / 2);
  const auto pad_x = static_cast<std::ptrdiff_t>((kw - 1) * kernel.dilation / 2);
  const auto dil = static_cast<std::ptrdiff_t>(kernel.dilation);

  const std::size_t n_grad = std::min(input_grad_channels, kernel.in_channels);
  ConvGradients g{n_grad > 0 ? Tensor3(input.shape()) : Tensor3(),
                  ConvKernel::zeros(kernel.out_channels, kernel.in_channels, kh, kw, kernel.dilation)};

  parallel_for(kernel.out_channels, [&](std::size_t o) {
    const auto go = grad_out.plane(o);
    double bsum = 0.0;
    for (double v : go) bsum += v;
    g.kernel.bias[o] = bsum;
    for (std::size_t i = 0; i < kernel.in_channels; ++i) {
      const auto src = input.plane(i);
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * dil - pad_y;
        const Span1 rows = valid_range(h, dy);
        double* acc = &g.kernel.weights[((o * kernel.in_channels + i) * kh + ky) * kw];
        for (std::size_t y = rows.lo; y < rows.hi; ++y) {
          kernel_grad_row(go.data() + y * w,
                          src.data() + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * w, acc, w, kw,
                          pad_x, dil);
        }
      }
    }
  });

  if (n_grad == 0) return g;
  // Input gradient is a correlation of grad_out with the flipped kernel.
  const RowFn row = row_kernel(kw);
  const auto flip_pad = static_cast<std::ptrdiff_t>(kw - 1) * dil - pad_x;
  parallel_for(n_grad, [&](std::size_t i) {
    auto dst = g.input.plane(i);
    std::vector<double> flipped(kw);
    for (std::size_t o = 0; o < kernel.out_channels; ++o) {
      const auto go = grad_out.plane(o);
      for (std::size_t ky = 0; ky < kh; ++ky) {
        const double* wrow = &kernel.weights[((o * kernel.in_channels + i) * kh + ky) * kw];
        if (std::all_of(wrow, wrow + kw, [](double v) { return v == 0.0; })) continue;
        for (std::size_t k = 0; k < kw; ++k) flipped[k] = wrow[kw - 1 - k];
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) * dil - pad_y;
        const Span1 rows = valid_range(h, dy);
        for (std::size_t y = rows.lo; y < rows.hi; ++y) {
          double* d = dst.data() + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(y) + dy) * w;
          row(d, go.data() + y * w, flipped.data(), w, kw, flip_pad, dil);
        }
      }
    }
  });
  return g;
}

std::vector<double> global_avg_pool(const Tensor3& input) {
  std::vector<double> out(input.channels(), 0.0);
  const double n = static_cast<double>(input.height() * input.width());
  for (std::size_t c = 0; c < input.channels(); ++c) {
    double s = 0.0;
    for (double v : input.plane(c)) s += v;
    out[c] = n > 0 ? s / n : 0.0;
  }
  return out;
}

namespace {

struct Tap {
  std::size_t i0;
  std::size_t i1;
  double frac;  // weight of i1
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<Tap> taps(in * factor);
  const double f = static_cast<double>(factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / f - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor3 bilinear_upsample(const Tensor3& input, std::size_t factor) {
  require(factor >= 1, "bilinear_upsample: factor must be positive");
  if (factor == 1) return input;
  const auto ty = bilinear_taps(input.height(), factor);
  const auto tx = bilinear_taps(input.width(), factor);
  Tensor3 out(input.channels(), ty.size(), tx.size());
  for (std::size_t c = 0; c < input.channels(); ++c) {
    for (std::size_t y = 0; y < ty.size(); ++y) {
      const auto [y0, y1, ly] = ty[y];
      for (std::size_t x = 0; x < tx.size(); ++x) {
        const auto [x0, x1, lx] = tx[x];
        out(c, y, x) = (1 - ly) * ((1 - lx) * input(c, y0, x0) + lx * input(c, y0, x1)) +
                       ly * ((1 - lx) * input(c, y1, x0) + lx * input(c, y1, x1));
      }
    }
  }
  return out;
}

Tensor3 bilinear_upsample_backward(Shape3 input_shape, std::size_t factor,
                                   const Tensor3& grad_out) {
  require(factor >= 1, "bilinear_upsample_backward: factor must be positive");
  require(grad_out.shape() == Shape3{input_shape.channels, input_shape.height * factor,
                                     input_shape.width * factor},
          "bilinear_upsample_backward: grad_out shape mismatch");
  if (factor == 1) return grad_out;
  const auto ty = bilinear_taps(input_shape.height, factor);
  const auto tx = bilinear_taps(input_shape.width, factor);
  Tensor3 g(input_shape);
  for (std::size_t c = 0; c < input_shape.channels; ++c) {
    for (std::size_t y = 0; y < ty.size(); ++y) {
      const auto [y0, y1, ly] = ty[y];
      for (std::size_t x = 0; x < tx.size(); ++x) {
        const auto [x0, x1, lx] = tx[x];
        const double v = grad_out(c, y, x);
        g(c, y0, x0) += (1 - ly) * (1 - lx) * v;
        g(c, y0, x1) += (1 - ly) * lx * v;
        g(c, y1, x0) += ly * (1 - lx) * v;
        g(c, y1, x1) += ly * lx * v;
      }
    }
  }
  return g;
}

std::vector<double> softmax_pairwise(std::span<const double> logits) {
  require(logits.size() % 2 == 0, "softmax_pairwise: logit count must be even");
  const std::size_t c = logits.size() / 2;
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < c; ++i) {
    const double a = logits[i];
    const double b = logits[c + i];
    // 1 / (1 + e^(b-a)) is exact at the symmetric point and never overflows.
    const double pa = 1.0 / (1.0 + std::exp(b - a));
    out[i] = pa;
    out[c + i] = 1.0 - pa;
  }
  return out;
}

Tensor3 relu(const Tensor3& input) {
  Tensor3 out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor3 relu_backward(const Tensor3& pre_activation, const Tensor3& grad_out) {
  require(pre_activation.shape() == grad_out.shape(), "relu_backward: shape mismatch");
  Tensor3 g = grad_out;
  auto pre = pre_activation.data();
  auto d = g.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!(pre[i] > 0.0)) d[i] = 0.0;
  }
  return g;
}

Tensor3 sigmoid(const Tensor3& input) {
  Tensor3 out = input;
  for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

Tensor3 max_pool2d(const Tensor3& input, std::size_t k) {
  require(k >= 1 && k % 2 == 1, "max_pool2d: window must be odd and positive");
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  const auto h = static_cast<std::ptrdiff_t>(input.height());
  const auto w = static_cast<std::ptrdiff_t>(input.width());
  Tensor3 out(input.shape());
  // Separable: row max then column max over the clipped window.
  Tensor3 tmp(input.shape());
  for (std::size_t c = 0; c < input.channels(); ++c) {
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t xx = std::max<std::ptrdiff_t>(0, x - r);
             xx <= std::min(w - 1, x + r); ++xx) {
          m = std::max(m, input(c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx)));
        }
        tmp(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = m;
      }
    }
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::ptrdiff_t yy = std::max<std::ptrdiff_t>(0, y - r);
             yy <= std::min(h - 1, y + r); ++yy) {
          m = std::max(m, tmp(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(x)));
        }
        out(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = m;
      }
    }
  }
  return out;
}

namespace {

template <typename Op>
Tensor3 elementwise(const Tensor3& a, const Tensor3& b, Op op, const char* name) {
  require(a.shape() == b.shape(), std::string(name) + ": shape mismatch");
  Tensor3 out(a.shape());
  auto da = a.data();
  auto db = b.data();
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = op(da[i], db[i]);
  return out;
}

}  // namespace

Tensor3 add(const Tensor3& a, const Tensor3& b) {
  return elementwise(a, b, [](double x, double y) { return x + y; }, "add");
}

Tensor3 mul(const Tensor3& a, const Tensor3& b) {
  return elementwise(a, b, [](double x, double y) { return x * y; }, "mul");
}

Tensor3 scale(const Tensor3& a, double s) {
  Tensor3 out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

Tensor3 concat_channels(const Tensor3& a, const Tensor3& b) {
  require(a.height() == b.height() && a.width() == b.width(),
          "concat_channels: spatial sizes differ");
  Tensor3 out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

Tensor3 crop(const Tensor3& input, std::size_t height, std::size_t width) {
  require(height <= input.height() && width <= input.width(), "crop: target larger than input");
  if (height == input.height() && width == input.width()) return input;
  Tensor3 out(input.channels(), height, width);
  for (std::size_t c = 0; c < input.channels(); ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out(c, y, x) = input(c, y, x);
  return out;
}

Tensor3 crop_backward(Shape3 input_shape, const Tensor3& grad_out) {
  require(grad_out.channels() == input_shape.channels && grad_out.height() <= input_shape.height &&
              grad_out.width() <= input_shape.width,
          "crop_backward: shape mismatch");
  if (grad_out.shape() == input_shape) return grad_out;
  Tensor3 g(input_shape);
  for (std::size_t c = 0; c < grad_out.channels(); ++c)
    for (std::size_t y = 0; y < grad_out.height(); ++y)
      for (std::size_t x = 0; x < grad_out.width(); ++x) g(c, y, x) = grad_out(c, y, x);
  return g;
}

}  // namespace vmos
