#include "vmos/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "vmos/errors.hpp"

namespace vmos {

void Frame::validate() const {
  require(height > 0 && width > 0, "Frame: empty frame");
  require(rgb.size() == height * width * 3, "Frame: pixel buffer does not match size");
}

namespace {

namespace fc = feature_channel;

// Summed-area table with one row/column of zero padding.
class Integral {
 public:
  Integral(const std::vector<double>& img, std::size_t h, std::size_t w)
      : w_(w + 1), sum_((h + 1) * (w + 1), 0.0) {
    for (std::size_t y = 0; y < h; ++y) {
      double row = 0.0;
      for (std::size_t x = 0; x < w; ++x) {
        row += img[y * w + x];
        sum_[(y + 1) * w_ + x + 1] = sum_[y * w_ + x + 1] + row;
      }
    }
  }
  // Sum over [y0, y1) x [x0, x1).
  double box(std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1) const {
    return sum_[y1 * w_ + x1] - sum_[y0 * w_ + x1] - sum_[y1 * w_ + x0] + sum_[y0 * w_ + x0];
  }

 private:
  std::size_t w_;
  std::vector<double> sum_;
};

struct PixelMaps {
  std::vector<double> intensity;
  std::vector<double> gx;
  std::vector<double> gy;
  std::vector<std::array<double, 3>> box;  // per radius
};

PixelMaps pixel_maps(const Frame& f, const std::array<std::size_t, 3>& radii) {
  const std::size_t h = f.height;
  const std::size_t w = f.width;
  PixelMaps m;
  m.intensity.resize(h * w);
  for (std::size_t i = 0; i < h * w; ++i)
    m.intensity[i] = (f.rgb[3 * i] + f.rgb[3 * i + 1] + f.rgb[3 * i + 2]) / 3.0;

  m.gx.resize(h * w);
  m.gy.resize(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t ym = y == 0 ? 0 : y - 1;
    const std::size_t yp = y + 1 < h ? y + 1 : h - 1;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xm = x == 0 ? 0 : x - 1;
      const std::size_t xp = x + 1 < w ? x + 1 : w - 1;
      m.gx[y * w + x] = 0.5 * (m.intensity[y * w + xp] - m.intensity[y * w + xm]);
      m.gy[y * w + x] = 0.5 * (m.intensity[yp * w + x] - m.intensity[ym * w + x]);
    }
  }

  const Integral integral(m.intensity, h, w);
  m.box.resize(h * w);
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t r = radii[s];
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t y0 = y >= r ? y - r : 0;
      const std::size_t y1 = std::min(h, y + r + 1);
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t x0 = x >= r ? x - r : 0;
        const std::size_t x1 = std::min(w, x + r + 1);
        const double area = static_cast<double>((y1 - y0) * (x1 - x0));
        m.box[y * w + x][s] = integral.box(y0, x0, y1, x1) / area;
      }
    }
  }
  return m;
}

// Fills the 21-entry recipe for every cell; slots 19/20 receive positions.
Tensor3 recipe(const Frame& frame, std::size_t stride, const std::array<std::size_t, 3>& radii) {
  frame.validate();
  require(stride >= 1, "features: stride must be positive");
  require(frame.height >= stride && frame.width >= stride,
          "features: frame is smaller than the feature stride");
  const std::size_t h = frame.height;
  const std::size_t w = frame.width;
  const std::size_t gh = (h + stride - 1) / stride;
  const std::size_t gw = (w + stride - 1) / stride;
  const PixelMaps px = pixel_maps(frame, radii);

  Tensor3 out(fc::kBase, gh, gw);
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  for (std::size_t cy = 0; cy < gh; ++cy) {
    const std::size_t y0 = cy * stride;
    const std::size_t y1 = std::min(h, y0 + stride);
    for (std::size_t cx = 0; cx < gw; ++cx) {
      const std::size_t x0 = cx * stride;
      const std::size_t x1 = std::min(w, x0 + stride);
      const double n = static_cast<double>((y1 - y0) * (x1 - x0));

      std::array<double, 3> sum{};
      std::array<double, 3> sq{};
      double sgx = 0.0;
      double sgy = 0.0;
      std::array<double, 8> hist{};
      std::array<double, 3> box{};
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) {
          const std::size_t i = y * w + x;
          for (std::size_t c = 0; c < 3; ++c) {
            const double v = frame.rgb[3 * i + c];
            sum[c] += v;
            sq[c] += v * v;
          }
          const double gx = px.gx[i];
          const double gy = px.gy[i];
          sgx += gx;
          sgy += gy;
          const double mag = std::hypot(gx, gy);
          if (mag > 0.0) {
            const double a = std::atan2(gy, gx) + std::numbers::pi;  // [0, 2pi]
            auto bin = static_cast<std::size_t>(std::floor(a / kTwoPi * 8.0));
            hist[bin % 8] += mag;
          }
          for (std::size_t s = 0; s < 3; ++s) box[s] += px.box[i][s];
        }
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double mean = sum[c] / n;
        out(fc::kMeanR + c, cy, cx) = mean;
        out(fc::kStdR + c, cy, cx) = std::sqrt(std::max(0.0, sq[c] / n - mean * mean));
      }
      out(fc::kGradX, cy, cx) = sgx / n;
      out(fc::kGradY, cy, cx) = sgy / n;
      for (std::size_t b = 0; b < 8; ++b) out(fc::kHist + b, cy, cx) = hist[b] / n;
      for (std::size_t s = 0; s < 3; ++s) out(fc::kBox + s, cy, cx) = box[s] / n;
      out(fc::kPosX, cy, cx) = static_cast<double>(x0 + x1) / static_cast<double>(w) - 1.0;
      out(fc::kPosY, cy, cx) = static_cast<double>(y0 + y1) / static_cast<double>(h) - 1.0;
    }
  }
  return out;
}

Tensor3 tile(const Tensor3& base, std::size_t channels) {
  require(channels >= 1, "features: channel count must be positive");
  Tensor3 out(channels, base.height(), base.width());
  for (std::size_t c = 0; c < channels; ++c) {
    const auto src = base.plane(c % base.channels());
    std::copy(src.begin(), src.end(), out.plane(c).begin());
  }
  return out;
}

}  // namespace

Tensor3 extract_base_features(const Frame& frame, std::size_t stride, std::size_t channels,
                              const std::array<std::size_t, 3>& box_radii) {
  return tile(recipe(frame, stride, box_radii), channels);
}

FeatureBundle extract_task_features(const Frame& frame, const FeatureConfig& config) {
  Tensor3 sal = extract_base_features(frame, config.stride, config.channels, config.box_radii);
  Tensor3 ins(sal.shape());
  const std::size_t c = sal.channels();
  for (std::size_t k = 0; k < c; ++k) {
    const auto src = sal.plane(c - 1 - k);
    std::copy(src.begin(), src.end(), ins.plane(k).begin());
  }
  return {std::move(sal), std::move(ins), config.stride};
}

Tensor3 extract_guidance_features(const Frame& prev_frame, const InstanceMask& prev_mask,
                                  const FeatureConfig& config) {
  require(prev_mask.height == prev_frame.height && prev_mask.width == prev_frame.width,
          "extract_guidance_features: mask size differs from frame size");
  Tensor3 base = recipe(prev_frame, config.stride, config.box_radii);
  const std::size_t s = config.stride;
  const std::size_t h = prev_frame.height;
  const std::size_t w = prev_frame.width;
  for (std::size_t cy = 0; cy < base.height(); ++cy) {
    const std::size_t y1 = std::min(h, (cy + 1) * s);
    for (std::size_t cx = 0; cx < base.width(); ++cx) {
      const std::size_t x1 = std::min(w, (cx + 1) * s);
      std::size_t fg = 0;
      std::size_t total = 0;
      std::set<std::uint32_t> ids;
      for (std::size_t y = cy * s; y < y1; ++y)
        for (std::size_t x = cx * s; x < x1; ++x) {
          const std::uint32_t l = prev_mask(y, x);
          if (l != 0) {
            ++fg;
            ids.insert(l);
          }
          ++total;
        }
      base(feature_channel::kForeground, cy, cx) = static_cast<double>(fg) / static_cast<double>(total);
      base(feature_channel::kInstanceCount, cy, cx) = static_cast<double>(ids.size());
    }
  }
  return tile(base, config.channels);
}

}  // namespace vmos
