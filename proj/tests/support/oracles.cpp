#include "oracles.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace vmos::oracle {

Tensor3 random_tensor(Rng& rng, std::size_t c, std::size_t h, std::size_t w, double lo, double hi) {
  Tensor3 t(c, h, w);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

ConvKernel random_kernel(Rng& rng, std::size_t out, std::size_t in, std::size_t kh, std::size_t kw,
                         std::size_t dilation, double scale) {
  ConvKernel k = ConvKernel::zeros(out, in, kh, kw, dilation);
  for (double& v : k.weights) v = rng.uniform(-scale, scale);
  for (double& v : k.bias) v = rng.uniform(-scale, scale);
  return k;
}

BinaryMask random_mask(Rng& rng, std::size_t h, std::size_t w, double p) {
  BinaryMask m(h, w);
  for (auto& b : m.bits) b = rng.uniform() < p ? 1 : 0;
  return m;
}

BinaryMask rect_mask(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t y1,
                     std::size_t x1) {
  BinaryMask m(h, w);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.set(y, x, true);
  return m;
}

HeadExample random_head_example(Rng& rng, const HeadConfig& config, std::size_t h, std::size_t w) {
  InstanceMask gt(h, w);
  const std::size_t n = 1 + rng.below(3);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t rh = 3 + rng.below(h / 3);
    const std::size_t rw = 3 + rng.below(w / 3);
    const std::size_t y0 = rng.below(h - rh);
    const std::size_t x0 = rng.below(w - rw);
    for (std::size_t y = y0; y < y0 + rh; ++y)
      for (std::size_t x = x0; x < x0 + rw; ++x) gt.at(y, x) = static_cast<std::uint32_t>(k + 1);
  }
  HeadExample ex;
  ex.sal = random_tensor(rng, config.feature_channels, h / 16, w / 16);
  ex.ins = random_tensor(rng, config.feature_channels, h / 16, w / 16);
  ex.low.stride8 = random_tensor(rng, config.low_channels, h / 8, w / 8);
  ex.low.stride4 = random_tensor(rng, config.low_channels, h / 4, w / 4);
  ex.targets = make_head_targets(gt);
  return ex;
}

Tensor3 conv_loop(const Tensor3& input, const ConvKernel& k) {
  const auto h = static_cast<long>(input.height());
  const auto w = static_cast<long>(input.width());
  const auto d = static_cast<long>(k.dilation);
  const long py = (static_cast<long>(k.kernel_h) - 1) * d / 2;
  const long px = (static_cast<long>(k.kernel_w) - 1) * d / 2;
  Tensor3 out(k.out_channels, input.height(), input.width());
  for (std::size_t o = 0; o < k.out_channels; ++o)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double acc = k.bias[o];
        for (std::size_t i = 0; i < k.in_channels; ++i)
          for (std::size_t ky = 0; ky < k.kernel_h; ++ky)
            for (std::size_t kx = 0; kx < k.kernel_w; ++kx) {
              const long sy = y + static_cast<long>(ky) * d - py;
              const long sx = x + static_cast<long>(kx) * d - px;
              if (sy < 0 || sx < 0 || sy >= h || sx >= w) continue;
              acc += k.at(o, i, ky, kx) * input(i, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
        out(o, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
      }
  return out;
}

Tensor3 bilinear_formula(const Tensor3& input, std::size_t factor) {
  const std::size_t h = input.height();
  const std::size_t w = input.width();
  Tensor3 out(input.channels(), h * factor, w * factor);
  const double f = static_cast<double>(factor);
  auto sample = [&](std::size_t c, double sy, double sx) {
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const auto x0 = static_cast<std::size_t>(std::floor(sx));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const double ty = sy - static_cast<double>(y0);
    const double tx = sx - static_cast<double>(x0);
    return input(c, y0, x0) * (1 - ty) * (1 - tx) + input(c, y0, x1) * (1 - ty) * tx +
           input(c, y1, x0) * ty * (1 - tx) + input(c, y1, x1) * ty * tx;
  };
  for (std::size_t c = 0; c < input.channels(); ++c)
    for (std::size_t y = 0; y < h * factor; ++y)
      for (std::size_t x = 0; x < w * factor; ++x)
        out(c, y, x) = sample(c, (static_cast<double>(y) + 0.5) / f - 0.5, (static_cast<double>(x) + 0.5) / f - 0.5);
  return out;
}

Tensor3 window_max(const Tensor3& input, std::size_t k) {
  const long r = static_cast<long>(k / 2);
  const auto h = static_cast<long>(input.height());
  const auto w = static_cast<long>(input.width());
  Tensor3 out(input.shape());
  for (std::size_t c = 0; c < input.channels(); ++c)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double m = -std::numeric_limits<double>::infinity();
        for (long yy = y - r; yy <= y + r; ++yy)
          for (long xx = x - r; xx <= x + r; ++xx)
            if (yy >= 0 && xx >= 0 && yy < h && xx < w)
              m = std::max(m, input(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)));
        out(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = m;
      }
  return out;
}

void compare_into(Agreement& acc, double analytic, double numeric, double rel, double floor,
                  const std::string& label) {
  ++acc.compared;
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  if (scale < floor && diff < floor) return;
  const double r = diff / scale;
  acc.worst = std::max(acc.worst, r);
  if (!(r <= rel)) {
    if (acc.failures++ == 0) {
      std::ostringstream os;
      os << label << ": analytic " << analytic << " numeric " << numeric << " rel " << r;
      acc.first_failure = os.str();
    }
  }
}

double central_difference(const std::function<double()>& f, double& x, double h) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * h);
}

namespace {

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

}  // namespace

BinaryMask largest_component_uf(const BinaryMask& m) {
  const std::size_t n = m.bits.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto unite = [&](std::size_t a, std::size_t b) {
    a = find_root(parent, a);
    b = find_root(parent, b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m(y, x)) continue;
      if (x + 1 < m.width && m(y, x + 1)) unite(y * m.width + x, y * m.width + x + 1);
      if (y + 1 < m.height && m(y + 1, x)) unite(y * m.width + x, (y + 1) * m.width + x);
    }
  // Roots are the smallest index of their component.
  std::vector<std::size_t> size(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    if (m.bits[i]) ++size[find_root(parent, i)];
  std::size_t best = n;
  for (std::size_t i = 0; i < n; ++i)
    if (size[i] > 0 && (best == n || size[i] > size[best])) best = i;
  BinaryMask out(m.height, m.width);
  if (best == n) return out;
  for (std::size_t i = 0; i < n; ++i)
    if (m.bits[i] && find_root(parent, i) == best) out.bits[i] = 1;
  return out;
}

InstanceMask nearest_center_labels(const BinaryMask& fg, const Tensor3& offsets,
                                   std::span<const CenterPeak> centers) {
  InstanceMask out(fg.height, fg.width);
  if (centers.empty()) return out;
  for (std::size_t y = 0; y < fg.height; ++y)
    for (std::size_t x = 0; x < fg.width; ++x) {
      if (!fg(y, x)) continue;
      std::vector<double> d(centers.size());
      for (std::size_t k = 0; k < centers.size(); ++k) {
        const double ey = static_cast<double>(y) + offsets(0, y, x) - static_cast<double>(centers[k].y);
        const double ex = static_cast<double>(x) + offsets(1, y, x) - static_cast<double>(centers[k].x);
        d[k] = ey * ey + ex * ex;
      }
      // min_element returns the first minimum: smallest index on ties.
      const auto k = static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin());
      out.at(y, x) = static_cast<std::uint32_t>(k + 1);
    }
  return out;
}

Tensor3 appearance_loops(const AppearanceModel& model, const Tensor3& x) {
  const std::size_t hid = model.hidden();
  const std::size_t h = x.height();
  const std::size_t w = x.width();
  Tensor3 z(hid, h, w);
  for (std::size_t k = 0; k < hid; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double acc = model.w1.bias[k];
        for (std::size_t c = 0; c < x.channels(); ++c) acc += model.w1.at(k, c, 0, 0) * x(c, y, xx);
        z(k, y, xx) = model.relu ? std::max(acc, 0.0) : acc;
      }
  Tensor3 s(1, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      double acc = model.w2.bias[0];
      for (std::size_t k = 0; k < hid; ++k)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const long sy = static_cast<long>(y) + dy;
            const long sx = static_cast<long>(xx) + dx;
            if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
            acc += model.w2.at(0, k, static_cast<std::size_t>(dy + 1), static_cast<std::size_t>(dx + 1)) *
                   z(k, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
          }
      s(0, y, xx) = acc;
    }
  return s;
}

std::vector<double> weighted_ridge(const std::vector<std::vector<std::vector<double>>>& designs,
                                   const std::vector<std::vector<double>>& targets,
                                   std::span<const double> alphas, std::span<const double> reg) {
  const auto dim = static_cast<Eigen::Index>(reg.size());
  Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
  for (std::size_t j = 0; j < designs.size(); ++j) {
    const auto rows = static_cast<Eigen::Index>(designs[j].size());
    Eigen::MatrixXd a(rows, dim);
    Eigen::VectorXd y(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < dim; ++c) a(r, c) = designs[j][static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      y(r) = targets[j][static_cast<std::size_t>(r)];
    }
    normal += alphas[j] * a.transpose() * a;
    rhs += alphas[j] * a.transpose() * y;
  }
  for (Eigen::Index i = 0; i < dim; ++i) normal(i, i) += reg[static_cast<std::size_t>(i)];
  const Eigen::VectorXd sol = normal.ldlt().solve(rhs);
  return {sol.data(), sol.data() + sol.size()};
}

BinaryMask boundary_pixels(const BinaryMask& m) {
  BinaryMask b(m.height, m.width);
  const int dy[4] = {-1, 1, 0, 0};
  const int dx[4] = {0, 0, -1, 1};
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      if (!m(y, x)) continue;
      for (int k = 0; k < 4; ++k) {
        const long ny = static_cast<long>(y) + dy[k];
        const long nx = static_cast<long>(x) + dx[k];
        if (ny < 0 || nx < 0 || ny >= static_cast<long>(m.height) || nx >= static_cast<long>(m.width)) continue;
        if (!m(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx))) {
          b.set(y, x, true);
          break;
        }
      }
    }
  return b;
}

double boundary_f_bruteforce(const BinaryMask& pred, const BinaryMask& gt, double tolerance) {
  const BinaryMask bp = boundary_pixels(pred);
  const BinaryMask bg = boundary_pixels(gt);
  auto points = [](const BinaryMask& m) {
    std::vector<std::pair<double, double>> p;
    for (std::size_t y = 0; y < m.height; ++y)
      for (std::size_t x = 0; x < m.width; ++x)
        if (m(y, x)) p.emplace_back(static_cast<double>(y), static_cast<double>(x));
    return p;
  };
  const auto pp = points(bp);
  const auto pg = points(bg);
  if (pp.empty() && pg.empty()) return 1.0;
  if (pp.empty() || pg.empty()) return 0.0;
  auto matched_fraction = [&](const auto& from, const auto& to) {
    std::size_t hit = 0;
    for (const auto& a : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& b : to) best = std::min(best, std::hypot(a.first - b.first, a.second - b.second));
      hit += best <= tolerance ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(from.size());
  };
  const double p = matched_fraction(pp, pg);
  const double r = matched_fraction(pg, pp);
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

double best_assignment_total(const std::vector<double>& scores, std::size_t rows, std::size_t cols) {
  // Permute column slots (real columns plus "unassigned" fillers) over rows.
  const std::size_t n = std::max(rows, cols);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = -std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
      if (perm[r] < cols) total += scores[r * cols + perm[r]];
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<double> memory_replay(double gamma, const std::vector<bool>& reliable) {
  std::vector<double> raw{gamma};
  double base = gamma;
  for (bool r : reliable) {
    base = base / (1.0 - gamma);
    raw.push_back(r ? 2.0 * base : base);
  }
  const double sum = std::accumulate(raw.begin(), raw.end(), 0.0);
  for (double& v : raw) v /= sum;
  return raw;
}

}  // namespace vmos::oracle
