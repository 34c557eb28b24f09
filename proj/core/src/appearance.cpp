#include "vmos/appearance.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "vmos/errors.hpp"
#include "vmos/random.hpp"

namespace vmos {

namespace {

std::atomic<std::size_t> g_fits{0};
std::atomic<std::size_t> g_non_monotone{0};

constexpr std::size_t kTaps = 9;  // 3x3 second layer
constexpr std::size_t kMaxHalvings = 8;

using Vec = std::vector<double>;

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double a, const Vec& x, Vec& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

// Parameter vector layout: [W1 (hidden x C) | W2 (hidden x 9) | b2].
struct Layout {
  std::size_t c;
  std::size_t hidden;
  std::size_t w1() const { return 0; }
  std::size_t w2() const { return hidden * c; }
  std::size_t b2() const { return hidden * c + hidden * kTaps; }
  std::size_t size() const { return b2() + 1; }
};

Vec pack(const AppearanceModel& m) {
  const Layout l{m.in_channels(), m.hidden()};
  Vec t(l.size());
  std::copy(m.w1.weights.begin(), m.w1.weights.end(), t.begin());
  std::copy(m.w2.weights.begin(), m.w2.weights.end(), t.begin() + static_cast<std::ptrdiff_t>(l.w2()));
  t[l.b2()] = m.w2.bias[0];
  return t;
}

void unpack(const Vec& t, AppearanceModel& m) {
  const Layout l{m.in_channels(), m.hidden()};
  std::copy(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(l.w2()), m.w1.weights.begin());
  std::copy(t.begin() + static_cast<std::ptrdiff_t>(l.w2()),
            t.begin() + static_cast<std::ptrdiff_t>(l.b2()), m.w2.weights.begin());
  m.w2.bias[0] = t[l.b2()];
}

double regularizer(const AppearanceModel& m) {
  double r1 = 0.0;
  double r2 = 0.0;
  for (double v : m.w1.weights) r1 += v * v;
  for (double v : m.w2.weights) r2 += v * v;
  return m.lambda1 * r1 + m.lambda2 * r2;
}

void check_sample(const AppearanceModel& m, const TrainSample& s) {
  require(s.features.channels() == m.in_channels(), "appearance: feature channels do not match model");
  require(s.target.shape() == Shape3{1, s.features.height(), s.features.width()},
          "appearance: target map does not match feature grid");
  require(s.alpha >= 0.0, "appearance: sample weight must be nonnegative");
}

/// Problem interface shared by the two solver paths. All quantities refer
/// to the stacked residual vector of the weighted data term.
class Problem {
 public:
  virtual ~Problem() = default;
  virtual void set_point(const AppearanceModel& m) = 0;
  virtual double data_term() const = 0;
  // g = J^T r (data part only).
  virtual Vec gradient() const = 0;
  // J^T J v (data part only).
  virtual Vec normal_product(const Vec& v) const = 0;
  // Data term at another point, leaving the current point unchanged.
  virtual double data_term_at(const AppearanceModel& m) const = 0;
};

// Linear model through cached sufficient statistics: prediction at every
// pixel is P_p . k with k the composed 3x3 kernel (plus bias).
class GramProblem final : public Problem {
 public:
  GramProblem(std::span<const TrainSample> bank, std::size_t c, std::size_t hidden)
      : c_(c), hidden_(hidden), dim_(kTaps * c + 1) {
    hess_.assign(dim_ * dim_, 0.0);
    rhs_.assign(dim_, 0.0);
    for (const auto& s : bank) {
      require(s.gram && s.gram->dim == dim_, "appearance: sample lacks matching Gram statistics");
      for (std::size_t i = 0; i < dim_ * dim_; ++i) hess_[i] += s.alpha * s.gram->hessian[i];
      for (std::size_t i = 0; i < dim_; ++i) rhs_[i] += s.alpha * s.gram->rhs[i];
      target_sq_ += s.alpha * s.gram->target_sq;
    }
  }

  void set_point(const AppearanceModel& m) override {
    w1_ = m.w1.weights;
    w2_ = m.w2.weights;
    k_ = compose(m);
    hk_ = hess_times(k_);
  }

  double data_term() const override { return quad(k_, hk_); }

  double data_term_at(const AppearanceModel& m) const override {
    const Vec k = compose(m);
    return quad(k, hess_times(k));
  }

  Vec gradient() const override {
    Vec u(dim_);
    for (std::size_t i = 0; i < dim_; ++i) u[i] = hk_[i] - rhs_[i];
    return kernel_transpose(u);
  }

  Vec normal_product(const Vec& v) const override { return kernel_transpose(hess_times(kernel_jacobian(v))); }

 private:
  // k[c*9 + t] = sum_h W2[h, t] W1[h, c]; k[9C] = b2.
  Vec compose(const AppearanceModel& m) const {
    Vec k(dim_, 0.0);
    for (std::size_t h = 0; h < hidden_; ++h) {
      for (std::size_t c = 0; c < c_; ++c) {
        const double a = m.w1.weights[h * c_ + c];
        if (a == 0.0) continue;
        for (std::size_t t = 0; t < kTaps; ++t) k[c * kTaps + t] += a * m.w2.weights[h * kTaps + t];
      }
    }
    k[dim_ - 1] = m.w2.bias[0];
    return k;
  }

  Vec hess_times(const Vec& k) const {
    Vec out(dim_, 0.0);
    for (std::size_t i = 0; i < dim_; ++i) {
      const double* row = hess_.data() + i * dim_;
      double s = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) s += row[j] * k[j];
      out[i] = s;
    }
    return out;
  }

  double quad(const Vec& k, const Vec& hk) const {
    return std::max(0.0, dot(k, hk) - 2.0 * dot(k, rhs_) + target_sq_);
  }

  // Directional derivative of the composed kernel.
  Vec kernel_jacobian(const Vec& v) const {
    const Layout l{c_, hidden_};
    Vec dk(dim_, 0.0);
    for (std::size_t h = 0; h < hidden_; ++h) {
      for (std::size_t c = 0; c < c_; ++c) {
        const double a = w1_[h * c_ + c];
        const double da = v[l.w1() + h * c_ + c];
        for (std::size_t t = 0; t < kTaps; ++t) {
          dk[c * kTaps + t] += da * w2_[h * kTaps + t] + a * v[l.w2() + h * kTaps + t];
        }
      }
    }
    dk[dim_ - 1] = v[l.b2()];
    return dk;
  }

  Vec kernel_transpose(const Vec& u) const {
    const Layout l{c_, hidden_};
    Vec g(l.size(), 0.0);
    for (std::size_t h = 0; h < hidden_; ++h) {
      for (std::size_t c = 0; c < c_; ++c) {
        double s1 = 0.0;
        const double a = w1_[h * c_ + c];
        for (std::size_t t = 0; t < kTaps; ++t) {
          s1 += u[c * kTaps + t] * w2_[h * kTaps + t];
          g[l.w2() + h * kTaps + t] += u[c * kTaps + t] * a;
        }
        g[l.w1() + h * c_ + c] = s1;
      }
    }
    g[l.b2()] = u[dim_ - 1];
    return g;
  }

  std::size_t c_;
  std::size_t hidden_;
  std::size_t dim_;
  Vec hess_;
  Vec rhs_;
  double target_sq_ = 0.0;
  Vec w1_;
  Vec w2_;
  Vec k_;
  Vec hk_;
};

// General path: residuals and Jacobian products through the two convolutions.
class DirectProblem final : public Problem {
 public:
  explicit DirectProblem(std::span<const TrainSample> bank) : bank_(bank) {}

  void set_point(const AppearanceModel& m) override {
    model_ = m;
    states_.clear();
    states_.reserve(bank_.size());
    for (const auto& s : bank_) {
      State st;
      st.z = conv2d(s.features, m.w1);
      st.a = m.relu ? relu(st.z) : st.z;
      Tensor3 pred = conv2d(st.a, m.w2);
      st.residual = Tensor3(pred.shape());
      const double w = std::sqrt(s.alpha);
      for (std::size_t i = 0; i < pred.size(); ++i)
        st.residual.data()[i] = w * (pred.data()[i] - s.target.data()[i]);
      states_.push_back(std::move(st));
    }
  }

  double data_term() const override {
    double f = 0.0;
    for (const auto& st : states_)
      for (double r : st.residual.data()) f += r * r;
    return f;
  }

  double data_term_at(const AppearanceModel& m) const override {
    double f = 0.0;
    for (const auto& s : bank_) {
      const Tensor3 pred = predict(m, s.features);
      double e = 0.0;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data()[i] - s.target.data()[i];
        e += d * d;
      }
      f += s.alpha * e;
    }
    return f;
  }

  Vec gradient() const override {
    const Layout l{model_.in_channels(), model_.hidden()};
    Vec g(l.size(), 0.0);
    for (std::size_t j = 0; j < bank_.size(); ++j) {
      accumulate_transpose(j, states_[j].residual, std::sqrt(bank_[j].alpha), g);
    }
    return g;
  }

  Vec normal_product(const Vec& v) const override {
    const Layout l{model_.in_channels(), model_.hidden()};
    Vec out(l.size(), 0.0);
    for (std::size_t j = 0; j < bank_.size(); ++j) {
      const double w = std::sqrt(bank_[j].alpha);
      if (w == 0.0) continue;
      Tensor3 jv = jacobian_product(j, v);
      for (double& x : jv.data()) x *= w;
      accumulate_transpose(j, jv, w, out);
    }
    return out;
  }

 private:
  struct State {
    Tensor3 z;
    Tensor3 a;
    Tensor3 residual;  // sqrt(alpha) * (pred - y)
  };

  // Unweighted J_j v.
  Tensor3 jacobian_product(std::size_t j, const Vec& v) const {
    const Layout l{model_.in_channels(), model_.hidden()};
    ConvKernel dw1 = ConvKernel::zeros(model_.hidden(), model_.in_channels(), 1, 1);
    std::copy(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(l.w2()), dw1.weights.begin());
    ConvKernel dw2 = ConvKernel::zeros(1, model_.hidden(), 3, 3);
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(l.w2()),
              v.begin() + static_cast<std::ptrdiff_t>(l.b2()), dw2.weights.begin());
    dw2.bias[0] = v[l.b2()];

    Tensor3 dz = conv2d(bank_[j].features, dw1);
    if (model_.relu) dz = relu_backward(states_[j].z, dz);
    ConvKernel w2_nobias = model_.w2;
    w2_nobias.bias[0] = 0.0;
    return add(conv2d(states_[j].a, dw2), conv2d(dz, w2_nobias));
  }

  // out += scale * J_j^T u.
  void accumulate_transpose(std::size_t j, const Tensor3& u, double scale_by, Vec& out) const {
    if (scale_by == 0.0) return;
    const Layout l{model_.in_channels(), model_.hidden()};
    const ConvGradients g2 = conv2d_backward(states_[j].a, model_.w2, u);
    Tensor3 gz = model_.relu ? relu_backward(states_[j].z, g2.input) : g2.input;
    const ConvGradients g1 = conv2d_backward(bank_[j].features, model_.w1, gz, 0);
    for (std::size_t i = 0; i < g1.kernel.weights.size(); ++i) out[l.w1() + i] += scale_by * g1.kernel.weights[i];
    for (std::size_t i = 0; i < g2.kernel.weights.size(); ++i) out[l.w2() + i] += scale_by * g2.kernel.weights[i];
    out[l.b2()] += scale_by * g2.kernel.bias[0];
  }

  std::span<const TrainSample> bank_;
  AppearanceModel model_;
  std::vector<State> states_;
};

}  // namespace

AppearanceModel AppearanceModel::seeded(std::size_t channels, const AppearanceConfig& config,
                                        std::uint64_t seed) {
  require(channels > 0 && config.hidden > 0, "AppearanceModel: sizes must be positive");
  AppearanceModel m;
  m.w1 = ConvKernel::zeros(config.hidden, channels, 1, 1);
  m.w2 = ConvKernel::zeros(1, config.hidden, 3, 3);
  m.lambda1 = config.lambda1;
  m.lambda2 = config.lambda2;
  m.relu = config.relu;
  Rng rng(seed);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(channels));
  for (double& v : m.w1.weights) v = rng.uniform(-s1, s1);
  for (double& v : m.w2.weights) v = rng.uniform(-config.w2_init_scale, config.w2_init_scale);
  return m;
}

void AppearanceModel::validate() const {
  w1.validate();
  w2.validate();
  require(w1.kernel_h == 1 && w1.kernel_w == 1, "AppearanceModel: W1 must be 1x1");
  require(w2.kernel_h == 3 && w2.kernel_w == 3 && w2.out_channels == 1 && w2.in_channels == w1.out_channels,
          "AppearanceModel: W2 must be 3x3 with a single output");
  require(w1.bias[0] == 0.0 && std::all_of(w1.bias.begin(), w1.bias.end(), [](double b) { return b == 0.0; }),
          "AppearanceModel: W1 has no bias");
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "AppearanceModel: regularization must be nonnegative");
}

GramStats compute_gram(const Tensor3& features, const Tensor3& target) {
  require(target.shape() == Shape3{1, features.height(), features.width()},
          "compute_gram: target map does not match feature grid");
  const std::size_t c = features.channels();
  const std::size_t h = features.height();
  const std::size_t w = features.width();
  GramStats g;
  g.dim = kTaps * c + 1;
  g.hessian.assign(g.dim * g.dim, 0.0);
  g.rhs.assign(g.dim, 0.0);
  Vec patch(g.dim);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t t = 0; t < kTaps; ++t) {
          const auto yy = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(t / 3) - 1;
          const auto xx = static_cast<std::ptrdiff_t>(x) + static_cast<std::ptrdiff_t>(t % 3) - 1;
          const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<std::ptrdiff_t>(h) &&
                              xx < static_cast<std::ptrdiff_t>(w);
          patch[ch * kTaps + t] =
              inside ? features(ch, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) : 0.0;
        }
      }
      patch[g.dim - 1] = 1.0;
      const double yv = target(0, y, x);
      for (std::size_t i = 0; i < g.dim; ++i) {
        const double pi = patch[i];
        if (pi == 0.0) continue;
        double* row = g.hessian.data() + i * g.dim;
        for (std::size_t j = i; j < g.dim; ++j) row[j] += pi * patch[j];
        g.rhs[i] += pi * yv;
      }
      g.target_sq += yv * yv;
    }
  }
  for (std::size_t i = 0; i < g.dim; ++i)
    for (std::size_t j = 0; j < i; ++j) g.hessian[i * g.dim + j] = g.hessian[j * g.dim + i];
  return g;
}

TrainSample make_sample(Tensor3 features, Tensor3 target, double alpha, bool with_gram) {
  TrainSample s{std::move(features), std::move(target), alpha, nullptr};
  if (with_gram) s.gram = std::make_shared<const GramStats>(compute_gram(s.features, s.target));
  return s;
}

Tensor3 predict(const AppearanceModel& model, const Tensor3& features) {
  require(features.channels() == model.in_channels(), "predict: feature channels do not match model");
  Tensor3 z = conv2d(features, model.w1);
  if (model.relu) z = relu(z);
  return conv2d(z, model.w2);
}

double objective(const AppearanceModel& model, std::span<const TrainSample> bank) {
  double f = 0.0;
  for (const auto& s : bank) {
    check_sample(model, s);
    const Tensor3 pred = predict(model, s.features);
    double e = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred.data()[i] - s.target.data()[i];
      e += d * d;
    }
    f += s.alpha * e;
  }
  return f + regularizer(model);
}

FitResult gauss_newton_fit(AppearanceModel model, std::span<const TrainSample> bank,
                           const FitOptions& options) {
  model.validate();
  require(!bank.empty(), "gauss_newton_fit: training bank is empty");
  require(options.iters_outer >= 1, "gauss_newton_fit: need at least one outer iteration");
  require(options.damping >= 0.0, "gauss_newton_fit: damping must be nonnegative");
  for (const auto& s : bank) check_sample(model, s);

  bool use_gram = options.path == SolverPath::kGram;
  if (options.path == SolverPath::kAuto) {
    use_gram = !model.relu &&
               std::all_of(bank.begin(), bank.end(), [](const TrainSample& s) { return s.gram != nullptr; });
  }
  require(!(use_gram && model.relu), "gauss_newton_fit: Gram path needs a linear model");

  std::unique_ptr<Problem> problem;
  if (use_gram) {
    problem = std::make_unique<GramProblem>(bank, model.in_channels(), model.hidden());
  } else {
    problem = std::make_unique<DirectProblem>(bank);
  }

  const Layout layout{model.in_channels(), model.hidden()};
  // Regularization weight per parameter; the bias is free.
  Vec reg(layout.size(), 0.0);
  std::fill(reg.begin(), reg.begin() + static_cast<std::ptrdiff_t>(layout.w2()), model.lambda1);
  std::fill(reg.begin() + static_cast<std::ptrdiff_t>(layout.w2()),
            reg.begin() + static_cast<std::ptrdiff_t>(layout.b2()), model.lambda2);
  Vec active(layout.size(), 1.0);
  if (!options.fit_w1) std::fill(active.begin(), active.begin() + static_cast<std::ptrdiff_t>(layout.w2()), 0.0);

  auto check_finite = [](double f, const char* where) {
    if (!std::isfinite(f)) throw NumericalError(std::string("gauss_newton_fit: non-finite objective ") + where);
  };

  FitResult result{model, {}, {}};
  problem->set_point(model);
  double current = problem->data_term() + regularizer(model);
  check_finite(current, "at start");
  result.trace.push_back(current);

  for (std::size_t outer = 0; outer < options.iters_outer; ++outer) {
    const Vec theta = pack(model);
    Vec g = problem->gradient();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (g[i] + reg[i] * theta[i]) * active[i];

    auto apply = [&](const Vec& v) {
      Vec masked(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) masked[i] = v[i] * active[i];
      Vec out = problem->normal_product(masked);
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (out[i] + (reg[i] + options.damping) * masked[i]) * active[i];
      return out;
    };

    // Conjugate gradient on (J^T J + R + mu I) d = -g from d = 0.
    Vec d(g.size(), 0.0);
    Vec r(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) r[i] = -g[i];
    Vec p = r;
    double rr = dot(r, r);
    for (std::size_t it = 0; it < options.iters_cg && rr > 0.0; ++it) {
      const Vec ap = apply(p);
      const double pap = dot(p, ap);
      if (!(pap > 0.0)) break;
      const double step = rr / pap;
      axpy(step, p, d);
      axpy(-step, ap, r);
      const double rr_next = dot(r, r);
      const double beta = rr_next / rr;
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = r[i] + beta * p[i];
      rr = rr_next;
    }
    if (outer == 0) result.first_step = d;

    double step = 1.0;
    bool accepted = false;
    AppearanceModel trial = model;
    double trial_value = current;
    for (std::size_t halving = 0; halving <= kMaxHalvings; ++halving, step *= 0.5) {
      Vec t = theta;
      axpy(step, d, t);
      unpack(t, trial);
      trial_value = problem->data_term_at(trial) + regularizer(trial);
      check_finite(trial_value, "during line search");
      if (trial_value <= current) {
        accepted = true;
        break;
      }
    }
    if (accepted) {
      model = trial;
      current = trial_value;
      problem->set_point(model);
    }
    result.trace.push_back(current);
  }

  ++g_fits;
  for (std::size_t i = 1; i < result.trace.size(); ++i) {
    if (result.trace[i] > result.trace[i - 1]) {
      ++g_non_monotone;
      break;
    }
  }
  result.model = std::move(model);
  return result;
}

InitResult init_model(const BinaryMask& pseudo_gt, const Tensor3& features,
                      const AppearanceConfig& config, std::uint64_t seed) {
  require(!pseudo_gt.empty(), "init_model: pseudo ground-truth mask is empty");
  Tensor3 target = area_downsample(pseudo_gt, config.stride);
  require(target.height() == features.height() && target.width() == features.width(),
          "init_model: mask grid does not match the feature grid");
  AppearanceModel model = AppearanceModel::seeded(features.channels(), config, seed);
  TrainSample sample = make_sample(features, std::move(target), 1.0, !config.relu);
  FitOptions opts;
  opts.iters_outer = config.iters_init;
  opts.iters_cg = config.iters_cg;
  opts.damping = config.damping;
  FitResult fit = gauss_newton_fit(std::move(model), std::span<const TrainSample>(&sample, 1), opts);
  return {std::move(fit.model), std::move(sample), std::move(fit.trace)};
}

FitCounters fit_counters() { return {g_fits.load(), g_non_monotone.load()}; }

}  // namespace vmos
