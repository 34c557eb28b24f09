#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "suites.hpp"
#include "vmos/errors.hpp"
#include "vmos/heads.hpp"

using namespace vmos;

namespace {

const HeadConfig kSmall{4, 4, 4, 4};

Tensor3 concat_by_hand(const Tensor3& a, const Tensor3& b) {
  Tensor3 out(a.channels() + b.channels(), a.height(), a.width());
  for (std::size_t c = 0; c < out.channels(); ++c)
    for (std::size_t y = 0; y < a.height(); ++y)
      for (std::size_t x = 0; x < a.width(); ++x)
        out(c, y, x) = c < a.channels() ? a(c, y, x) : b(c - a.channels(), y, x);
  return out;
}

Tensor3 top_left(const Tensor3& t, std::size_t h, std::size_t w) {
  Tensor3 out(t.channels(), h, w);
  for (std::size_t c = 0; c < t.channels(); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out(c, y, x) = t(c, y, x);
  return out;
}

Tensor3 rectify(Tensor3 t) {
  for (double& v : t.data()) v = std::max(v, 0.0);
  return t;
}

// Frame-resolution decoder logits, layer by layer.
Tensor3 decoder_by_hand(const Tensor3& feat, const LowLevelFeatures& low, const DecoderParams& p,
                        std::size_t stride, std::size_t h, std::size_t w) {
  const Tensor3 a = rectify(oracle::conv_loop(
      concat_by_hand(top_left(oracle::bilinear_formula(feat, 2), low.stride8.height(), low.stride8.width()), low.stride8),
      p.conv_a));
  const Tensor3 cat_b =
      concat_by_hand(top_left(oracle::bilinear_formula(a, 2), low.stride4.height(), low.stride4.width()), low.stride4);
  const Tensor3 b = rectify(oracle::conv_loop(cat_b, p.conv_b));
  const Tensor3 c = rectify(oracle::conv_loop(b, p.conv_c));
  return top_left(oracle::bilinear_formula(oracle::conv_loop(c, p.conv_out), stride), h, w);
}

double sigmoid_of(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<CenterPeak> peaks_by_scan(const Tensor3& hm, std::size_t window, double thr, std::size_t top_k) {
  const Tensor3 wmax = oracle::window_max(hm, window);
  const long r = static_cast<long>(window / 2);
  std::vector<CenterPeak> out;
  for (std::size_t y = 0; y < hm.height(); ++y)
    for (std::size_t x = 0; x < hm.width(); ++x) {
      const double v = hm(0, y, x);
      if (!(v > thr) || v != wmax(0, y, x)) continue;
      bool earlier = false;
      for (long yy = static_cast<long>(y) - r; yy <= static_cast<long>(y) + r; ++yy)
        for (long xx = static_cast<long>(x) - r; xx <= static_cast<long>(x) + r; ++xx) {
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(hm.height()) || xx >= static_cast<long>(hm.width())) continue;
          const bool before = yy < static_cast<long>(y) || (yy == static_cast<long>(y) && xx < static_cast<long>(x));
          if (before && hm(0, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) == v) earlier = true;
        }
      if (!earlier) out.push_back({y, x, v});
    }
  std::stable_sort(out.begin(), out.end(), [](const CenterPeak& a, const CenterPeak& b) { return a.score > b.score; });
  if (out.size() > top_k) out.resize(top_k);
  return out;
}

}  // namespace

TEST_CASE("forward: zero parameters") {
  Rng rng(41);
  const HeadExample ex = oracle::random_head_example(rng, kSmall, 32, 48);
  const HeadParams p = HeadParams::zeros(kSmall);
  const Tensor3 s = salient_forward(ex.sal, ex.low, p.salient, 4, 32, 48);
  CHECK(s.shape() == Shape3{1, 32, 48});
  for (double v : s.data()) CHECK(v == 0.5);
  const InstanceOutput io = instance_forward(ex.ins, ex.low, p.instance, 4, 32, 48);
  for (double v : io.heatmap.data()) CHECK(v == 0.5);
  for (double v : io.offsets.data()) CHECK(v == 0.0);
}

TEST_CASE("forward: determinism and layer-by-layer composition") {
  Rng rng(42);
  const HeadExample ex = oracle::random_head_example(rng, kSmall, 32, 48);
  const HeadParams p = HeadParams::seeded(kSmall, 3);
  const Tensor3 s = salient_forward(ex.sal, ex.low, p.salient, 4, 30, 45);
  CHECK(s == salient_forward(ex.sal, ex.low, p.salient, 4, 30, 45));
  const Tensor3 zs = decoder_by_hand(ex.sal, ex.low, p.salient, 4, 30, 45);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s.data()[i] == doctest::Approx(sigmoid_of(zs.data()[i])).epsilon(1e-12));

  const InstanceOutput io = instance_forward(ex.ins, ex.low, p.instance, 4, 30, 45);
  const Tensor3 zi = decoder_by_hand(ex.ins, ex.low, p.instance, 4, 30, 45);
  for (std::size_t i = 0; i < 30 * 45; ++i) {
    CHECK(io.heatmap.data()[i] == doctest::Approx(sigmoid_of(zi.plane(0)[i])).epsilon(1e-12));
    CHECK(io.offsets.plane(0)[i] == doctest::Approx(4.0 * zi.plane(1)[i]).epsilon(1e-12).scale(1e-12));
    CHECK(io.offsets.plane(1)[i] == doctest::Approx(4.0 * zi.plane(2)[i]).epsilon(1e-12).scale(1e-12));
  }
}

TEST_CASE("forward: shape errors") {
  Rng rng(43);
  const HeadExample ex = oracle::random_head_example(rng, kSmall, 32, 32);
  const HeadParams p = HeadParams::zeros(kSmall);
  CHECK_THROWS_AS(salient_forward(ex.sal, ex.low, p.instance, 4, 32, 32), ContractError);
  CHECK_THROWS_AS(salient_forward(ex.sal, ex.low, p.salient, 4, 64, 32), ContractError);
  CHECK_THROWS_AS(instance_forward(Tensor3(3, 2, 2), ex.low, p.instance, 4, 32, 32), ContractError);
}

TEST_CASE("center targets") {
  InstanceMask gt(128, 128);
  for (std::size_t y = 10; y < 21; ++y)
    for (std::size_t x = 10; x < 21; ++x) gt.at(y, x) = 1;  // centroid (15, 15)
  const Tensor3 t = encode_center_targets(gt, 10.0);
  CHECK(t(0, 15, 15) == 1.0);
  CHECK(t(0, 15, 25) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(t(0, 15, 25) == doctest::Approx(0.60653).epsilon(1e-5));

  for (std::size_t y = 110; y < 121; ++y)
    for (std::size_t x = 10; x < 21; ++x) gt.at(y, x) = 2;  // centroid (115, 15), 100 px away
  const Tensor3 t2 = encode_center_targets(gt, 10.0);
  CHECK(t2(0, 15, 15) == 1.0);
  CHECK(t2(0, 115, 15) == 1.0);

  const Tensor3 empty_targets = encode_center_targets(InstanceMask(8, 8));
  for (double v : empty_targets.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(encode_center_targets(gt, 0.0), ContractError);
}

TEST_CASE("offset targets") {
  InstanceMask gt(20, 20);
  for (std::size_t y = 5; y < 10; ++y)
    for (std::size_t x = 4; x < 15; ++x) gt.at(y, x) = 3;  // centroid (7, 9)
  const OffsetTargets o = encode_offset_targets(gt);
  CHECK(o.offsets(0, 7, 9) == 0.0);
  CHECK(o.offsets(1, 7, 9) == 0.0);
  CHECK(o.offsets(0, 7, 4) == 0.0);
  CHECK(o.offsets(1, 7, 4) == 5.0);
  CHECK(o.valid.area() == 55);
  CHECK(o.offsets(0, 0, 0) == 0.0);

  Rng rng(44);
  InstanceMask blob(24, 24);
  for (auto& l : blob.labels) l = rng.uniform() < 0.3 ? 1 + static_cast<std::uint32_t>(rng.below(3)) : 0;
  const OffsetTargets ob = encode_offset_targets(blob);
  for (std::uint32_t id : blob.ids()) {
    double sy = 0, sx = 0, n = 0;
    for (std::size_t y = 0; y < 24; ++y)
      for (std::size_t x = 0; x < 24; ++x)
        if (blob(y, x) == id) {
          sy += static_cast<double>(y);
          sx += static_cast<double>(x);
          n += 1;
        }
    for (std::size_t y = 0; y < 24; ++y)
      for (std::size_t x = 0; x < 24; ++x)
        if (blob(y, x) == id) {
          CHECK(ob.offsets(0, y, x) == doctest::Approx(sy / n - static_cast<double>(y)).epsilon(1e-12).scale(1e-12));
          CHECK(ob.offsets(1, y, x) == doctest::Approx(sx / n - static_cast<double>(x)).epsilon(1e-12).scale(1e-12));
        }
  }
  CHECK(ob.valid == blob.foreground());
}

TEST_CASE("salient loss") {
  BinaryMask gt(4, 4);
  gt.set(1, 1, true);
  gt.set(2, 3, true);
  Tensor3 perfect(1, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) perfect.data()[i] = gt.bits[i] ? 1.0 - 1e-7 : 1e-7;
  CHECK(loss_salient(perfect, gt) == doctest::Approx(1e-7).epsilon(1e-6));
  CHECK(loss_salient(Tensor3(1, 4, 4, 0.5), gt) == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  Rng rng(45);
  const Tensor3 p = oracle::random_tensor(rng, 1, 4, 4, 0.01, 0.99);
  double s = 0.0;
  for (std::size_t i = 0; i < 16; ++i) s -= gt.bits[i] ? std::log(p.data()[i]) : std::log(1 - p.data()[i]);
  CHECK(loss_salient(p, gt) == doctest::Approx(s / 16).epsilon(1e-14));

  CHECK_THROWS_AS(loss_salient(Tensor3(1, 4, 4, 1.0), gt), ContractError);
  CHECK_THROWS_AS(loss_salient(Tensor3(1, 4, 4, 0.0), gt), ContractError);
}

TEST_CASE("center and offset losses") {
  Rng rng(46);
  const Tensor3 t = oracle::random_tensor(rng, 1, 5, 6, 0, 1);
  CHECK(loss_center(t, t) == 0.0);
  CHECK(loss_center(Tensor3(1, 3, 3, 0.0), Tensor3(1, 3, 3, 1.0)) == 1.0);
  const Tensor3 p = oracle::random_tensor(rng, 1, 5, 6, 0, 1);
  double s = 0.0;
  for (std::size_t i = 0; i < 30; ++i) s += (p.data()[i] - t.data()[i]) * (p.data()[i] - t.data()[i]);
  CHECK(loss_center(p, t) == doctest::Approx(s / 30).epsilon(1e-14));

  const Tensor3 o1 = oracle::random_tensor(rng, 2, 5, 6, -3, 3);
  const Tensor3 o2 = oracle::random_tensor(rng, 2, 5, 6, -3, 3);
  CHECK(loss_offset(o1, o2, BinaryMask(5, 6)) == 0.0);
  BinaryMask one(5, 6);
  one.set(2, 2, true);
  Tensor3 shifted = o2;
  shifted(0, 2, 2) += 1.0;
  shifted(1, 2, 2) -= 1.0;
  CHECK(loss_offset(shifted, o2, one) == doctest::Approx(1.0).epsilon(1e-14));
  const BinaryMask valid = oracle::random_mask(rng, 5, 6, 0.5);
  double acc = 0.0;
  for (std::size_t i = 0; i < 30; ++i)
    if (valid.bits[i]) acc += std::abs(o1.plane(0)[i] - o2.plane(0)[i]) + std::abs(o1.plane(1)[i] - o2.plane(1)[i]);
  CHECK(loss_offset(o1, o2, valid) == doctest::Approx(acc / (2.0 * static_cast<double>(valid.area()))).epsilon(1e-14));
}

TEST_CASE("head_loss agrees with the public losses") {
  Rng rng(47);
  const HeadExample ex = oracle::random_head_example(rng, kSmall, 32, 32);
  const HeadParams p = HeadParams::seeded(kSmall, 5);
  const HeadLoss l = head_loss(ex, p);
  const Tensor3 s = salient_forward(ex.sal, ex.low, p.salient, 4, 32, 32);
  const InstanceOutput io = instance_forward(ex.ins, ex.low, p.instance, 4, 32, 32);
  CHECK(l.salient == doctest::Approx(loss_salient(s, ex.targets.foreground)).epsilon(1e-10));
  CHECK(l.center == doctest::Approx(loss_center(io.heatmap, ex.targets.center)).epsilon(1e-10));
  CHECK(l.offset == doctest::Approx(loss_offset(io.offsets, ex.targets.offset.offsets, ex.targets.offset.valid))
                        .epsilon(1e-10));
}

TEST_CASE("detect_centers") {
  CHECK(detect_centers(Tensor3(1, 9, 9)).empty());
  Tensor3 spike(1, 9, 9);
  spike(0, 4, 6) = 1.0;
  const auto one = detect_centers(spike);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == CenterPeak{4, 6, 1.0});

  Tensor3 two(1, 12, 12);
  two(0, 5, 3) = 0.7;
  two(0, 5, 6) = 0.9;
  const auto best = detect_centers(two, 7);
  REQUIRE(best.size() == 1);
  CHECK(best[0] == CenterPeak{5, 6, 0.9});
  CHECK(best == peaks_by_scan(two, 7, 0.1, 50));

  Tensor3 tie(1, 5, 5);
  tie(0, 2, 1) = tie(0, 2, 3) = 0.5;
  const auto t = detect_centers(tie, 7);
  REQUIRE(t.size() == 1);
  CHECK(t[0].x == 1);

  Rng rng(48);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor3 hm(1, 12 + rng.below(10), 12 + rng.below(10));
    // Coarse levels give plateaus and equal-valued neighbours.
    for (double& v : hm.data()) v = trial % 2 ? rng.uniform() : 0.1 * static_cast<double>(rng.below(8));
    const std::size_t win = 1 + 2 * rng.below(4);
    const std::size_t k = 1 + rng.below(8);
    CHECK(detect_centers(hm, win, 0.1, k) == peaks_by_scan(hm, win, 0.1, k));
  }
}

TEST_CASE("group_instances") {
  BinaryMask fg(6, 6);
  for (std::size_t y = 1; y < 5; ++y)
    for (std::size_t x = 1; x < 5; ++x) fg.set(y, x, true);
  SUBCASE("one center takes all foreground") {
    const std::vector<CenterPeak> c{{2, 2, 0.9}};
    const Grouping g = group_instances(fg, Tensor3(2, 6, 6), c);
    CHECK(g.labels.select(1) == fg);
    REQUIRE(g.proposals.size() == 1);
    CHECK(g.proposals[0].mask == fg);
    CHECK(g.proposals[0].score == 0.9);
  }
  SUBCASE("equidistant pixel goes to the first center") {
    const std::vector<CenterPeak> c{{1, 1, 0.5}, {1, 3, 0.6}};
    const Grouping g = group_instances(fg, Tensor3(2, 6, 6), c);
    CHECK(g.labels(1, 2) == 1);
    CHECK(g.labels(1, 3) == 2);
  }
  SUBCASE("no centers drops the foreground") {
    const Grouping g = group_instances(fg, Tensor3(2, 6, 6), {});
    CHECK(g.labels.foreground().empty());
    CHECK(g.proposals.empty());
  }
  SUBCASE("exhaustive nearest-center oracle") { CHECK(suite::grouping_mismatches(100, 7) == 0); }
}

TEST_CASE("train_heads: zero learning rate keeps parameters") {
  Rng rng(49);
  std::vector<HeadExample> data{oracle::random_head_example(rng, kSmall, 32, 32)};
  const HeadParams p = HeadParams::seeded(kSmall, 1);
  HeadTrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 3;
  const HeadTrainResult r = train_heads(data, p, cfg);
  CHECK(r.params == p);
  CHECK(r.epoch_loss.size() == 3);
}

TEST_CASE("train_heads: one-sample overfit") {
  Rng rng(50);
  std::vector<HeadExample> data{oracle::random_head_example(rng, kSmall, 32, 32)};
  const HeadParams p = HeadParams::seeded(kSmall, 2);
  const double initial = head_loss(data[0], p).total();
  HeadTrainConfig cfg;
  cfg.epochs = 500;
  cfg.batch_size = 1;
  cfg.learning_rate = 0.05;
  cfg.weight_decay = 0.0;
  const HeadTrainResult r = train_heads(data, p, cfg);
  const double final_loss = head_loss(data[0], r.params).total();
  MESSAGE("overfit loss " << initial << " -> " << final_loss);
  // Outputs are bilinear upsamplings of a stride-4 map, so sharp rectangle
  // edges cannot be fit exactly; the loss floor sits well above zero.
  CHECK(final_loss < 0.25 * initial);
  CHECK(r.epoch_loss.back() < r.epoch_loss[r.epoch_loss.size() / 2]);
}

TEST_CASE("parameter blocks cover every array once") {
  HeadParams p = HeadParams::zeros(HeadConfig{});
  const auto blocks = parameter_blocks(p);
  CHECK(blocks.size() == 16);
  std::size_t total = 0;
  for (const auto& b : blocks) {
    std::size_t n = 1;
    for (auto d : b.shape) n *= d;
    CHECK(n == b.values.size());
    total += n;
  }
  std::size_t expect = 0;
  for (const DecoderParams* d : {&p.salient, &p.instance})
    for (const ConvKernel* k : {&d->conv_a, &d->conv_b, &d->conv_c, &d->conv_out})
      expect += k->weights.size() + k->bias.size();
  CHECK(total == expect);
}
