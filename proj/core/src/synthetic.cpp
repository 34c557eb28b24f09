#include "vmos/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "json.hpp"
#include "vmos/errors.hpp"
#include "vmos/random.hpp"

namespace vmos {

namespace {

constexpr double kTextureAmplitude = 0.12;

struct Texture {
  double fy;
  double fx;
  double phase;
};

Texture make_texture(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x7e7));
  return {rng.uniform(0.25, 0.6), rng.uniform(0.25, 0.6), rng.uniform(0.0, 2.0 * std::numbers::pi)};
}

}  // namespace

Point2 ObjectSpec::center_at(std::size_t t) const {
  const double td = static_cast<double>(t);
  const double s = std::sin(2.0 * std::numbers::pi * td / period + phase);
  return {start.y + velocity.y * td + amplitude.y * s, start.x + velocity.x * td + amplitude.x * s};
}

bool ObjectSpec::covers(std::size_t t, double y, double x) const {
  if (t < enter || t >= exit) return false;
  const Point2 c = center_at(t);
  const double dy = y - c.y;
  const double dx = x - c.x;
  if (shape == ShapeKind::kRectangle) return std::abs(dy) <= radius_y && std::abs(dx) <= radius_x;
  const double ny = dy / radius_y;
  const double nx = dx / radius_x;
  return ny * ny + nx * nx <= 1.0;
}

void SceneSpec::validate() const {
  require(height >= 16 && width >= 16, "scene: canvas must be at least 16x16");
  require(background >= 0.0 && background <= 1.0 && noise >= 0.0, "scene: bad background or noise level");
  std::set<std::uint32_t> ids;
  for (const auto& o : objects) {
    require(o.id != 0, "scene: object id 0 is reserved for background");
    require(ids.insert(o.id).second, "scene: duplicate object id " + std::to_string(o.id));
    require(o.radius_y > 0.0 && o.radius_x > 0.0, "scene: object radii must be positive");
    require(o.period > 0.0, "scene: motion period must be positive");
    require(o.enter <= o.exit, "scene: object exits before it enters");
    for (double c : o.color) require(c >= 0.0 && c <= 1.0, "scene: colors must lie in [0, 1]");
  }
}

Video render_scene(const SceneSpec& spec) {
  spec.validate();
  // Far to near, so nearer objects overwrite.
  std::vector<std::size_t> order(spec.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return spec.objects[a].depth < spec.objects[b].depth; });
  std::vector<Texture> textures;
  for (const auto& o : spec.objects) textures.push_back(make_texture(o.texture_seed));

  Video v;
  for (std::size_t t = 0; t < spec.frames; ++t) {
    Frame f(spec.height, spec.width, spec.background);
    InstanceMask m(spec.height, spec.width);
    for (std::size_t k : order) {
      const ObjectSpec& o = spec.objects[k];
      if (t < o.enter || t >= o.exit) continue;
      const Point2 c = o.center_at(t);
      const Texture& tex = textures[k];
      for (std::size_t y = 0; y < spec.height; ++y) {
        const double py = static_cast<double>(y) + 0.5;
        for (std::size_t x = 0; x < spec.width; ++x) {
          const double px = static_cast<double>(x) + 0.5;
          if (!o.covers(t, py, px)) continue;
          const double wave = kTextureAmplitude * std::sin(tex.fy * (py - c.y) + tex.fx * (px - c.x) + tex.phase);
          for (std::size_t ch = 0; ch < 3; ++ch) f.at(y, x, ch) = o.color[ch] + wave;
          m.at(y, x) = o.id;
        }
      }
    }
    Rng rng(mix_seed(spec.seed, t));
    // Quantized to 8 bits so frames survive a round trip through PPM files.
    for (double& p : f.rgb) p = std::round(std::clamp(p + rng.uniform(-spec.noise, spec.noise), 0.0, 1.0) * 255.0) / 255.0;
    v.frames.push_back(std::move(f));
    v.masks.push_back(std::move(m));
  }
  return v;
}

SceneSpec preset_scene(std::string_view name, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5ce));
  SceneSpec s;
  s.seed = seed;
  if (name == "three") {
    s.frames = 60;
    const double lanes[3] = {22.0, 64.0, 106.0};
    const std::array<double, 3> colors[3] = {{0.95, 0.35, 0.25}, {0.3, 0.85, 0.35}, {0.35, 0.5, 0.95}};
    for (std::uint32_t i = 0; i < 3; ++i) {
      ObjectSpec o;
      o.id = i + 1;
      o.shape = i == 1 ? ShapeKind::kRectangle : ShapeKind::kEllipse;
      o.radius_y = rng.uniform(9.0, 11.0);
      o.radius_x = rng.uniform(10.0, 13.0);
      o.color = colors[i];
      o.texture_seed = mix_seed(seed, i);
      const bool rightward = (i % 2) == 0;
      o.start = {lanes[i], rightward ? rng.uniform(26.0, 34.0) : rng.uniform(94.0, 102.0)};
      o.velocity = {0.0, (rightward ? 1.0 : -1.0) * rng.uniform(0.7, 1.0)};
      o.amplitude = {rng.uniform(2.0, 4.0), rng.uniform(4.0, 8.0)};
      o.period = rng.uniform(24.0, 40.0);
      o.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      o.depth = static_cast<int>(i);
      s.objects.push_back(o);
    }
  } else if (name == "occlusion") {
    // The small object moves 3 px per frame behind a static occluder whose
    // half-width exceeds its own by 8 px: hidden while |dx| <= 8, i.e. for
    // the five frames around t = 16.
    s.frames = 32;
    ObjectSpec big;
    big.id = 1;
    big.shape = ShapeKind::kRectangle;
    big.radius_y = 20.0;
    big.radius_x = 20.0;
    big.color = {0.3, 0.45, 0.95};
    big.texture_seed = mix_seed(seed, 1);
    big.start = {64.0, 64.0};
    big.depth = 1;
    ObjectSpec small;
    small.id = 2;
    small.shape = ShapeKind::kRectangle;
    small.radius_y = 12.0;
    small.radius_x = 12.0;
    small.color = {0.95, 0.6, 0.2};
    small.texture_seed = mix_seed(seed, 2);
    small.start = {64.0, 64.0 - 3.0 * 16.0};
    small.velocity = {0.0, 3.0};
    small.depth = 0;
    s.objects = {big, small};
  } else if (name == "single") {
    s.frames = 30;
    ObjectSpec o;
    o.id = 1;
    o.radius_y = 14.0;
    o.radius_x = 16.0;
    o.color = {0.9, 0.75, 0.3};
    o.texture_seed = mix_seed(seed, 1);
    o.start = {60.0, 40.0};
    o.velocity = {0.3, 1.2};
    o.amplitude = {4.0, 0.0};
    s.objects = {o};
  } else if (name == "random") {
    return random_scene(seed);
  } else {
    throw ContractError("unknown scene preset '" + std::string(name) + "'");
  }
  return s;
}

SceneSpec random_scene(std::uint64_t seed, std::size_t frames, std::size_t height, std::size_t width) {
  Rng rng(mix_seed(seed, 0x4a4d));
  SceneSpec s;
  s.seed = seed;
  s.frames = frames;
  s.height = height;
  s.width = width;
  const std::size_t n = 1 + rng.below(4);
  std::vector<int> depths(n);
  std::iota(depths.begin(), depths.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(depths[i - 1], depths[rng.below(i)]);
  for (std::uint32_t i = 0; i < n; ++i) {
    ObjectSpec o;
    o.id = i + 1;
    o.shape = rng.uniform() < 0.5 ? ShapeKind::kEllipse : ShapeKind::kRectangle;
    o.radius_y = rng.uniform(8.0, 18.0);
    o.radius_x = rng.uniform(8.0, 18.0);
    for (double& c : o.color) c = rng.uniform(0.35, 1.0);
    o.color[rng.below(3)] = rng.uniform(0.75, 1.0);
    o.texture_seed = rng.next();
    o.start = {rng.uniform(0.15, 0.85) * static_cast<double>(height), rng.uniform(0.15, 0.85) * static_cast<double>(width)};
    o.velocity = {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
    o.amplitude = {rng.uniform(0.0, 4.0), rng.uniform(0.0, 4.0)};
    o.period = rng.uniform(16.0, 40.0);
    o.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    o.depth = depths[i];
    s.objects.push_back(o);
  }
  return s;
}

namespace {

using nlohmann::json;

json point_json(const Point2& p) { return json::array({p.y, p.x}); }
Point2 point_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

std::string scene_to_json(const SceneSpec& spec) {
  json objs = json::array();
  for (const auto& o : spec.objects) {
    json jo = {{"id", o.id},
               {"shape", o.shape == ShapeKind::kEllipse ? "ellipse" : "rectangle"},
               {"radius", json::array({o.radius_y, o.radius_x})},
               {"color", o.color},
               {"texture_seed", o.texture_seed},
               {"start", point_json(o.start)},
               {"velocity", point_json(o.velocity)},
               {"amplitude", point_json(o.amplitude)},
               {"period", o.period},
               {"phase", o.phase},
               {"enter", o.enter},
               {"depth", o.depth}};
    if (o.exit != static_cast<std::size_t>(-1)) jo["exit"] = o.exit;
    objs.push_back(jo);
  }
  json j = {{"frames", spec.frames}, {"height", spec.height}, {"width", spec.width},
            {"background", spec.background}, {"noise", spec.noise}, {"seed", spec.seed},
            {"objects", objs}};
  return j.dump(2) + "\n";
}

SceneSpec scene_from_json(std::string_view text) {
  SceneSpec s;
  try {
    const json j = json::parse(text);
    s.frames = j.value("frames", s.frames);
    s.height = j.value("height", s.height);
    s.width = j.value("width", s.width);
    s.background = j.value("background", s.background);
    s.noise = j.value("noise", s.noise);
    s.seed = j.value("seed", s.seed);
    for (const auto& jo : j.at("objects")) {
      ObjectSpec o;
      o.id = jo.at("id").get<std::uint32_t>();
      const std::string shape = jo.value("shape", std::string("ellipse"));
      if (shape == "ellipse") {
        o.shape = ShapeKind::kEllipse;
      } else if (shape == "rectangle") {
        o.shape = ShapeKind::kRectangle;
      } else {
        throw DataError("scene: unknown shape '" + shape + "'");
      }
      const auto& r = jo.at("radius");
      o.radius_y = r.at(0).get<double>();
      o.radius_x = r.at(1).get<double>();
      if (jo.contains("color")) o.color = jo["color"].get<std::array<double, 3>>();
      o.texture_seed = jo.value("texture_seed", o.texture_seed);
      o.start = point_from(jo.at("start"));
      if (jo.contains("velocity")) o.velocity = point_from(jo["velocity"]);
      if (jo.contains("amplitude")) o.amplitude = point_from(jo["amplitude"]);
      o.period = jo.value("period", o.period);
      o.phase = jo.value("phase", o.phase);
      o.enter = jo.value("enter", o.enter);
      o.exit = jo.value("exit", o.exit);
      o.depth = jo.value("depth", o.depth);
      s.objects.push_back(o);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("scene: invalid description: ") + e.what());
  }
  try {
    s.validate();
  } catch (const ContractError& e) {
    throw DataError(e.what());
  }
  return s;
}

}  // namespace vmos
