#include "doctest.h"

#include <cmath>
#include <numbers>

#include "vmos/errors.hpp"
#include "vmos/synthetic.hpp"

using namespace vmos;

namespace {

ObjectSpec square(std::uint32_t id, double cy, double cx, double r, int depth) {
  ObjectSpec o;
  o.id = id;
  o.shape = ShapeKind::kRectangle;
  o.radius_y = o.radius_x = r;
  o.start = {cy, cx};
  o.depth = depth;
  o.texture_seed = id;
  return o;
}

SceneSpec canvas(std::size_t frames) {
  SceneSpec s;
  s.frames = frames;
  s.height = s.width = 48;
  s.seed = 3;
  return s;
}

}  // namespace

TEST_CASE("rendering is deterministic") {
  for (const char* name : {"three", "occlusion", "single", "random"}) {
    SceneSpec s = preset_scene(name, 17);
    s.frames = std::min<std::size_t>(s.frames, 6);
    const Video a = render_scene(s);
    const Video b = render_scene(s);
    CHECK(a.frames == b.frames);
    CHECK(a.masks == b.masks);
    CHECK(a.frames.size() == s.frames);
    for (const auto& f : a.frames)
      for (double v : f.rgb) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(std::round(v * 255.0) == doctest::Approx(v * 255.0).epsilon(1e-12));
      }
  }
  CHECK(preset_scene("random", 1).objects.size() >= 1);
  CHECK_THROWS_AS(preset_scene("nope", 0), ContractError);
}

TEST_CASE("motion model") {
  ObjectSpec o;
  o.start = {10.0, 20.0};
  o.velocity = {0.5, -1.0};
  o.amplitude = {2.0, 3.0};
  o.period = 8.0;
  o.phase = 0.3;
  for (std::size_t t = 0; t < 12; ++t) {
    const double s = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / 8.0 + 0.3);
    CHECK(o.center_at(t).y == doctest::Approx(10.0 + 0.5 * t + 2.0 * s).epsilon(1e-14));
    CHECK(o.center_at(t).x == doctest::Approx(20.0 - 1.0 * t + 3.0 * s).epsilon(1e-14));
  }
}

TEST_CASE("masks follow the shape and the depth order") {
  SceneSpec s = canvas(1);
  // Near object listed first; ordering in the list must not matter.
  s.objects = {square(2, 24, 24, 6, 1), square(1, 20, 20, 8, 0)};
  const Video v = render_scene(s);
  const InstanceMask& m = v.masks[0];
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 48; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      const bool near = std::abs(py - 24) <= 6 && std::abs(px - 24) <= 6;
      const bool far = std::abs(py - 20) <= 8 && std::abs(px - 20) <= 8;
      CHECK(m(y, x) == (near ? 2u : far ? 1u : 0u));
    }
  SceneSpec swapped = s;
  std::swap(swapped.objects[0], swapped.objects[1]);
  CHECK(render_scene(swapped).masks[0] == m);

  SceneSpec e = canvas(1);
  ObjectSpec ell = square(1, 24, 24, 0, 0);
  ell.shape = ShapeKind::kEllipse;
  ell.radius_y = 6;
  ell.radius_x = 10;
  e.objects = {ell};
  const InstanceMask em = render_scene(e).masks[0];
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 48; ++x) {
      const double ny = (y + 0.5 - 24) / 6.0, nx = (x + 0.5 - 24) / 10.0;
      CHECK(em(y, x) == (ny * ny + nx * nx <= 1.0 ? 1u : 0u));
    }
}

TEST_CASE("static object keeps its mask; enter and exit") {
  SceneSpec s = canvas(5);
  ObjectSpec o = square(1, 24, 24, 7, 0);
  s.objects = {o};
  const Video v = render_scene(s);
  for (std::size_t t = 1; t < 5; ++t) CHECK(v.masks[t] == v.masks[0]);

  o.enter = 1;
  o.exit = 3;
  s.objects = {o};
  const Video w = render_scene(s);
  CHECK(w.masks[0].ids().empty());
  CHECK(w.masks[1] == v.masks[1]);
  CHECK(w.masks[2] == v.masks[2]);
  CHECK(w.masks[3].ids().empty());
}

TEST_CASE("scene validation and JSON") {
  SceneSpec s = canvas(2);
  s.objects = {square(1, 10, 10, 3, 0), square(1, 30, 30, 3, 0)};
  CHECK_THROWS_AS(render_scene(s), ContractError);
  s.objects = {square(0, 10, 10, 3, 0)};
  CHECK_THROWS_AS(render_scene(s), ContractError);
  s.objects = {square(1, 10, 10, 3, 0)};
  s.objects[0].color = {1.5, 0, 0};
  CHECK_THROWS_AS(render_scene(s), ContractError);

  const SceneSpec p = preset_scene("occlusion", 4);
  const SceneSpec q = scene_from_json(scene_to_json(p));
  CHECK(render_scene(q).masks == render_scene(p).masks);
  CHECK(render_scene(q).frames == render_scene(p).frames);
  CHECK_THROWS_AS(scene_from_json(R"({"objects": [{"id": 1, "shape": "hexagon"}]})"), DataError);
}
