#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vmos/eval.hpp"
#include "vmos/features.hpp"
#include "vmos/mask.hpp"

namespace vmos {

enum class ShapeKind { kEllipse, kRectangle };

/// One moving object. Its center at frame t is
///   start + velocity * t + amplitude * sin(2 pi t / period + phase).
struct ObjectSpec {
  std::uint32_t id = 1;
  ShapeKind shape = ShapeKind::kEllipse;
  double radius_y = 10.0;  // half extent
  double radius_x = 10.0;
  std::array<double, 3> color{0.8, 0.6, 0.3};
  std::uint64_t texture_seed = 0;
  Point2 start;
  Point2 velocity;
  Point2 amplitude;
  double period = 30.0;
  double phase = 0.0;
  std::size_t enter = 0;  // first visible frame
  std::size_t exit = static_cast<std::size_t>(-1);  // one past the last visible frame
  int depth = 0;          // larger is nearer

  Point2 center_at(std::size_t t) const;
  bool covers(std::size_t t, double y, double x) const;
};

struct SceneSpec {
  std::size_t frames = 60;
  std::size_t height = 128;
  std::size_t width = 128;
  double background = 0.12;
  double noise = 0.05;  // uniform pixel noise amplitude
  std::uint64_t seed = 0;
  std::vector<ObjectSpec> objects;

  void validate() const;
};

struct Video {
  std::vector<Frame> frames;
  TrackSet masks;  // ground truth, nearer objects own contested pixels
};

Video render_scene(const SceneSpec& spec);

/// Named scenes: "three" (three objects in separate lanes), "occlusion"
/// (a small object fully hidden behind a nearer one for five frames),
/// "single" (one moving object), "random" (1-4 random objects).
SceneSpec preset_scene(std::string_view name, std::uint64_t seed);
SceneSpec random_scene(std::uint64_t seed, std::size_t frames = 8, std::size_t height = 128,
                       std::size_t width = 128);

std::string scene_to_json(const SceneSpec& spec);
SceneSpec scene_from_json(std::string_view text);

}  // namespace vmos
