#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "vmos/config.hpp"
#include "vmos/errors.hpp"
#include "vmos/io.hpp"
#include "vmos/pipeline.hpp"

using namespace vmos;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vmos_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config round trip") {
  PipelineConfig c;
  c.seed = 1234567890123ULL;
  c.association.iou_gate = 0.37;
  c.memory.gamma = 0.123456789012345;
  c.appearance.relu = true;
  c.training.epochs = 3;
  c.proposals.min_area = 17;
  CHECK(config_from_json(config_to_json(c)) == c);
  CHECK(config_from_json("{}") == PipelineConfig{});

  const fs::path dir = scratch("config");
  save_config(c, dir / "c.json");
  CHECK(load_config(dir / "c.json") == c);

  CHECK(config_from_json(R"({"memory": {"capacity": 5}})").memory.capacity == 5);
  CHECK_THROWS_AS(config_from_json(R"({"bogus": 1})"), DataError);
  CHECK_THROWS_AS(config_from_json(R"({"memory": {"capcity": 5}})"), DataError);
  CHECK_THROWS_AS(config_from_json(R"({"memory": {"gamma": "x"}})"), DataError);
  CHECK_THROWS_AS(config_from_json(R"({"memory": {"gamma": 1.5}})"), DataError);
  CHECK_THROWS_AS(config_from_json("{"), DataError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), DataError);
}

TEST_CASE("netpbm round trip") {
  const fs::path dir = scratch("pnm");
  Rng rng(111);
  Frame f(5, 7);
  for (double& v : f.rgb) v = static_cast<double>(rng.below(256)) / 255.0;
  write_ppm(dir / "f.ppm", f);
  CHECK(read_ppm(dir / "f.ppm") == f);

  InstanceMask m(6, 4);
  for (auto& l : m.labels) l = static_cast<std::uint32_t>(rng.below(4));
  write_pgm(dir / "m.pgm", m);
  CHECK(read_pgm(dir / "m.pgm") == m);

  m.at(2, 2) = 300;  // forces 16-bit samples
  write_pgm(dir / "m16.pgm", m);
  CHECK(read_pgm(dir / "m16.pgm") == m);
  m.at(0, 0) = 70000;
  CHECK_THROWS_AS(write_pgm(dir / "bad.pgm", m), ContractError);

  write_text(dir / "junk.ppm", "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(read_ppm(dir / "junk.ppm"), DataError);
  write_text(dir / "short.pgm", "P5\n4 4\n255\nab");
  CHECK_THROWS_AS(read_pgm(dir / "short.pgm"), DataError);
  CHECK_THROWS_AS(read_ppm(dir / "nothing.ppm"), DataError);
}

TEST_CASE("video and manifest round trip") {
  const fs::path dir = scratch("video");
  Rng rng(112);
  std::vector<Frame> frames;
  TrackSet masks;
  std::vector<std::map<std::uint32_t, double>> scores;
  for (int t = 0; t < 3; ++t) {
    Frame f(8, 9);
    for (double& v : f.rgb) v = static_cast<double>(rng.below(256)) / 255.0;
    frames.push_back(f);
    InstanceMask m(8, 9);
    for (auto& l : m.labels) l = static_cast<std::uint32_t>(rng.below(3));
    masks.push_back(m);
    scores.push_back({{1, 0.25 * t}, {2, 0.5}});
  }
  write_video(dir, frames, masks, scores);
  const Manifest man = read_manifest(dir);
  CHECK(man.height == 8);
  CHECK(man.width == 9);
  CHECK(man.frame_files.size() == 3);
  CHECK(man.track_scores == scores);
  const VideoData v = read_video(dir);
  CHECK(v.frames == frames);
  CHECK(v.masks == masks);
  CHECK(read_video(dir, 2).masks.size() == 2);

  fs::remove(dir / man.mask_files[1]);
  CHECK_THROWS_AS(read_video(dir), DataError);
  CHECK_THROWS_AS(read_manifest(scratch("empty")), DataError);
}

TEST_CASE("model round trip") {
  const fs::path dir = scratch("model");
  PipelineConfig c;
  c.seed = 5;
  ModelBundle m = initial_model(c);
  m.heads.salient.conv_out.bias[0] = 0.125;
  save_model(dir / "m.bin", m);
  const ModelBundle r = load_model(dir / "m.bin");
  CHECK(r.heads == m.heads);
  CHECK(r.sgm_salient == m.sgm_salient);
  CHECK(r.sgm_instance == m.sgm_instance);

  write_text(dir / "short.bin", "abc");
  CHECK_THROWS_AS(load_model(dir / "short.bin"), DataError);
  std::string bytes = read_text(dir / "m.bin");
  bytes.resize(bytes.size() - 8);
  write_text(dir / "cut.bin", bytes);
  CHECK_THROWS_AS(load_model(dir / "cut.bin"), DataError);
}
