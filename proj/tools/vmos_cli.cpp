// vmos: generate synthetic videos, train the proposal heads, segment,
// evaluate and time the pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vmos/config.hpp"
#include "vmos/errors.hpp"
#include "vmos/eval.hpp"
#include "vmos/io.hpp"
#include "vmos/pipeline.hpp"
#include "vmos/random.hpp"
#include "vmos/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

constexpr double kFrameBudgetMs = 250.0;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> frames;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config_path, "pipeline configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed");
  auto* out = cmd->add_option("--out", c.out, "output path");
  if (out_required) out->required();
  cmd->add_option("--frames", c.frames, "limit the number of frames")->check(CLI::PositiveNumber);
}

vmos::PipelineConfig load(const Common& c) {
  vmos::PipelineConfig cfg = c.config_path.empty() ? vmos::PipelineConfig{} : vmos::load_config(c.config_path);
  return cfg;
}

vmos::SceneSpec scene_for(const std::string& scene, std::uint64_t seed) {
  if (fs::exists(scene)) return vmos::scene_from_json(vmos::read_text(scene));
  return vmos::preset_scene(scene, seed);
}

int cmd_generate(const Common& c, const std::string& scene) {
  vmos::SceneSpec spec = scene_for(scene, c.seed.value_or(0));
  if (c.seed) spec.seed = *c.seed;
  if (c.frames) spec.frames = *c.frames;
  const vmos::Video v = vmos::render_scene(spec);
  vmos::write_video(c.out, v.frames, v.masks);
  vmos::write_text(fs::path(c.out) / "scene.json", vmos::scene_to_json(spec));
  std::printf("wrote %zu frames (%zux%zu, %zu objects) to %s\n", spec.frames, spec.height, spec.width,
              spec.objects.size(), c.out.c_str());
  return 0;
}

int cmd_train(const Common& c, const std::vector<std::string>& data, std::size_t videos) {
  vmos::PipelineConfig cfg = load(c);
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.training.seed = *c.seed;
  }
  vmos::ModelBundle model = vmos::initial_model(cfg);
  std::vector<vmos::HeadExample> examples;
  auto add_video = [&](const std::vector<vmos::Frame>& frames, const vmos::TrackSet& masks) {
    auto ex = vmos::make_training_examples(frames, masks, cfg, model);
    for (auto& e : ex) examples.push_back(std::move(e));
  };
  if (!data.empty()) {
    for (const auto& dir : data) {
      vmos::VideoData v = vmos::read_video(dir, c.frames);
      if (v.masks.size() != v.frames.size()) throw vmos::DataError(dir + ": training data needs a mask per frame");
      add_video(v.frames, v.masks);
    }
  } else {
    examples = vmos::synthetic_training_set(cfg, model, videos, c.frames.value_or(6));
  }
  std::printf("training on %zu frames\n", examples.size());
  const auto result = vmos::train_heads(examples, model.heads, cfg.training, [](std::size_t epoch, double loss) {
    std::printf("epoch %3zu  loss %.6f\n", epoch + 1, loss);
    std::fflush(stdout);
  });
  model.heads = result.params;
  vmos::save_model(c.out, model);
  std::printf("wrote %s\n", c.out.c_str());
  return 0;
}

int cmd_segment(const Common& c, const std::string& data, const std::string& params) {
  vmos::PipelineConfig cfg = load(c);
  if (c.seed) cfg.seed = *c.seed;
  const vmos::ModelBundle model = vmos::load_model(params);
  const auto r = vmos::run_pipeline_on_disk(data, c.out, cfg, model, c.frames);
  std::size_t spawns = 0;
  for (const auto& e : r.record.events) spawns += e.kind == vmos::EventKind::kSpawn ? 1 : 0;
  std::printf("segmented %zu frames, %zu tracklets spawned; results in %s\n", r.masks.size(), spawns, c.out.c_str());
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& pred, const std::string& gt) {
  const vmos::VideoData p = vmos::read_video(pred, c.frames);
  const vmos::VideoData g = vmos::read_video(gt, c.frames);
  if (p.masks.size() != g.masks.size())
    throw vmos::DataError("prediction has " + std::to_string(p.masks.size()) + " frames, ground truth " +
                          std::to_string(g.masks.size()));
  const std::string report = vmos::report_to_json(vmos::evaluate_tracks(p.masks, g.masks));
  if (!c.out.empty()) vmos::write_text(c.out, report);
  std::cout << report;
  return 0;
}

int cmd_bench(const Common& c, const std::string& scene, const std::string& params) {
  vmos::PipelineConfig cfg = load(c);
  const vmos::ModelBundle model = params.empty() ? vmos::initial_model(cfg) : vmos::load_model(params);
  vmos::SceneSpec spec = scene_for(scene, c.seed.value_or(0));
  if (c.frames) spec.frames = *c.frames;
  const vmos::Video v = vmos::render_scene(spec);
  const auto r = vmos::run_pipeline(v.frames, cfg, model);
  const std::string report = vmos::timing_to_json(vmos::summarize_timing(r.record), kFrameBudgetMs);
  if (!c.out.empty()) vmos::write_text(c.out, report);
  std::cout << report;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vmos: unsupervised video multi-object segmentation on synthetic scenes"};
  app.require_subcommand(1);

  Common gen_c, train_c, seg_c, eval_c, bench_c;
  std::string gen_scene = "three";
  auto* gen = app.add_subcommand("generate", "render a synthetic video with ground truth");
  add_common(gen, gen_c, true);
  gen->add_option("--scene", gen_scene, "preset (three, occlusion, single, random) or scene JSON file");

  std::vector<std::string> train_data;
  std::size_t train_videos = 16;
  auto* train = app.add_subcommand("train-heads", "train the salient and instance heads");
  add_common(train, train_c, true);
  train->add_option("--data", train_data, "dataset directories (default: random synthetic videos)");
  train->add_option("--videos", train_videos, "number of random videos when no --data is given");

  std::string seg_data, seg_params;
  auto* seg = app.add_subcommand("segment", "run the pipeline on a dataset");
  add_common(seg, seg_c, true);
  seg->add_option("--data", seg_data, "dataset directory")->required();
  seg->add_option("--params", seg_params, "model file from train-heads")->required()->check(CLI::ExistingFile);

  std::string eval_pred, eval_gt;
  auto* ev = app.add_subcommand("evaluate", "score predicted tracks against ground truth");
  add_common(ev, eval_c, false);
  ev->add_option("--pred", eval_pred, "prediction directory")->required();
  ev->add_option("--gt", eval_gt, "ground-truth directory")->required();

  std::string bench_scene = "three", bench_params;
  auto* bench = app.add_subcommand("bench", "per-frame timing of the proposal and tracking stages");
  add_common(bench, bench_c, false);
  bench->add_option("--scene", bench_scene, "preset or scene JSON file");
  bench->add_option("--params", bench_params, "model file (default: untrained weights)")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_generate(gen_c, gen_scene);
    if (*train) return cmd_train(train_c, train_data, train_videos);
    if (*seg) return cmd_segment(seg_c, seg_data, seg_params);
    if (*ev) return cmd_evaluate(eval_c, eval_pred, eval_gt);
    if (*bench) return cmd_bench(bench_c, bench_scene, bench_params);
  } catch (const vmos::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const vmos::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
