#include <benchmark/benchmark.h>

#include "vmos/appearance.hpp"
#include "vmos/features.hpp"
#include "vmos/pipeline.hpp"
#include "vmos/random.hpp"
#include "vmos/synthetic.hpp"

namespace {

vmos::Tensor3 noise(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  vmos::Rng rng(seed);
  vmos::Tensor3 t(c, h, w);
  for (double& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const vmos::Tensor3 x = noise(c, 32, 32, 1);
  vmos::ConvKernel k = vmos::ConvKernel::zeros(c, c, 3, 3);
  vmos::Rng rng(2);
  for (double& v : k.weights) v = rng.uniform(-0.1, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(vmos::conv2d(x, k));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * 32 * 32));
}
BENCHMARK(BM_Conv3x3)->Arg(8)->Arg(32);

void BM_TaskFeatures(benchmark::State& state) {
  const vmos::Video v = vmos::render_scene(vmos::preset_scene("three", 0));
  const vmos::FeatureConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(vmos::extract_task_features(v.frames[0], cfg));
}
BENCHMARK(BM_TaskFeatures)->Unit(benchmark::kMillisecond);

void BM_AppearanceFit(benchmark::State& state) {
  vmos::AppearanceConfig cfg;
  const vmos::Tensor3 x = noise(32, 32, 32, 3);
  const vmos::Tensor3 y = noise(1, 32, 32, 4);
  const std::vector<vmos::TrainSample> bank{vmos::make_sample(x, y, 1.0)};
  const auto model = vmos::AppearanceModel::seeded(32, cfg, 5);
  vmos::FitOptions opt;
  opt.iters_outer = 1;
  for (auto _ : state) benchmark::DoNotOptimize(vmos::gauss_newton_fit(model, bank, opt));
}
BENCHMARK(BM_AppearanceFit)->Unit(benchmark::kMillisecond);

void BM_PipelineStep(benchmark::State& state) {
  const vmos::PipelineConfig cfg;
  const vmos::ModelBundle model = vmos::initial_model(cfg);
  vmos::SceneSpec spec = vmos::preset_scene("three", 0);
  spec.frames = 8;
  const vmos::Video v = vmos::render_scene(spec);
  for (auto _ : state) {
    vmos::Segmenter seg(cfg, model);
    for (const auto& f : v.frames) benchmark::DoNotOptimize(seg.step(f));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(v.frames.size()));
}
BENCHMARK(BM_PipelineStep)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
