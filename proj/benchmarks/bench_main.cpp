#include <benchmark/benchmark.h>

#include <random>

#include "glocal/backbone.hpp"
#include "glocal/data_io.hpp"
#include "glocal/engine.hpp"
#include "glocal/metrics.hpp"
#include "glocal/scoring.hpp"
#include "glocal/text_tower.hpp"
#include "glocal/vision_tower.hpp"

using namespace glocal;

namespace {

const Towers& toy() {
  static const Towers towers = make_toy_backbone();
  return towers;
}

void BM_Auroc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = u(rng) < 0.3 ? 1 : 0;
    scores[i] = u(rng) + 0.3 * labels[i];
  }
  labels[0] = 1;
  labels[1] = 0;
  for (auto _ : state) benchmark::DoNotOptimize(auroc(scores, labels));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auroc)->Range(1 << 10, 1 << 20);

void BM_Aupro(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Eigen::MatrixXd> maps, masks;
  for (int i = 0; i < 8; ++i) {
    Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(side, side);
    mask.block(side / 4, side / 4, side / 4, side / 3).setOnes();
    Eigen::MatrixXd map(side, side);
    for (Eigen::Index k = 0; k < map.size(); ++k) map(k) = u(rng) + 0.5 * mask(k);
    maps.push_back(map);
    masks.push_back(mask);
  }
  for (auto _ : state) benchmark::DoNotOptimize(aupro(maps, masks, 0.3));
  state.SetItemsProcessed(state.iterations() * 8 * side * side);
}
BENCHMARK(BM_Aupro)->Arg(64)->Arg(256);

void BM_GaussianFilter(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const Eigen::MatrixXd m = Eigen::MatrixXd::Random(side, side);
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_filter(m, 4.0));
}
BENCHMARK(BM_GaussianFilter)->Arg(64)->Arg(336);

void BM_TextEncodeAll(benchmark::State& state) {
  const RunConfig cfg = toy_run_config();
  const PromptBank bank = init_bank(cfg, *toy().text);
  for (auto _ : state) benchmark::DoNotOptimize(encode_all(*toy().text, bank, cfg));
}
BENCHMARK(BM_TextEncodeAll)->Unit(benchmark::kMillisecond);

void BM_VisionEncode(benchmark::State& state) {
  const RunConfig cfg = toy_run_config();
  const DatasetIndex index = synth_blobs(0, 1, cfg.image_resolution.first, 3);
  const Image image = load_sample(index.entries[0], cfg.image_resolution).image;
  for (auto _ : state) benchmark::DoNotOptimize(encode_image(*toy().vision, image, cfg));
}
BENCHMARK(BM_VisionEncode)->Unit(benchmark::kMillisecond);

void BM_ScoreImage(benchmark::State& state) {
  const RunConfig cfg = toy_run_config();
  const PromptBank bank = init_bank(cfg, *toy().text);
  const GlocalTextEmbeddings text = encode_all(*toy().text, bank, cfg);
  const DatasetIndex index = synth_blobs(0, 1, cfg.image_resolution.first, 3);
  const Image image = load_sample(index.entries[0], cfg.image_resolution).image;
  const VisualFeatures features = encode_image(*toy().vision, image, cfg);
  for (auto _ : state) {
    benchmark::DoNotOptimize(score_image(text, features, cfg, toy().temperature));
  }
}
BENCHMARK(BM_ScoreImage)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  RunConfig cfg = toy_run_config();
  const DatasetIndex index = synth_blobs(4, 4, cfg.image_resolution.first, 4);
  const auto examples = prepare_examples(cfg, index, toy());
  std::vector<const TrainingExample*> batch;
  for (const auto& e : examples) batch.push_back(&e);
  TrainState train_state = initial_state(cfg, toy());
  for (auto _ : state) benchmark::DoNotOptimize(train_step(cfg, toy(), train_state, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
