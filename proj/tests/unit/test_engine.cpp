#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "glocal/backbone.hpp"
#include "glocal/checkpoint.hpp"
#include "glocal/engine.hpp"
#include "glocal/error.hpp"
#include "gradcheck.hpp"
#include "temp_dir.hpp"

using namespace glocal;
namespace fs = std::filesystem;

namespace {

const Towers& toy() {
  static const Towers towers = make_toy_backbone();
  return towers;
}

RunConfig quick_config() {
  RunConfig cfg = toy_run_config();
  cfg.epochs = 2;
  cfg.batch_size = 4;
  return cfg;
}

const DatasetIndex& small_set() {
  static const DatasetIndex index = synth_blobs(6, 6, 32, 0);
  return index;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<const TrainingExample*> pointers(const std::vector<TrainingExample>& ex) {
  std::vector<const TrainingExample*> out;
  for (const auto& e : ex) out.push_back(&e);
  return out;
}

}  // namespace

TEST_CASE("zero learning rate leaves the initialization untouched") {
  RunConfig cfg = quick_config();
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  TempDir dir;
  TrainOptions options;
  options.out_dir = dir.path();
  const TrainResult r = train(cfg, small_set(), toy(), options);
  CHECK(r.state.bank == init_bank(cfg, *toy().text));
  CHECK(load_checkpoint(*r.checkpoint, cfg) == init_bank(cfg, *toy().text));
  CHECK(fs::exists(dir.path() / "history.json"));
  CHECK(fs::exists(dir.path() / "history" / "epoch_01.npz"));
}

TEST_CASE("training is deterministic and leaves the towers frozen") {
  const RunConfig cfg = quick_config();
  const auto text_sum = toy().text->checksum(), vision_sum = toy().vision->checksum();
  const TrainResult a = train(cfg, small_set(), toy());
  const TrainResult b = train(cfg, small_set(), toy());
  CHECK(a.state.bank == b.state.bank);
  CHECK(a.state.step == 6);  // 12 samples, batch 4, 2 epochs
  CHECK(a.state.epoch_mean_total.size() == 2);
  CHECK(toy().text->checksum() == text_sum);
  CHECK(toy().vision->checksum() == vision_sum);
  CHECK_FALSE(a.state.bank == init_bank(cfg, *toy().text));

  for (const auto& rep : a.state.history) {
    double local = 0.0;
    for (double l : rep.per_layer_local) local += l;
    CHECK(std::abs(rep.total - (rep.global + local + cfg.lambda_gcl * rep.gcl)) < 1e-9);
    CHECK(rep.per_layer_local.size() == cfg.patch_tap_layers.size());
  }

  RunConfig reseeded = cfg;
  reseeded.seed = 1;
  CHECK_FALSE(train(reseeded, small_set(), toy()).state.bank == a.state.bank);
}

TEST_CASE("lambda zero removes the contrastive term exactly") {
  RunConfig cfg = quick_config();
  cfg.lambda_gcl = 0.0;
  const TrainResult r = train(cfg, small_set(), toy());
  for (const auto& rep : r.state.history) {
    CHECK(rep.gcl > 0.0);
    CHECK(rep.total == rep.global + rep.local);
  }
}

TEST_CASE("one small Adam step descends") {
  const RunConfig base = quick_config();
  const auto examples = prepare_examples(base, small_set(), toy());
  const auto batch = pointers(examples);
  for (double lr : {1e-6, 1e-5}) {
    RunConfig cfg = base;
    cfg.learning_rate = lr;
    TrainState state = initial_state(cfg, toy());
    const LossReport before = train_step(cfg, toy(), state, batch);
    LossReport after;
    batch_loss(cfg, toy(), BankVars::constants(state.bank), state.bank, batch, &after);
    CHECK(after.total < before.total);
  }
}

TEST_CASE("end-to-end gradient matches finite differences") {
  const RunConfig cfg = quick_config();
  const auto examples = prepare_examples(cfg, small_set(), toy());
  const auto all = pointers(examples);
  const std::vector<const TrainingExample*> batch{all[0], all[7], all[8], all[11]};
  std::mt19937_64 rng(3);
  PromptBank bank = init_bank(cfg, *toy().text);

  const BankVars vars = BankVars::parameters(bank);
  ad::backward(batch_loss(cfg, toy(), vars, bank, batch));

  auto loss_at = [&](const PromptBank& b) {
    return batch_loss(cfg, toy(), BankVars::constants(b), b, batch).scalar();
  };
  const double h = 1e-5;
  for (int trial = 0; trial < 12; ++trial) {
    const int slot = trial % (4 + int(bank.deep_tokens.size()));
    Eigen::MatrixXd& target =
        slot < 4 ? bank.block(static_cast<BankBlock>(slot)) : bank.deep_tokens[slot - 4];
    const ad::Var& var = slot < 4 ? vars.blocks[slot] : vars.deep_tokens[slot - 4];
    std::uniform_int_distribution<Eigen::Index> pick(0, target.size() - 1);
    const Eigen::Index i = pick(rng);
    const double orig = target(i);
    target(i) = orig + h;
    const double up = loss_at(bank);
    target(i) = orig - h;
    const double down = loss_at(bank);
    target(i) = orig;
    const double numeric = (up - down) / (2 * h);
    const double analytic = var.grad()(i);
    const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    CHECK(std::abs(numeric - analytic) / scale < 1e-3);
  }
}

TEST_CASE("training errors") {
  const RunConfig cfg = quick_config();
  CHECK_THROWS_AS(train(cfg, DatasetIndex{}, toy()), Error);

  DatasetIndex no_mask = synth_blobs(2, 2, 32, 0);
  no_mask.entries.back().mask.reset();
  try {
    train(cfg, no_mask, toy());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidArgument);
  }

  RunConfig too_deep = cfg;
  too_deep.deep_prompt_depth = 3;
  CHECK_THROWS_AS(train(too_deep, small_set(), toy()), Error);

  SUBCASE("non-finite loss records the step") {
    TempDir dir;
    TrainOptions options;
    options.out_dir = dir.path();
    PromptBank bad = init_bank(cfg, *toy().text);
    bad.anomaly_local(0, 0) = std::numeric_limits<double>::quiet_NaN();
    options.initial_bank = bad;
    try {
      train(cfg, small_set(), toy(), options);
      FAIL("expected a numerical error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kNumerical);
      CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
    const auto history = nlohmann::json::parse(slurp(dir.path() / "history.json"));
    CHECK(history["aborted_at_step"] == 1);
  }
}

TEST_CASE("evaluation is order-invariant") {
  const RunConfig cfg = quick_config();
  const PromptBank bank = train(cfg, small_set(), toy()).state.bank;
  const DatasetIndex test = synth_blobs(5, 5, 32, 1);
  DatasetIndex shuffled = test;
  std::mt19937_64 rng(4);
  std::shuffle(shuffled.entries.begin(), shuffled.entries.end(), rng);
  const Evaluation a = evaluate(cfg, test, toy(), bank);
  const Evaluation b = evaluate(cfg, shuffled, toy(), bank);
  CHECK(to_json(a.report) == to_json(b.report));
  CHECK(a.report.samples == 10);
  REQUIRE(a.report.pixel_auroc.has_value());
  CHECK(*a.report.pixel_auroc >= 0.0);
  CHECK(*a.report.pixel_auroc <= 1.0);
  for (const auto& s : a.samples) {
    CHECK(s.scored.map.rows() == 32);
    CHECK(s.scored.map.minCoeff() >= 0.0);
    CHECK(s.scored.score == s.global_anomaly_probability);
  }
}

TEST_CASE("evaluation artifacts and visualization") {
  const RunConfig cfg = quick_config();
  const PromptBank bank = init_bank(cfg, *toy().text);
  const Evaluation eval = evaluate(cfg, synth_blobs(2, 2, 32, 1), toy(), bank);
  TempDir dir;
  write_evaluation(eval, dir.path() / "report");
  for (const char* name : {"report.json", "report.txt", "maps.npz", "manifest.json"}) {
    CHECK(fs::exists(dir.path() / "report" / name));
  }
  CHECK(visualize_report(dir.path() / "report", dir.path() / "vis") == 4);
  const cv::Mat heat = cv::imread((dir.path() / "vis" / "blobs_0000_heatmap.png").string());
  CHECK(heat.rows == 32);
  CHECK(heat.cols == 32);
  const cv::Mat composite = cv::imread((dir.path() / "vis" / "blobs_0003_composite.png").string());
  CHECK(composite.cols == 3 * 32);
}

TEST_CASE("inference is deterministic and writes resolution-sized PNGs") {
  const RunConfig cfg = quick_config();
  const PromptBank bank = init_bank(cfg, *toy().text);
  const auto& img = *std::get<std::shared_ptr<const Image>>(small_set().entries[8].image);
  TempDir dir;
  const InferResult a = infer(cfg, toy(), bank, img, dir.path(), "x");
  const InferResult b = infer(cfg, toy(), bank, img, dir.path(), "y");
  CHECK(a.map.map == b.map.map);
  CHECK(a.map.image_score == b.map.image_score);
  const cv::Mat png = cv::imread(a.heatmap_path.string());
  CHECK(png.rows == cfg.image_resolution.first);
  CHECK(png.cols == cfg.image_resolution.second);

  write_rgb(dir.path() / "in.png", img);
  const InferResult c = infer(cfg, toy(), bank, dir.path() / "in.png", dir.path() / "out");
  CHECK(fs::exists(c.heatmap_path));
  CHECK(fs::exists(c.composite_path));
  CHECK_THROWS_AS(infer(cfg, toy(), bank, dir.path() / "missing.png", dir.path()), Error);
}

TEST_CASE("embedding dumps") {
  const RunConfig cfg = quick_config();
  TempDir dir;
  TrainOptions options;
  options.out_dir = dir.path() / "run";
  const TrainResult r = train(cfg, small_set(), toy(), options);

  const PromptBank fresh = init_bank(cfg, *toy().text);
  const auto json = embeddings_json(cfg, toy(), fresh);
  REQUIRE(json.size() == 4);
  std::vector<std::string> labels;
  for (const auto& item : json) {
    labels.push_back(item["label"]);
    const auto v = item["vector"].get<std::vector<double>>();
    CHECK(v.size() == static_cast<std::size_t>(toy().text->embed_dim()));
    double norm = 0.0;
    for (double x : v) norm += x * x;
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
  }
  CHECK(labels == std::vector<std::string>{"global_normal", "global_anomaly", "local_normal",
                                           "local_anomaly"});

  dump_embeddings(cfg, toy(), r.state.bank, dir.path() / "a.json", dir.path() / "run");
  dump_embeddings(cfg, toy(), r.state.bank, dir.path() / "b.json", dir.path() / "run");
  CHECK(slurp(dir.path() / "a.json") == slurp(dir.path() / "b.json"));
  const auto with_history = nlohmann::json::parse(slurp(dir.path() / "a.json"));
  CHECK(with_history.size() == 4 * (1 + cfg.epochs));
  CHECK(with_history.back()["source"] == "epoch_02");
}
