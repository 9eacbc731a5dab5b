#pragma once

#include <Eigen/Dense>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "glocal/backbone.hpp"
#include "glocal/data_io.hpp"
#include "glocal/metrics.hpp"
#include "glocal/objectives.hpp"
#include "glocal/prompt_bank.hpp"
#include "glocal/runtime_config.hpp"
#include "glocal/scoring.hpp"

namespace glocal {

// Frozen-tower outputs for one training sample. The towers never change, so
// these are computed once per run.
struct TrainingExample {
  VisualFeatures features;
  Eigen::MatrixXd mask;  // image resolution, {0, 1}
  int label = 0;
};

std::vector<TrainingExample> prepare_examples(const RunConfig& cfg,
                                              const DatasetIndex& index,
                                              const Towers& towers);

// Eqs. of the training objective on one batch, differentiable w.r.t. `vars`.
// `report` (optional) receives the component values.
ad::Var batch_loss(const RunConfig& cfg, const Towers& towers, const BankVars& vars,
                   const PromptBank& layout,
                   const std::vector<const TrainingExample*>& batch,
                   LossReport* report = nullptr);

struct AdamMoments {
  Eigen::MatrixXd first;
  Eigen::MatrixXd second;
};

struct TrainState {
  PromptBank bank;
  int step = 0;
  int epoch = 0;
  // Same order as BankVars: four blocks, then deep layers.
  std::vector<AdamMoments> moments;
  std::vector<LossReport> history;          // one per step
  std::vector<double> epoch_mean_total;     // one per finished epoch
};

TrainState initial_state(const RunConfig& cfg, const Towers& towers);

// One Adam update from the gradients of `batch`. Returns the batch report.
LossReport train_step(const RunConfig& cfg, const Towers& towers, TrainState& state,
                      const std::vector<const TrainingExample*>& batch);

struct TrainOptions {
  // When set: checkpoint.npz, history.json and history/epoch_XX.npz go here.
  std::optional<std::filesystem::path> out_dir;
  std::optional<PromptBank> initial_bank;
  std::function<void(int epoch, double mean_total)> on_epoch;
};

struct TrainResult {
  TrainState state;
  std::optional<std::filesystem::path> checkpoint;
};

// Adam over the prompt bank only; batches come from a per-epoch shuffle
// seeded by cfg.seed. A non-finite loss aborts with the step in the message
// (and in history.json when an output directory is set).
TrainResult train(const RunConfig& cfg, const DatasetIndex& index, const Towers& towers,
                  const TrainOptions& options = {});

nlohmann::json history_json(const TrainState& state);

struct EvaluatedSample {
  ScoredSample scored;
  double global_anomaly_probability = 0.0;
  Image image;  // resized RGB in [0, 1], for visualization
};

struct Evaluation {
  EvalReport report;
  std::vector<EvaluatedSample> samples;  // index order
};

Evaluation evaluate(const RunConfig& cfg, const DatasetIndex& index, const Towers& towers,
                    const PromptBank& bank);

// report.json, report.txt, maps.npz (image/map/mask per sample) and
// manifest.json (class, label, score per sample).
void write_evaluation(const Evaluation& eval, const std::filesystem::path& dir);

// Heatmap and composite PNGs for every sample of a written evaluation.
// Returns the number of samples rendered.
int visualize_report(const std::filesystem::path& report_dir,
                     const std::filesystem::path& out_dir);

struct InferResult {
  AnomalyMap map;
  double global_anomaly_probability = 0.0;
  std::filesystem::path heatmap_path;
  std::filesystem::path composite_path;
};

InferResult infer(const RunConfig& cfg, const Towers& towers, const PromptBank& bank,
                  const Image& rgb01, const std::filesystem::path& out_dir,
                  const std::string& stem = "image");
InferResult infer(const RunConfig& cfg, const Towers& towers, const PromptBank& bank,
                  const std::filesystem::path& image_path,
                  const std::filesystem::path& out_dir);

// JSON array of {"label", "source", "vector"} unit vectors: the four prompt
// embeddings of the bank, then those of every history/epoch_XX.npz snapshot
// under `history_dir` when given.
nlohmann::json embeddings_json(const RunConfig& cfg, const Towers& towers,
                               const PromptBank& bank,
                               const std::optional<std::filesystem::path>& history_dir = {});
void dump_embeddings(const RunConfig& cfg, const Towers& towers, const PromptBank& bank,
                     const std::filesystem::path& path,
                     const std::optional<std::filesystem::path>& history_dir = {});

}  // namespace glocal
