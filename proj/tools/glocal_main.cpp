#include <CLI11.hpp>

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "glocal/backbone.hpp"
#include "glocal/checkpoint.hpp"
#include "glocal/data_io.hpp"
#include "glocal/engine.hpp"
#include "glocal/error.hpp"

namespace fs = std::filesystem;
using namespace glocal;

namespace {

int fail(std::string_view kind, const std::string& message) {
  nlohmann::json err = {{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << err.dump() << std::endl;
  return 1;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

RunConfig config_for(const fs::path& path, const Towers& towers) {
  return load_config(path, towers.limits());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"glocal: zero-shot anomaly detection with global and local prompts"};
  app.require_subcommand(1);
  std::string backbone = "toy";
  app.add_option("--backbone", backbone, "toy or archive:PATH")->capture_default_str();

  std::string config_path, data_root, layout = "mvtec", out_dir, ckpt_path, report_dir,
                                      image_path, history_dir;

  auto* train_cmd = app.add_subcommand("train", "Learn the prompt bank");
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--data", data_root)->required();
  train_cmd->add_option("--layout", layout)->check(CLI::IsMember({"mvtec", "flat-jsonl"}));
  train_cmd->add_option("--out", out_dir)->required();

  auto* eval_cmd = app.add_subcommand("eval", "Score a dataset and compute metrics");
  eval_cmd->add_option("--config", config_path)->required();
  eval_cmd->add_option("--data", data_root)->required();
  eval_cmd->add_option("--layout", layout)->check(CLI::IsMember({"mvtec", "flat-jsonl"}));
  eval_cmd->add_option("--ckpt", ckpt_path)->required();
  eval_cmd->add_option("--report", report_dir)->required();

  auto* infer_cmd = app.add_subcommand("infer", "Score one image and write its heatmap");
  infer_cmd->add_option("--config", config_path)->required();
  infer_cmd->add_option("--ckpt", ckpt_path)->required();
  infer_cmd->add_option("--image", image_path)->required();
  infer_cmd->add_option("--out", out_dir)->required();

  auto* dump_cmd = app.add_subcommand("dump-embeddings", "Write the four prompt embeddings");
  dump_cmd->add_option("--ckpt", ckpt_path)->required();
  dump_cmd->add_option("--out", out_dir, "output JSON file")->required();
  dump_cmd->add_option("--history", history_dir, "training output or history directory");

  auto* vis_cmd = app.add_subcommand("visualize", "Render heatmaps of an eval report");
  vis_cmd->add_option("--report", report_dir)->required();
  vis_cmd->add_option("--out", out_dir)->required();

  int n_normal = 64, n_anomalous = 64, resolution = 32;
  std::uint64_t seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic blobs dataset (mvtec layout)");
  synth_cmd->add_option("--out", out_dir)->required();
  synth_cmd->add_option("--normal", n_normal)->capture_default_str();
  synth_cmd->add_option("--anomalous", n_anomalous)->capture_default_str();
  synth_cmd->add_option("--resolution", resolution)->capture_default_str();
  synth_cmd->add_option("--seed", seed)->capture_default_str();

  auto* config_cmd = app.add_subcommand("config", "Print a default config for the backbone");
  config_cmd->add_option("--out", out_dir, "write to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what());
  }

  try {
    if (*synth_cmd) {
      write_mvtec(synth_blobs(n_normal, n_anomalous, resolution, seed), out_dir);
      std::cout << "wrote " << n_normal + n_anomalous << " images to " << out_dir << "\n";
      return 0;
    }
    if (*vis_cmd) {
      const int n = visualize_report(report_dir, out_dir);
      std::cout << "rendered " << n << " samples to " << out_dir << "\n";
      return 0;
    }

    const Towers towers = load_backbone(backbone);

    if (*config_cmd) {
      const RunConfig cfg = towers.name == "toy" ? toy_run_config() : RunConfig{};
      const std::string text = to_json(cfg).dump(2) + "\n";
      if (out_dir.empty()) {
        std::cout << text;
      } else {
        write_file(out_dir, text);
      }
      return 0;
    }

    if (*train_cmd) {
      const RunConfig cfg = config_for(config_path, towers);
      const DatasetIndex index = index_dataset(data_root, parse_layout(layout));
      const std::uint64_t text_sum = towers.text->checksum();
      const std::uint64_t vision_sum = towers.vision->checksum();
      TrainOptions options;
      options.out_dir = fs::path(out_dir);
      options.on_epoch = [](int epoch, double mean_total) {
        std::printf("epoch %2d  mean total loss %.6f\n", epoch, mean_total);
        std::fflush(stdout);
      };
      const TrainResult result = train(cfg, index, towers, options);
      nlohmann::json summary = {
          {"checkpoint", result.checkpoint->string()},
          {"steps", result.state.step},
          {"text_checksum_before", text_sum},
          {"text_checksum_after", towers.text->checksum()},
          {"vision_checksum_before", vision_sum},
          {"vision_checksum_after", towers.vision->checksum()}};
      write_file(fs::path(out_dir) / "train_summary.json", summary.dump(2));
      std::cout << "checkpoint " << result.checkpoint->string() << "\n";
      return 0;
    }

    if (*eval_cmd) {
      const RunConfig cfg = config_for(config_path, towers);
      const PromptBank bank = load_checkpoint(ckpt_path, cfg);
      const DatasetIndex index = index_dataset(data_root, parse_layout(layout));
      const Evaluation eval = evaluate(cfg, index, towers, bank);
      write_evaluation(eval, report_dir);
      std::cout << to_table(eval.report);
      return 0;
    }

    if (*infer_cmd) {
      const RunConfig cfg = config_for(config_path, towers);
      const PromptBank bank = load_checkpoint(ckpt_path, cfg);
      const InferResult r = infer(cfg, towers, bank, fs::path(image_path), out_dir);
      nlohmann::json line = {{"image", image_path},
                             {"score", r.map.image_score},
                             {"global_anomaly_probability", r.global_anomaly_probability},
                             {"map_max", r.map.map.maxCoeff()},
                             {"heatmap", r.heatmap_path.string()},
                             {"composite", r.composite_path.string()}};
      std::cout << line.dump() << "\n";
      return 0;
    }

    if (*dump_cmd) {
      const LoadedCheckpoint ckpt = load_checkpoint(fs::path(ckpt_path));
      validate(ckpt.config, towers.limits());
      std::optional<fs::path> history;
      if (!history_dir.empty()) history = history_dir;
      dump_embeddings(ckpt.config, towers, ckpt.bank, out_dir, history);
      return 0;
    }
  } catch (const Error& e) {
    return fail(to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
