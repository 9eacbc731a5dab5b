#include "glocal/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "glocal/archive.hpp"
#include "glocal/checkpoint.hpp"
#include "glocal/error.hpp"

namespace glocal {
namespace fs = std::filesystem;
namespace {

Image denormalize(const Image& x, const ChannelStats& stats) {
  Image out = x;
  for (int y = 0; y < x.height; ++y) {
    for (int col = 0; col < x.width; ++col) {
      for (int c = 0; c < 3; ++c) {
        out.at(y, col, c) =
            std::clamp(x.at(y, col, c) * stats.std[c] + stats.mean[c], 0.0, 1.0);
      }
    }
  }
  return out;
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

std::string two_digits(int v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", v);
  return buf;
}

std::string four_digits(std::size_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%04zu", v);
  return buf;
}

std::vector<Eigen::MatrixXd*> trainable(PromptBank& bank) {
  std::vector<Eigen::MatrixXd*> out;
  for (int b = 0; b < 4; ++b) out.push_back(&bank.block(static_cast<BankBlock>(b)));
  for (auto& d : bank.deep_tokens) out.push_back(&d);
  return out;
}

std::vector<ad::Var> trainable(const BankVars& vars) {
  std::vector<ad::Var> out(vars.blocks.begin(), vars.blocks.end());
  out.insert(out.end(), vars.deep_tokens.begin(), vars.deep_tokens.end());
  return out;
}

nlohmann::json report_json(const LossReport& r) {
  return {{"global", r.global},
          {"local", r.local},
          {"gcl", r.gcl},
          {"total", r.total},
          {"per_layer_local", r.per_layer_local}};
}

}  // namespace

std::vector<TrainingExample> prepare_examples(const RunConfig& cfg,
                                              const DatasetIndex& index,
                                              const Towers& towers) {
  std::vector<TrainingExample> out;
  out.reserve(index.entries.size());
  for (const auto& entry : index.entries) {
    if (entry.label == 1 && !entry.mask) {
      throw Error(ErrorKind::kInvalidArgument,
                  "anomalous training sample without a mask (class " +
                      entry.class_name + ")");
    }
    Sample s = load_sample(entry, cfg.image_resolution, towers.vision->stats());
    TrainingExample ex;
    ex.features = encode_image(*towers.vision, s.image, cfg);
    ex.mask = std::move(s.mask);
    ex.label = s.label;
    out.push_back(std::move(ex));
  }
  return out;
}

ad::Var batch_loss(const RunConfig& cfg, const Towers& towers, const BankVars& vars,
                   const PromptBank& layout,
                   const std::vector<const TrainingExample*>& batch,
                   LossReport* report) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "batch_loss: empty batch");
  const double tau = towers.tau(cfg);
  ad::Var rows4 = encode_all(*towers.text, vars, layout, cfg);

  const auto n = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index dim = batch.front()->features.global_embedding.size();
  Eigen::MatrixXd globals(n, dim);
  Eigen::VectorXd labels(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    globals.row(i) = batch[i]->features.global_embedding.transpose();
    labels(i) = batch[i]->label;
  }
  ad::Var probs = graph::class_probabilities(ad::rows(rows4, 0, 2), globals, tau);
  ad::Var global = graph::global_loss(ad::cols(probs, 1, 1), labels);

  const FocalParams focal{cfg.focal_gamma, cfg.focal_alpha};
  const ad::Var local_pair = ad::rows(rows4, 2, 2);
  const std::size_t taps = batch.front()->features.patch_grids.size();
  std::vector<ad::Var> per_layer;
  for (std::size_t k = 0; k < taps; ++k) {
    ad::Var acc;
    for (const auto* ex : batch) {
      const auto& f = ex->features;
      ad::Var p = graph::class_probabilities(local_pair, f.patch_grids[k], tau);
      ad::Var sn = ad::column_as_grid(p, 0, f.grid_height, f.grid_width);
      ad::Var sa = ad::column_as_grid(p, 1, f.grid_height, f.grid_width);
      ad::Var l = graph::local_loss(sn, sa, ex->mask, focal, cfg.dice_eps);
      acc = acc.valid() ? ad::add(acc, l) : l;
    }
    per_layer.push_back(ad::scale(acc, 1.0 / static_cast<double>(n)));
  }
  ad::Var gcl = graph::gcl_total(rows4, cfg.margin);

  ad::Var local_sum;
  for (const auto& l : per_layer) local_sum = local_sum.valid() ? ad::add(local_sum, l) : l;
  ad::Var total = local_sum.valid() ? ad::add(global, local_sum) : global;
  total = ad::add(total, ad::scale(gcl, cfg.lambda_gcl));

  if (report != nullptr) {
    LossReport r;
    r.global = global.scalar();
    r.gcl = gcl.scalar();
    for (const auto& l : per_layer) {
      r.per_layer_local.push_back(l.scalar());
      r.local += l.scalar();
    }
    r.total = total.scalar();
    *report = std::move(r);
  }
  return total;
}

TrainState initial_state(const RunConfig& cfg, const Towers& towers) {
  TrainState state;
  state.bank = init_bank(cfg, *towers.text);
  for (auto* m : trainable(state.bank)) {
    state.moments.push_back({Eigen::MatrixXd::Zero(m->rows(), m->cols()),
                             Eigen::MatrixXd::Zero(m->rows(), m->cols())});
  }
  return state;
}

LossReport train_step(const RunConfig& cfg, const Towers& towers, TrainState& state,
                      const std::vector<const TrainingExample*>& batch) {
  const BankVars vars = BankVars::parameters(state.bank);
  LossReport report;
  ++state.step;
  const std::string where = "non-finite loss at step " + std::to_string(state.step) +
                            " (epoch " + std::to_string(state.epoch + 1) + ")";
  ad::Var total;
  try {
    total = batch_loss(cfg, towers, vars, state.bank, batch, &report);
  } catch (const Error& e) {
    // NaN prompts fail the normalization guards before a loss exists.
    if (e.kind() != ErrorKind::kNumerical) throw;
    throw Error(ErrorKind::kNumerical, where + ": " + e.what());
  }
  if (!std::isfinite(report.total)) throw Error(ErrorKind::kNumerical, where);
  ad::backward(total);

  const auto [beta1, beta2] = cfg.adam_betas;
  constexpr double kAdamEps = 1e-8;
  const double c1 = 1.0 - std::pow(beta1, state.step);
  const double c2 = 1.0 - std::pow(beta2, state.step);
  const auto params = trainable(state.bank);
  const auto var_list = trainable(vars);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::MatrixXd g = var_list[i].grad();
    auto& mo = state.moments[i];
    mo.first = beta1 * mo.first + (1.0 - beta1) * g;
    mo.second = beta2 * mo.second + (1.0 - beta2) * g.cwiseProduct(g);
    const Eigen::ArrayXXd step = (mo.first.array() / c1) /
                                 ((mo.second.array() / c2).sqrt() + kAdamEps);
    params[i]->array() -= cfg.learning_rate * step;
  }
  state.history.push_back(report);
  return report;
}

nlohmann::json history_json(const TrainState& state) {
  nlohmann::json steps = nlohmann::json::array();
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    nlohmann::json s = report_json(state.history[i]);
    s["step"] = i + 1;
    steps.push_back(std::move(s));
  }
  return {{"steps", steps}, {"epoch_mean_total", state.epoch_mean_total}};
}

TrainResult train(const RunConfig& cfg, const DatasetIndex& index, const Towers& towers,
                  const TrainOptions& options) {
  if (index.entries.empty()) {
    throw Error(ErrorKind::kEmptyIndex, "train: empty training index");
  }
  validate(cfg, towers.limits());
  const std::vector<TrainingExample> examples = prepare_examples(cfg, index, towers);

  TrainState state = initial_state(cfg, towers);
  if (options.initial_bank) state.bank = *options.initial_bank;

  if (options.out_dir) fs::create_directories(*options.out_dir / "history");
  auto write_history = [&](const std::optional<int>& aborted_step) {
    if (!options.out_dir) return;
    nlohmann::json doc = history_json(state);
    doc["aborted_at_step"] = aborted_step ? nlohmann::json(*aborted_step) : nlohmann::json(nullptr);
    write_text_file(*options.out_dir / "history.json", doc.dump(2));
  };

  Rng shuffle_rng = make_rng(cfg.seed, RngStream::kShuffle);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.epoch = epoch;
    // Fisher-Yates on raw engine output, so the order does not depend on the
    // standard library's distribution implementations.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng() % i]);
    }
    double epoch_total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<const TrainingExample*> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) {
        batch.push_back(&examples[order[k]]);
      }
      try {
        epoch_total += train_step(cfg, towers, state, batch).total;
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::kNumerical) write_history(state.step);
        throw;
      }
      ++batches;
    }
    state.epoch_mean_total.push_back(epoch_total / batches);
    if (options.out_dir) {
      save_checkpoint(state.bank, cfg,
                      *options.out_dir / "history" / ("epoch_" + two_digits(epoch + 1) + ".npz"));
    }
    if (options.on_epoch) options.on_epoch(epoch + 1, state.epoch_mean_total.back());
  }
  state.epoch = cfg.epochs;

  TrainResult result;
  if (options.out_dir) {
    result.checkpoint = *options.out_dir / "checkpoint.npz";
    save_checkpoint(state.bank, cfg, *result.checkpoint);
    write_history(std::nullopt);
  }
  result.state = std::move(state);
  return result;
}

Evaluation evaluate(const RunConfig& cfg, const DatasetIndex& index, const Towers& towers,
                    const PromptBank& bank) {
  const GlocalTextEmbeddings text = encode_all(*towers.text, bank, cfg);
  const double tau = towers.tau(cfg);
  Evaluation eval;
  std::vector<ScoredSample> scored;
  for (const auto& entry : index.entries) {
    const Sample s = load_sample(entry, cfg.image_resolution, towers.vision->stats());
    const VisualFeatures f = encode_image(*towers.vision, s.image, cfg);
    EvaluatedSample out;
    AnomalyMap am = score_image(text, f, cfg, tau, &out.global_anomaly_probability);
    out.scored = {entry.class_name, s.label, am.image_score, std::move(am.map), s.mask,
                  s.has_mask};
    out.image = denormalize(s.image, towers.vision->stats());
    scored.push_back(out.scored);
    eval.samples.push_back(std::move(out));
  }
  eval.report = build_report(scored, cfg.aupro_fpr_cap);
  return eval;
}

void write_evaluation(const Evaluation& eval, const fs::path& dir) {
  fs::create_directories(dir);
  write_text_file(dir / "report.json", to_json(eval.report).dump(2));
  write_text_file(dir / "report.txt", to_table(eval.report));
  ArrayArchive maps;
  nlohmann::json manifest = nlohmann::json::array();
  for (std::size_t i = 0; i < eval.samples.size(); ++i) {
    const auto& s = eval.samples[i];
    const std::string id = std::to_string(i);
    const Image& img = s.image;
    maps.put("image." + id, {{img.height, img.width, img.channels}, img.data});
    maps.put_matrix("map." + id, s.scored.map);
    if (s.scored.has_mask) maps.put_matrix("mask." + id, s.scored.mask);
    manifest.push_back({{"index", i},
                        {"class", s.scored.class_name},
                        {"label", s.scored.label},
                        {"score", s.scored.score},
                        {"global_anomaly_probability", s.global_anomaly_probability},
                        {"has_mask", s.scored.has_mask}});
  }
  maps.save(dir / "maps.npz");
  write_text_file(dir / "manifest.json", manifest.dump(2));
}

int visualize_report(const fs::path& report_dir, const fs::path& out_dir) {
  const nlohmann::json manifest = read_json_file(report_dir / "manifest.json");
  const ArrayArchive maps = ArrayArchive::load(report_dir / "maps.npz");
  fs::create_directories(out_dir);
  int rendered = 0;
  for (const auto& rec : manifest) {
    const std::string id = std::to_string(rec.at("index").get<std::size_t>());
    const NamedArray& raw = maps.get("image." + id);
    if (raw.shape.size() != 3 || raw.shape[2] != 3) {
      throw Error(ErrorKind::kShapeMismatch, "maps.npz: image." + id + " is not H x W x 3");
    }
    Image img(static_cast<int>(raw.shape[0]), static_cast<int>(raw.shape[1]), 3);
    img.data = raw.values;
    const Image heat = heatmap(maps.matrix("map." + id));
    std::vector<Image> panels{img, heat};
    if (maps.contains("mask." + id)) panels.push_back(gray_to_rgb(maps.matrix("mask." + id)));
    const std::string stem =
        rec.at("class").get<std::string>() + "_" + four_digits(std::stoul(id));
    write_rgb(out_dir / (stem + "_heatmap.png"), heat);
    write_rgb(out_dir / (stem + "_composite.png"), hconcat(panels));
    ++rendered;
  }
  return rendered;
}

InferResult infer(const RunConfig& cfg, const Towers& towers, const PromptBank& bank,
                  const Image& rgb01, const fs::path& out_dir, const std::string& stem) {
  const auto [h, w] = cfg.image_resolution;
  const Image resized = resize_bilinear(rgb01, h, w);
  const VisualFeatures f = encode_image(
      *towers.vision, normalize_channels(resized, towers.vision->stats()), cfg);
  InferResult out;
  out.map = score_image(encode_all(*towers.text, bank, cfg), f, cfg, towers.tau(cfg),
                        &out.global_anomaly_probability);
  fs::create_directories(out_dir);
  const Image heat = heatmap(out.map.map);
  out.heatmap_path = out_dir / (stem + "_heatmap.png");
  out.composite_path = out_dir / (stem + "_composite.png");
  write_rgb(out.heatmap_path, heat);
  write_rgb(out.composite_path, hconcat({resized, heat}));
  return out;
}

InferResult infer(const RunConfig& cfg, const Towers& towers, const PromptBank& bank,
                  const fs::path& image_path, const fs::path& out_dir) {
  return infer(cfg, towers, bank, read_rgb(image_path), out_dir,
               image_path.stem().string());
}

nlohmann::json embeddings_json(const RunConfig& cfg, const Towers& towers,
                               const PromptBank& bank,
                               const std::optional<fs::path>& history_dir) {
  nlohmann::json out = nlohmann::json::array();
  auto append = [&](const PromptBank& b, const std::string& source) {
    const GlocalTextEmbeddings e = encode_all(*towers.text, b, cfg);
    const std::pair<const char*, const Eigen::VectorXd*> rows[] = {
        {"global_normal", &e.global_normal},
        {"global_anomaly", &e.global_anomaly},
        {"local_normal", &e.local_normal},
        {"local_anomaly", &e.local_anomaly}};
    for (const auto& [label, v] : rows) {
      out.push_back({{"label", label},
                     {"source", source},
                     {"vector", std::vector<double>(v->data(), v->data() + v->size())}});
    }
  };
  append(bank, "final");
  if (history_dir) {
    fs::path dir = *history_dir;
    if (fs::is_directory(dir / "history")) dir /= "history";
    if (!fs::is_directory(dir)) {
      throw Error(ErrorKind::kIo, "history directory not found: " + dir.string());
    }
    std::vector<fs::path> snapshots;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string name = e.path().filename().string();
      if (name.rfind("epoch_", 0) == 0 && e.path().extension() == ".npz") {
        snapshots.push_back(e.path());
      }
    }
    std::sort(snapshots.begin(), snapshots.end());
    for (const auto& p : snapshots) {
      append(load_checkpoint(p, cfg), p.stem().string());
    }
  }
  return out;
}

void dump_embeddings(const RunConfig& cfg, const Towers& towers, const PromptBank& bank,
                     const fs::path& path, const std::optional<fs::path>& history_dir) {
  write_text_file(path, embeddings_json(cfg, towers, bank, history_dir).dump(2));
}

}  // namespace glocal
