#include "glocal/checkpoint.hpp"

#include <string>

#include "glocal/error.hpp"

namespace glocal {
namespace {

constexpr const char* kBlockKeys[4] = {"prompt.global.normal", "prompt.global.anomaly",
                                       "prompt.local.normal", "prompt.local.anomaly"};

std::string deep_key(int layer) { return "deep.layer." + std::to_string(layer); }

Eigen::MatrixXd checked(const ArrayArchive& archive, const std::string& key,
                        Eigen::Index rows, Eigen::Index cols) {
  if (!archive.contains(key)) {
    throw Error(ErrorKind::kMissingKey, "checkpoint is missing key \"" + key + "\"");
  }
  const NamedArray& a = archive.get(key);
  if (a.shape.size() != 2 || a.shape[0] != rows || (cols >= 0 && a.shape[1] != cols)) {
    std::string got;
    for (std::size_t i = 0; i < a.shape.size(); ++i) {
      got += (i ? "x" : "") + std::to_string(a.shape[i]);
    }
    throw Error(ErrorKind::kShapeMismatch,
                "checkpoint key \"" + key + "\" has shape " + got + ", expected " +
                    std::to_string(rows) + "x" + (cols >= 0 ? std::to_string(cols) : "D"));
  }
  return archive.matrix(key);
}

}  // namespace

ArrayArchive checkpoint_archive(const PromptBank& bank, const RunConfig& cfg) {
  ArrayArchive archive;
  for (int b = 0; b < 4; ++b) {
    archive.put_matrix(kBlockKeys[b], bank.block(static_cast<BankBlock>(b)));
  }
  for (std::size_t i = 0; i < bank.deep_tokens.size(); ++i) {
    archive.put_matrix(deep_key(static_cast<int>(i) + 1), bank.deep_tokens[i]);
  }
  const auto& ids = bank.frozen_word_ids;
  archive.put("frozen_word_ids",
              {{4},
               {double(ids.start_of_text), double(ids.end_of_text), double(ids.object),
                double(ids.damaged)}});
  archive.put_text("config", to_json(cfg).dump(2));
  return archive;
}

PromptBank bank_from_archive(const ArrayArchive& archive, const RunConfig& cfg) {
  PromptBank bank;
  // The first block fixes the embedding width every other array must share.
  bank.normal_global = checked(archive, kBlockKeys[0], cfg.normal_prompt_len, -1);
  const Eigen::Index width = bank.normal_global.cols();
  bank.anomaly_global = checked(archive, kBlockKeys[1], cfg.anomaly_prompt_len, width);
  bank.normal_local = checked(archive, kBlockKeys[2], cfg.normal_prompt_len, width);
  bank.anomaly_local = checked(archive, kBlockKeys[3], cfg.anomaly_prompt_len, width);
  for (int layer = 1; layer <= cfg.deep_prompt_depth; ++layer) {
    bank.deep_tokens.push_back(
        checked(archive, deep_key(layer), cfg.deep_prompt_len, width));
  }
  if (!archive.contains("frozen_word_ids")) {
    throw Error(ErrorKind::kMissingKey, "checkpoint is missing key \"frozen_word_ids\"");
  }
  const NamedArray& ids = archive.get("frozen_word_ids");
  if (ids.size() != 4) {
    throw Error(ErrorKind::kShapeMismatch, "frozen_word_ids must hold 4 ids");
  }
  bank.frozen_word_ids = {static_cast<int>(ids.values[0]), static_cast<int>(ids.values[1]),
                          static_cast<int>(ids.values[2]), static_cast<int>(ids.values[3])};
  return bank;
}

void save_checkpoint(const PromptBank& bank, const RunConfig& cfg,
                     const std::filesystem::path& path) {
  checkpoint_archive(bank, cfg).save(path);
}

PromptBank load_checkpoint(const std::filesystem::path& path, const RunConfig& cfg) {
  return bank_from_archive(ArrayArchive::load(path), cfg);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const ArrayArchive archive = ArrayArchive::load(path);
  if (!archive.contains_text("config")) {
    throw Error(ErrorKind::kMissingKey, "checkpoint is missing key \"config\"");
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(archive.text("config"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("checkpoint config: ") + e.what());
  }
  LoadedCheckpoint out;
  out.config = config_from_json(doc);
  out.bank = bank_from_archive(archive, out.config);
  return out;
}

}  // namespace glocal
