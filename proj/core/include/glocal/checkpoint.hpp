#pragma once

#include <filesystem>

#include "glocal/archive.hpp"
#include "glocal/prompt_bank.hpp"
#include "glocal/runtime_config.hpp"

namespace glocal {

// Keys: prompt.global.normal [E x D], prompt.global.anomaly [L x D],
// prompt.local.normal [E x D], prompt.local.anomaly [L x D],
// deep.layer.<i> [P x D] for i = 1..deep_prompt_depth, frozen_word_ids [4]
// and "config", a JSON copy of the run config.
ArrayArchive checkpoint_archive(const PromptBank& bank, const RunConfig& cfg);
PromptBank bank_from_archive(const ArrayArchive& archive, const RunConfig& cfg);

void save_checkpoint(const PromptBank& bank, const RunConfig& cfg,
                     const std::filesystem::path& path);

// Shapes are checked against `cfg` (missing key / shape mismatch errors).
PromptBank load_checkpoint(const std::filesystem::path& path, const RunConfig& cfg);

// Uses the config stored in the archive.
struct LoadedCheckpoint {
  PromptBank bank;
  RunConfig config;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace glocal
