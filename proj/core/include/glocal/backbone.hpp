#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "glocal/runtime_config.hpp"
#include "glocal/text_tower.hpp"
#include "glocal/vision_tower.hpp"

namespace glocal {

// The frozen backbone: both towers plus the softmax temperature.
struct Towers {
  std::shared_ptr<const TextTower> text;
  std::shared_ptr<const VisionTower> vision;
  double temperature = 0.07;
  std::string name;

  BackboneLimits limits() const;
  // Temperature after applying the config override, if any.
  double tau(const RunConfig& cfg) const;
};

struct ToyBackboneSpec {
  int text_layers = 2;
  int text_width = 64;
  int text_heads = 4;
  int context_length = 77;
  int vision_layers = 4;
  int vision_width = 64;
  int vision_heads = 4;
  int patch_size = 8;
  int resolution = 32;
  int embed_dim = 32;
  double temperature = 0.07;

  // Vision weights are random except for a fixed early-vision front end:
  // the patch embedding is a low-frequency DCT basis per colour channel and
  // the first MLP holds rectified (+/-) units that write |coefficient| into
  // spare residual dimensions. Positional embeddings share one common
  // direction so LayerNorm keeps a magnitude reference across patches.
  int dct_frequencies = 3;         // K x K per channel
  double patch_gain = 0.15;
  double positional_shared = 1.0;  // norm of the common component
  double positional_jitter = 0.03;
  double residual_scale = 0.3;     // branch outputs relative to CLIP-style init
  double attention_gain = 3.0;     // extra scale on attention outputs
  double query_key_gain = 2.0;
  double energy_gain = 4.0;
  // Toy weights depend only on this value, never on the run seed.
  std::uint64_t weight_seed = 0x9e3779b97f4a7c15ull;
};

// Toy vocabulary: ids 0-255 are bytes, then "object", "damaged", SOT, EOT.
inline constexpr int kToyObjectId = 256;
inline constexpr int kToyDamagedId = 257;
inline constexpr int kToySotId = 258;
inline constexpr int kToyEotId = 259;
inline constexpr int kToyVocabSize = 260;

Towers make_toy_backbone(const ToyBackboneSpec& spec = {});

// "text.*", "vision.*" and "logit_scale" (log of 1/tau) keys.
Towers load_backbone_archive(const std::filesystem::path& path);
void save_backbone_archive(const Towers& towers,
                           const std::filesystem::path& path);

// "toy" or "archive:PATH".
Towers load_backbone(const std::string& selector);

// Config matching the toy backbone's geometry, otherwise at defaults.
RunConfig toy_run_config();

}  // namespace glocal
