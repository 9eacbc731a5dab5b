#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace glocal {

enum class PromptOrdering { kNormalAnomalyObject, kAnomalyNormalObject, kNormalObjectAnomaly };
enum class ScoreFusion { kTextOnly, kTextPlusMapMax };

std::string_view to_string(PromptOrdering ordering);
std::string_view to_string(ScoreFusion fusion);
PromptOrdering parse_prompt_ordering(std::string_view text);
ScoreFusion parse_score_fusion(std::string_view text);

// Structural limits of a backbone that a config must fit inside.
struct BackboneLimits {
  int text_layers = 12;
  int vision_layers = 24;
  int context_length = 77;
  int reserved_tokens = 2;  // start- and end-of-text
};

// Limits of the ViT-L/14 CLIP backbone the defaults are tuned for.
inline constexpr BackboneLimits kClipVitL14Limits{12, 24, 77, 2};

struct RunConfig {
  int normal_prompt_len = 13;
  int anomaly_prompt_len = 10;
  int deep_prompt_len = 4;
  int deep_prompt_depth = 12;
  int vv_start_depth = 6;
  std::vector<int> patch_tap_layers{6, 12, 18, 24};
  double margin = 0.0;
  double lambda_gcl = 1.0;
  double sigma = 8.0;
  int epochs = 15;
  double learning_rate = 0.001;
  std::pair<double, double> adam_betas{0.5, 0.999};
  std::pair<int, int> image_resolution{518, 518};
  PromptOrdering prompt_ordering = PromptOrdering::kNormalAnomalyObject;
  ScoreFusion score_fusion = ScoreFusion::kTextOnly;
  double aupro_fpr_cap = 0.3;
  std::uint64_t seed = 0;

  // Knobs the method leaves open.
  int batch_size = 8;
  double focal_gamma = 2.0;
  double focal_alpha = 1.0;
  double dice_eps = 1e-5;
  double init_noise = 0.02;
  bool normalize_map_by_layers = false;
  // Overrides the backbone temperature when positive.
  double temperature = 0.0;

  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const RunConfig& cfg);
// Overlays `doc` on the defaults; unknown keys are rejected.
RunConfig config_from_json(const nlohmann::json& doc);

// Throws Error{kInvariant} naming the violated constraint.
void validate(const RunConfig& cfg, const BackboneLimits& limits);

RunConfig load_config(const std::filesystem::path& path,
                      const BackboneLimits& limits = kClipVitL14Limits);

// Every random draw in the library goes through this engine type.
using Rng = std::mt19937_64;

// Independent, reproducible streams derived from the run seed.
enum class RngStream : std::uint64_t { kInit = 1, kShuffle = 2, kSynthetic = 3 };
Rng make_rng(std::uint64_t seed, RngStream stream);

}  // namespace glocal
