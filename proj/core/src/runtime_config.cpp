#include "glocal/runtime_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "glocal/error.hpp"

namespace glocal {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return "io";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kInvariant: return "invariant";
    case ErrorKind::kMissingKey: return "missing_key";
    case ErrorKind::kShapeMismatch: return "shape_mismatch";
    case ErrorKind::kContextOverflow: return "context_overflow";
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kEmptyIndex: return "empty_index";
    case ErrorKind::kNumerical: return "numerical";
  }
  return "unknown";
}

std::string_view to_string(PromptOrdering ordering) {
  switch (ordering) {
    case PromptOrdering::kNormalAnomalyObject: return "N-A-obj";
    case PromptOrdering::kAnomalyNormalObject: return "A-N-obj";
    case PromptOrdering::kNormalObjectAnomaly: return "N-obj-A";
  }
  return "N-A-obj";
}

std::string_view to_string(ScoreFusion fusion) {
  return fusion == ScoreFusion::kTextOnly ? "text_only" : "text_plus_map_max";
}

PromptOrdering parse_prompt_ordering(std::string_view text) {
  if (text == "N-A-obj") return PromptOrdering::kNormalAnomalyObject;
  if (text == "A-N-obj") return PromptOrdering::kAnomalyNormalObject;
  if (text == "N-obj-A") return PromptOrdering::kNormalObjectAnomaly;
  throw Error(ErrorKind::kInvalidArgument,
              "unknown prompt_ordering '" + std::string(text) + "'");
}

ScoreFusion parse_score_fusion(std::string_view text) {
  if (text == "text_only") return ScoreFusion::kTextOnly;
  if (text == "text_plus_map_max") return ScoreFusion::kTextPlusMapMax;
  throw Error(ErrorKind::kInvalidArgument,
              "unknown score_fusion '" + std::string(text) + "'");
}

nlohmann::json to_json(const RunConfig& cfg) {
  return {
      {"normal_prompt_len", cfg.normal_prompt_len},
      {"anomaly_prompt_len", cfg.anomaly_prompt_len},
      {"deep_prompt_len", cfg.deep_prompt_len},
      {"deep_prompt_depth", cfg.deep_prompt_depth},
      {"vv_start_depth", cfg.vv_start_depth},
      {"patch_tap_layers", cfg.patch_tap_layers},
      {"margin", cfg.margin},
      {"lambda_gcl", cfg.lambda_gcl},
      {"sigma", cfg.sigma},
      {"epochs", cfg.epochs},
      {"learning_rate", cfg.learning_rate},
      {"adam_betas", {cfg.adam_betas.first, cfg.adam_betas.second}},
      {"image_resolution",
       {cfg.image_resolution.first, cfg.image_resolution.second}},
      {"prompt_ordering", to_string(cfg.prompt_ordering)},
      {"score_fusion", to_string(cfg.score_fusion)},
      {"aupro_fpr_cap", cfg.aupro_fpr_cap},
      {"seed", cfg.seed},
      {"batch_size", cfg.batch_size},
      {"focal_gamma", cfg.focal_gamma},
      {"focal_alpha", cfg.focal_alpha},
      {"dice_eps", cfg.dice_eps},
      {"init_noise", cfg.init_noise},
      {"normalize_map_by_layers", cfg.normalize_map_by_layers},
      {"temperature", cfg.temperature},
  };
}

RunConfig config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) {
    throw Error(ErrorKind::kParse, "config: top level must be a JSON object");
  }
  RunConfig cfg;
  const std::set<std::string> known = [] {
    std::set<std::string> keys;
    const nlohmann::json defaults = to_json(RunConfig{});
    for (const auto& [k, v] : defaults.items()) keys.insert(k);
    return keys;
  }();
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) {
      throw Error(ErrorKind::kParse, "config: unknown key '" + key + "'");
    }
  }

  auto read = [&]<typename T>(const char* key, T& field) {
    if (!doc.contains(key)) return;
    try {
      field = doc.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse,
                  std::string("config: bad value for '") + key + "': " +
                      e.what());
    }
  };
  read("normal_prompt_len", cfg.normal_prompt_len);
  read("anomaly_prompt_len", cfg.anomaly_prompt_len);
  read("deep_prompt_len", cfg.deep_prompt_len);
  read("deep_prompt_depth", cfg.deep_prompt_depth);
  read("vv_start_depth", cfg.vv_start_depth);
  read("patch_tap_layers", cfg.patch_tap_layers);
  read("margin", cfg.margin);
  read("lambda_gcl", cfg.lambda_gcl);
  read("sigma", cfg.sigma);
  read("epochs", cfg.epochs);
  read("learning_rate", cfg.learning_rate);
  read("adam_betas", cfg.adam_betas);
  read("image_resolution", cfg.image_resolution);
  read("aupro_fpr_cap", cfg.aupro_fpr_cap);
  read("seed", cfg.seed);
  read("batch_size", cfg.batch_size);
  read("focal_gamma", cfg.focal_gamma);
  read("focal_alpha", cfg.focal_alpha);
  read("dice_eps", cfg.dice_eps);
  read("init_noise", cfg.init_noise);
  read("normalize_map_by_layers", cfg.normalize_map_by_layers);
  read("temperature", cfg.temperature);
  std::string text;
  if (doc.contains("prompt_ordering")) {
    read("prompt_ordering", text);
    cfg.prompt_ordering = parse_prompt_ordering(text);
  }
  if (doc.contains("score_fusion")) {
    read("score_fusion", text);
    cfg.score_fusion = parse_score_fusion(text);
  }
  return cfg;
}

void validate(const RunConfig& cfg, const BackboneLimits& limits) {
  auto require = [](bool ok, const std::string& name) {
    if (!ok) throw Error(ErrorKind::kInvariant, "config invariant violated: " + name);
  };
  require(cfg.normal_prompt_len > 0, "normal_prompt_len > 0");
  require(cfg.anomaly_prompt_len > 0, "anomaly_prompt_len > 0");
  require(cfg.deep_prompt_len > 0, "deep_prompt_len > 0");
  require(cfg.deep_prompt_depth > 0, "deep_prompt_depth > 0");
  require(cfg.vv_start_depth > 0, "vv_start_depth > 0");
  require(cfg.epochs > 0, "epochs > 0");
  require(cfg.batch_size > 0, "batch_size > 0");
  require(cfg.margin >= 0.0, "margin >= 0");
  require(cfg.lambda_gcl >= 0.0, "lambda_gcl >= 0");
  require(cfg.sigma > 0.0, "sigma > 0");
  require(cfg.learning_rate >= 0.0, "learning_rate >= 0");
  require(cfg.adam_betas.first > 0.0 && cfg.adam_betas.first < 1.0 &&
              cfg.adam_betas.second > 0.0 && cfg.adam_betas.second < 1.0,
          "adam_betas in (0,1)");
  require(cfg.image_resolution.first > 0 && cfg.image_resolution.second > 0,
          "image_resolution > 0");
  require(cfg.aupro_fpr_cap > 0.0 && cfg.aupro_fpr_cap <= 1.0,
          "aupro_fpr_cap in (0,1]");
  require(cfg.focal_gamma >= 0.0 && cfg.focal_alpha > 0.0,
          "focal_gamma >= 0 and focal_alpha > 0");
  require(cfg.dice_eps > 0.0, "dice_eps > 0");
  require(cfg.init_noise >= 0.0, "init_noise >= 0");
  require(cfg.temperature >= 0.0, "temperature >= 0");
  require(!cfg.patch_tap_layers.empty(), "patch_tap_layers nonempty");
  require(std::is_sorted(cfg.patch_tap_layers.begin(),
                         cfg.patch_tap_layers.end()) &&
              std::adjacent_find(cfg.patch_tap_layers.begin(),
                                 cfg.patch_tap_layers.end()) ==
                  cfg.patch_tap_layers.end(),
          "patch_tap_layers ascending");
  require(cfg.patch_tap_layers.front() >= 1, "patch_tap_layers >= 1");

  require(cfg.deep_prompt_depth <= limits.text_layers,
          "deep_prompt_depth <= text layers (" +
              std::to_string(limits.text_layers) + ")");
  require(cfg.patch_tap_layers.back() <= limits.vision_layers,
          "patch_tap_layers <= vision layers (" +
              std::to_string(limits.vision_layers) + ")");
  require(cfg.vv_start_depth <= cfg.patch_tap_layers.back(),
          "vv_start_depth <= max(patch_tap_layers)");
  require(cfg.deep_prompt_len + cfg.normal_prompt_len +
                  cfg.anomaly_prompt_len + limits.reserved_tokens <=
              limits.context_length,
          "deep_prompt_len + normal_prompt_len + anomaly_prompt_len + "
          "reserved tokens <= context length (" +
              std::to_string(limits.context_length) + ")");
}

RunConfig load_config(const std::filesystem::path& path,
                      const BackboneLimits& limits) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "config: cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kParse,
                "config: malformed JSON in " + path.string() + ": " + e.what());
  }
  RunConfig cfg = config_from_json(doc);
  validate(cfg, limits);
  return cfg;
}

Rng make_rng(std::uint64_t seed, RngStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

}  // namespace glocal
