#include "glocal/backbone.hpp"

#include <cmath>
#include <random>

#include "glocal/archive.hpp"
#include "glocal/error.hpp"

namespace glocal {
namespace {

class WeightFactory {
 public:
  explicit WeightFactory(std::uint64_t seed) : rng_(seed) {}

  ad::Var normal(ad::Index rows, ad::Index cols, double stddev) {
    ad::Matrix m(rows, cols);
    for (ad::Index i = 0; i < m.size(); ++i) m(i) = stddev * dist_(rng_);
    return ad::constant(std::move(m));
  }
  ad::Var filled(ad::Index cols, double v) {
    return ad::constant(ad::Matrix::Constant(1, cols, v));
  }

  BlockWeights block(int width, int layers) {
    const double attn_std = 1.0 / std::sqrt(double(width));
    const double proj_std = attn_std / std::sqrt(2.0 * layers);
    const double fc_std = 1.0 / std::sqrt(2.0 * width);
    BlockWeights w;
    w.ln1_gamma = filled(width, 1.0);
    w.ln1_beta = filled(width, 0.0);
    w.attn_in_w = normal(width, 3 * width, attn_std);
    w.attn_in_b = filled(3 * width, 0.0);
    w.attn_out_w = normal(width, width, proj_std);
    w.attn_out_b = filled(width, 0.0);
    w.ln2_gamma = filled(width, 1.0);
    w.ln2_beta = filled(width, 0.0);
    w.fc_w = normal(width, 4 * width, fc_std);
    w.fc_b = filled(4 * width, 0.0);
    w.proj_w = normal(4 * width, width, proj_std);
    w.proj_b = filled(width, 0.0);
    return w;
  }

 private:
  Rng rng_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace

BackboneLimits Towers::limits() const {
  return {text->layers(), vision->layers(), text->context_length(), 2};
}

double Towers::tau(const RunConfig& cfg) const {
  return cfg.temperature > 0.0 ? cfg.temperature : temperature;
}

Towers make_toy_backbone(const ToyBackboneSpec& spec) {
  WeightFactory f(spec.weight_seed);

  TextTowerWeights t;
  t.heads = spec.text_heads;
  t.activation = Activation::kQuickGelu;
  t.token_embedding = f.normal(kToyVocabSize, spec.text_width, 0.02);
  t.positional_embedding = f.normal(spec.context_length, spec.text_width, 0.01);
  for (int i = 0; i < spec.text_layers; ++i) {
    t.blocks.push_back(f.block(spec.text_width, spec.text_layers));
  }
  t.ln_final = {f.filled(spec.text_width, 1.0), f.filled(spec.text_width, 0.0)};
  t.projection =
      f.normal(spec.text_width, spec.embed_dim, 1.0 / std::sqrt(double(spec.text_width)));
  t.vocabulary.start_of_text = kToySotId;
  t.vocabulary.end_of_text = kToyEotId;
  t.vocabulary.object = kToyObjectId;
  t.vocabulary.damaged = kToyDamagedId;
  for (unsigned char ch : std::string("a photo of a")) {
    t.vocabulary.carrier.push_back(ch);
  }

  VisionTowerWeights v;
  const int width = spec.vision_width;
  const int p = spec.patch_size;
  const int grid = spec.resolution / p;
  const int k = spec.dct_frequencies;
  const int coefficients = 3 * k * k;
  if (coefficients >= width) {
    throw Error(ErrorKind::kInvalidArgument, "toy backbone: vision width too small");
  }
  const double scale = 1.0 / std::sqrt(double(width));
  v.heads = spec.vision_heads;
  v.patch_size = p;
  v.activation = Activation::kQuickGelu;

  // Orthonormal 2-D DCT-II basis; input rows are ordered (channel, dy, dx).
  ad::Matrix patch = ad::Matrix::Zero(3 * p * p, width);
  for (int c = 0, col = 0; c < 3; ++c) {
    for (int u = 0; u < k; ++u) {
      for (int w = 0; w < k; ++w, ++col) {
        const double norm = (u == 0 ? 1.0 : std::sqrt(2.0)) * (w == 0 ? 1.0 : std::sqrt(2.0)) / p;
        for (int y = 0; y < p; ++y) {
          for (int x = 0; x < p; ++x) {
            patch(c * p * p + y * p + x, col) = spec.patch_gain * norm *
                                                std::cos(M_PI * (y + 0.5) * u / p) *
                                                std::cos(M_PI * (x + 0.5) * w / p);
          }
        }
      }
    }
  }
  v.patch_embedding = ad::constant(std::move(patch));
  v.class_embedding = f.normal(1, width, scale);
  ad::Matrix positional = f.normal(1 + grid * grid, width, spec.positional_jitter).value();
  ad::Matrix shared = f.normal(1, width, 1.0).value();
  positional.rowwise() += spec.positional_shared / shared.norm() * shared.row(0);
  v.positional_embedding = ad::constant(std::move(positional));
  v.ln_pre = {f.filled(width, 1.0), f.filled(width, 0.0)};

  for (int i = 0; i < spec.vision_layers; ++i) {
    BlockWeights b = f.block(width, spec.vision_layers);
    ad::Matrix in = b.attn_in_w.value();
    in.leftCols(2 * width) *= spec.query_key_gain;
    ad::Matrix out = b.attn_out_w.value() * (spec.residual_scale * spec.attention_gain);
    b.attn_in_w = ad::constant(std::move(in));
    b.attn_out_w = ad::constant(std::move(out));
    ad::Matrix fc = b.fc_w.value();
    ad::Matrix proj = b.proj_w.value() * spec.residual_scale;
    if (i == 0) {
      fc *= spec.residual_scale;
      for (int j = 0; j < coefficients; ++j) {
        const int dst = coefficients + j % (width - coefficients);
        fc.col(2 * j).setZero();
        fc.col(2 * j + 1).setZero();
        fc(j, 2 * j) = spec.energy_gain;
        fc(j, 2 * j + 1) = -spec.energy_gain;
        proj.row(2 * j).setZero();
        proj.row(2 * j + 1).setZero();
        proj(2 * j, dst) = 1.0 / spec.energy_gain;
        proj(2 * j + 1, dst) = 1.0 / spec.energy_gain;
      }
    }
    b.fc_w = ad::constant(std::move(fc));
    b.proj_w = ad::constant(std::move(proj));
    v.blocks.push_back(std::move(b));
  }
  v.ln_post = {f.filled(width, 1.0), f.filled(width, 0.0)};
  v.projection = f.normal(width, spec.embed_dim, scale);

  Towers towers;
  towers.text = std::make_shared<const TextTower>(std::move(t));
  towers.vision = std::make_shared<const VisionTower>(std::move(v));
  towers.temperature = spec.temperature;
  towers.name = "toy";
  return towers;
}

Towers load_backbone_archive(const std::filesystem::path& path) {
  const ArrayArchive archive = ArrayArchive::load(path);
  Towers towers;
  towers.text = std::make_shared<const TextTower>(TextTower::from_archive(archive));
  towers.vision =
      std::make_shared<const VisionTower>(VisionTower::from_archive(archive));
  if (towers.text->embed_dim() != towers.vision->embed_dim()) {
    throw Error(ErrorKind::kShapeMismatch,
                "backbone: text and vision joint dimensions differ");
  }
  towers.temperature = 1.0 / std::exp(archive.get("logit_scale").values.at(0));
  towers.name = "archive:" + path.string();
  return towers;
}

void save_backbone_archive(const Towers& towers, const std::filesystem::path& path) {
  ArrayArchive archive;
  towers.text->to_archive(archive);
  towers.vision->to_archive(archive);
  archive.put("logit_scale", NamedArray{{}, {std::log(1.0 / towers.temperature)}});
  archive.save(path);
}

Towers load_backbone(const std::string& selector) {
  if (selector == "toy") return make_toy_backbone();
  constexpr std::string_view prefix = "archive:";
  if (selector.starts_with(prefix)) {
    return load_backbone_archive(selector.substr(prefix.size()));
  }
  throw Error(ErrorKind::kInvalidArgument,
              "backbone must be 'toy' or 'archive:PATH', got '" + selector + "'");
}

RunConfig toy_run_config() {
  RunConfig cfg;
  cfg.deep_prompt_depth = 2;
  cfg.vv_start_depth = 2;
  cfg.patch_tap_layers = {2, 4};
  cfg.image_resolution = {32, 32};
  cfg.sigma = 1.0;
  return cfg;
}

}  // namespace glocal
