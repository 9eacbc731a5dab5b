#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "glocal/autodiff.hpp"
#include "glocal/image.hpp"
#include "glocal/runtime_config.hpp"
#include "glocal/transformer.hpp"

namespace glocal {

class ArrayArchive;

struct VisionTowerWeights {
  int heads = 0;
  int patch_size = 0;
  Activation activation = Activation::kQuickGelu;
  ad::Var patch_embedding;       // 3*p*p x w, input order (channel, dy, dx)
  ad::Var class_embedding;       // 1 x w
  ad::Var positional_embedding;  // (1 + g*g) x w
  LayerNormWeights ln_pre;
  std::vector<BlockWeights> blocks;
  LayerNormWeights ln_post;
  ad::Var projection;  // w x D
  ChannelStats stats;
};

struct VisualFeatures {
  Eigen::VectorXd global_embedding;           // unit, D
  std::vector<Eigen::MatrixXd> patch_grids;   // per tap: (H'*W') x D, unit rows
  int grid_height = 0;
  int grid_width = 0;
};

// softmax(V V^T / sqrt(d)) V for a single head, where d = V.cols().
Eigen::MatrixXd vv_attention(const Eigen::MatrixXd& values);
// The row-stochastic weight matrix used by vv_attention.
Eigen::MatrixXd vv_attention_weights(const Eigen::MatrixXd& values);

// Frozen ViT. Two streams share weights: the QKV stream runs end to end and
// yields the class-token embedding; the V-V stream branches off before block
// `vv_start_depth` (1-based) and uses value-value attention from there on,
// stacking across layers. Patch tokens of the V-V stream (or the shared trunk
// for taps below the branch point) go through ln_post and the projection.
class VisionTower {
 public:
  explicit VisionTower(VisionTowerWeights weights);

  int layers() const { return static_cast<int>(w_.blocks.size()); }
  int patch_size() const { return w_.patch_size; }
  ad::Index width() const { return w_.class_embedding.cols(); }
  ad::Index embed_dim() const { return w_.projection.cols(); }
  const ChannelStats& stats() const { return w_.stats; }
  const VisionTowerWeights& weights() const { return w_; }

  // `image` is channel-normalized H x W x 3 matching cfg.image_resolution.
  // With `with_patches` false only the QKV stream runs.
  VisualFeatures encode(const Image& image, const RunConfig& cfg,
                        bool with_patches = true) const;

  std::uint64_t checksum() const;

  static VisionTower from_archive(const ArrayArchive& archive);
  void to_archive(ArrayArchive& archive) const;

 private:
  ad::Var positional_for_grid(int gh, int gw) const;

  VisionTowerWeights w_;
};

VisualFeatures encode_image(const VisionTower& tower, const Image& image,
                            const RunConfig& cfg);

}  // namespace glocal
