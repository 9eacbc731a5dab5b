#pragma once

// Pre-LayerNorm residual attention block shared by the text and vision towers.

#include <cstdint>
#include <string>
#include <vector>

#include "glocal/autodiff.hpp"

namespace glocal {

class ArrayArchive;

enum class Activation { kQuickGelu, kGelu };

enum class AttentionMode {
  kQueryKeyValue,
  kValueValue,  // softmax(V V^T / sqrt(d_head)) V per head
};

// Weights are stored pre-transposed so a layer computes x * W + b.
struct BlockWeights {
  ad::Var ln1_gamma, ln1_beta;      // 1 x w
  ad::Var attn_in_w, attn_in_b;     // w x 3w, 1 x 3w
  ad::Var attn_out_w, attn_out_b;   // w x w, 1 x w
  ad::Var ln2_gamma, ln2_beta;      // 1 x w
  ad::Var fc_w, fc_b;               // w x 4w, 1 x 4w
  ad::Var proj_w, proj_b;           // 4w x w, 1 x w
};

struct LayerNormWeights {
  ad::Var gamma, beta;
};

inline constexpr double kLayerNormEps = 1e-5;

ad::Var apply_layer_norm(const LayerNormWeights& ln, const ad::Var& x);

ad::Var transformer_block(const BlockWeights& w, const ad::Var& x, int heads,
                          bool causal, Activation act, AttentionMode mode);

// Archive keys follow the PyTorch CLIP layout under `prefix`
// (e.g. "text.layers.0."): ln_1.weight, attn.in_proj_weight [3w x w], ...
BlockWeights read_block(const ArrayArchive& archive, const std::string& prefix);
void write_block(ArrayArchive& archive, const std::string& prefix,
                 const BlockWeights& w);
LayerNormWeights read_layer_norm(const ArrayArchive& archive,
                                 const std::string& prefix);
void write_layer_norm(ArrayArchive& archive, const std::string& prefix,
                      const LayerNormWeights& ln);

// FNV-1a over the raw bytes of every value, in a fixed order.
class Checksum {
 public:
  void add(const ad::Matrix& m);
  void add(const BlockWeights& w);
  void add(const LayerNormWeights& ln);
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ull;
};

Activation parse_activation(const std::string& name);
std::string to_string(Activation act);

}  // namespace glocal
