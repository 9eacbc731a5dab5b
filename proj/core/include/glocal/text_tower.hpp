#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "glocal/autodiff.hpp"
#include "glocal/prompt_bank.hpp"
#include "glocal/runtime_config.hpp"
#include "glocal/transformer.hpp"

namespace glocal {

class ArrayArchive;

struct TextVocabulary {
  int size = 0;
  int start_of_text = 0;
  int end_of_text = 0;
  int object = 0;
  int damaged = 0;
  std::vector<int> carrier;  // token ids of the initialization phrase
};

struct TextTowerWeights {
  int heads = 0;
  Activation activation = Activation::kQuickGelu;
  ad::Var token_embedding;       // vocab x w
  ad::Var positional_embedding;  // context x w
  std::vector<BlockWeights> blocks;
  LayerNormWeights ln_final;
  ad::Var projection;  // w x D
  TextVocabulary vocabulary;
};

// Frozen causal text encoder with deep prompt slots.
//
// A prompt of k slots is laid out as [SOT][P deep slots][k-2 slots][EOT].
// Layer 1 sees the first deep-token block (plus positional embeddings); before
// each later layer i <= deep_depth the P deep positions are overwritten by
// block i. The output is the end-of-text state after ln_final, projected and
// L2-normalized. Positions after EOT are never materialized: under the causal
// mask they cannot influence it.
class TextTower {
 public:
  explicit TextTower(TextTowerWeights weights);

  int layers() const { return static_cast<int>(w_.blocks.size()); }
  int heads() const { return w_.heads; }
  ad::Index width() const { return w_.token_embedding.cols(); }
  ad::Index embed_dim() const { return w_.projection.cols(); }
  int context_length() const {
    return static_cast<int>(w_.positional_embedding.rows());
  }
  const TextVocabulary& vocabulary() const { return w_.vocabulary; }
  const TextTowerWeights& weights() const { return w_; }

  Eigen::RowVectorXd token_embedding(int id) const;

  // Returns a 1 x D unit row. `deep_depth` must not exceed the bank depth.
  ad::Var encode(const TokenSequence& seq, const BankVars& bank,
                 int deep_depth) const;

  std::uint64_t checksum() const;

  static TextTower from_archive(const ArrayArchive& archive);
  void to_archive(ArrayArchive& archive) const;

 private:
  TextTowerWeights w_;
};

struct GlocalTextEmbeddings {
  Eigen::VectorXd global_normal;
  Eigen::VectorXd global_anomaly;
  Eigen::VectorXd local_normal;
  Eigen::VectorXd local_anomaly;
};

Eigen::VectorXd encode_prompt(const TextTower& tower, const TokenSequence& seq,
                              const PromptBank& bank, int deep_depth);

GlocalTextEmbeddings encode_all(const TextTower& tower, const PromptBank& bank,
                                const RunConfig& cfg);

// Rows g_n, g_a, l_n, l_a of a 4 x D matrix, differentiable w.r.t. `bank`.
ad::Var encode_all(const TextTower& tower, const BankVars& bank,
                   const PromptBank& layout, const RunConfig& cfg);

GlocalTextEmbeddings to_embeddings(const ad::Matrix& rows4);

}  // namespace glocal
