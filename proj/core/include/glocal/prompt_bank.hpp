#pragma once

#include <Eigen/Dense>

#include <array>
#include <variant>
#include <vector>

#include "glocal/autodiff.hpp"
#include "glocal/runtime_config.hpp"

namespace glocal {

class TextTower;

enum class Branch { kGlobal, kLocal };
enum class Polarity { kNormal, kAnomaly };

// The four learnable token blocks, in checkpoint order.
enum class BankBlock { kGlobalNormal = 0, kGlobalAnomaly = 1, kLocalNormal = 2, kLocalAnomaly = 3 };

// Frozen vocabulary ids the prompt templates are built from.
struct FrozenWordIds {
  int start_of_text = 0;
  int end_of_text = 0;
  int object = 0;
  int damaged = 0;

  bool operator==(const FrozenWordIds&) const = default;
};

// All trainable state of the method. Rows are token embeddings of width
// D_text; global and local branches never share storage.
struct PromptBank {
  Eigen::MatrixXd normal_global;   // E x D_text
  Eigen::MatrixXd anomaly_global;  // L x D_text
  Eigen::MatrixXd normal_local;    // E x D_text
  Eigen::MatrixXd anomaly_local;   // L x D_text
  std::vector<Eigen::MatrixXd> deep_tokens;  // one P x D_text per tuned layer
  FrozenWordIds frozen_word_ids;

  Eigen::MatrixXd& block(BankBlock b);
  const Eigen::MatrixXd& block(BankBlock b) const;
  Eigen::Index width() const { return normal_global.cols(); }
  bool all_finite() const;

  bool operator==(const PromptBank& other) const;
};

BankBlock normal_block(Branch branch);
BankBlock anomaly_block(Branch branch);

// Differentiable view of a bank: one Var per block and per deep layer.
struct BankVars {
  std::array<ad::Var, 4> blocks;
  std::vector<ad::Var> deep_tokens;

  static BankVars constants(const PromptBank& bank);
  static BankVars parameters(const PromptBank& bank);
  const ad::Var& block(BankBlock b) const { return blocks[static_cast<int>(b)]; }
};

struct FixedToken {
  int id;
  bool operator==(const FixedToken&) const = default;
};
struct BankRow {
  BankBlock block;
  int row;
  bool operator==(const BankRow&) const = default;
};
using Slot = std::variant<FixedToken, BankRow>;

struct TokenSequence {
  std::vector<Slot> slots;  // includes start/end-of-text
  Branch branch = Branch::kGlobal;
  Polarity polarity = Polarity::kNormal;
};

// Learnable rows start from the carrier phrase's frozen embeddings (cycled to
// the bank length) plus N(0, cfg.init_noise^2); deep tokens are pure noise.
PromptBank init_bank(const RunConfig& cfg, const TextTower& tower);

TokenSequence compose_sequence(const PromptBank& bank, Branch branch,
                               Polarity polarity, PromptOrdering ordering,
                               int context_length = 77);

}  // namespace glocal
