#include "glocal/prompt_bank.hpp"

#include <random>

#include "glocal/error.hpp"
#include "glocal/text_tower.hpp"

namespace glocal {

Eigen::MatrixXd& PromptBank::block(BankBlock b) {
  switch (b) {
    case BankBlock::kGlobalNormal: return normal_global;
    case BankBlock::kGlobalAnomaly: return anomaly_global;
    case BankBlock::kLocalNormal: return normal_local;
    case BankBlock::kLocalAnomaly: return anomaly_local;
  }
  return normal_global;
}

const Eigen::MatrixXd& PromptBank::block(BankBlock b) const {
  return const_cast<PromptBank*>(this)->block(b);
}

bool PromptBank::all_finite() const {
  for (int b = 0; b < 4; ++b) {
    if (!block(static_cast<BankBlock>(b)).allFinite()) return false;
  }
  for (const auto& d : deep_tokens) {
    if (!d.allFinite()) return false;
  }
  return true;
}

bool PromptBank::operator==(const PromptBank& other) const {
  auto same = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
  };
  if (!(frozen_word_ids == other.frozen_word_ids)) return false;
  for (int b = 0; b < 4; ++b) {
    if (!same(block(static_cast<BankBlock>(b)),
              other.block(static_cast<BankBlock>(b)))) {
      return false;
    }
  }
  if (deep_tokens.size() != other.deep_tokens.size()) return false;
  for (std::size_t i = 0; i < deep_tokens.size(); ++i) {
    if (!same(deep_tokens[i], other.deep_tokens[i])) return false;
  }
  return true;
}

BankBlock normal_block(Branch branch) {
  return branch == Branch::kGlobal ? BankBlock::kGlobalNormal
                                   : BankBlock::kLocalNormal;
}

BankBlock anomaly_block(Branch branch) {
  return branch == Branch::kGlobal ? BankBlock::kGlobalAnomaly
                                   : BankBlock::kLocalAnomaly;
}

BankVars BankVars::constants(const PromptBank& bank) {
  BankVars vars;
  for (int b = 0; b < 4; ++b) {
    vars.blocks[b] = ad::constant(bank.block(static_cast<BankBlock>(b)));
  }
  for (const auto& d : bank.deep_tokens) {
    vars.deep_tokens.push_back(ad::constant(d));
  }
  return vars;
}

BankVars BankVars::parameters(const PromptBank& bank) {
  BankVars vars;
  for (int b = 0; b < 4; ++b) {
    vars.blocks[b] = ad::parameter(bank.block(static_cast<BankBlock>(b)));
  }
  for (const auto& d : bank.deep_tokens) {
    vars.deep_tokens.push_back(ad::parameter(d));
  }
  return vars;
}

PromptBank init_bank(const RunConfig& cfg, const TextTower& tower) {
  const auto& vocab = tower.vocabulary();
  if (vocab.carrier.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "init_bank: empty carrier phrase");
  }
  Rng rng = make_rng(cfg.seed, RngStream::kInit);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Eigen::Index width = tower.width();

  auto carrier_block = [&](int length) {
    Eigen::MatrixXd m(length, width);
    for (int r = 0; r < length; ++r) {
      m.row(r) = tower.token_embedding(
          vocab.carrier[static_cast<std::size_t>(r) % vocab.carrier.size()]);
      for (Eigen::Index c = 0; c < width; ++c) {
        m(r, c) += cfg.init_noise * noise(rng);
      }
    }
    return m;
  };

  PromptBank bank;
  bank.normal_global = carrier_block(cfg.normal_prompt_len);
  bank.anomaly_global = carrier_block(cfg.anomaly_prompt_len);
  bank.normal_local = carrier_block(cfg.normal_prompt_len);
  bank.anomaly_local = carrier_block(cfg.anomaly_prompt_len);
  for (int layer = 0; layer < cfg.deep_prompt_depth; ++layer) {
    Eigen::MatrixXd d(cfg.deep_prompt_len, width);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      d(i) = cfg.init_noise * noise(rng);
    }
    bank.deep_tokens.push_back(std::move(d));
  }
  bank.frozen_word_ids = {vocab.start_of_text, vocab.end_of_text,
                          vocab.object, vocab.damaged};
  return bank;
}

TokenSequence compose_sequence(const PromptBank& bank, Branch branch,
                               Polarity polarity, PromptOrdering ordering,
                               int context_length) {
  TokenSequence seq;
  seq.branch = branch;
  seq.polarity = polarity;
  const auto& ids = bank.frozen_word_ids;

  auto emit_block = [&](BankBlock b) {
    const auto rows = static_cast<int>(bank.block(b).rows());
    for (int r = 0; r < rows; ++r) seq.slots.push_back(BankRow{b, r});
  };
  const BankBlock normal = normal_block(branch);
  const BankBlock anomaly = anomaly_block(branch);

  seq.slots.push_back(FixedToken{ids.start_of_text});
  if (polarity == Polarity::kNormal) {
    emit_block(normal);
    seq.slots.push_back(FixedToken{ids.object});
  } else {
    switch (ordering) {
      case PromptOrdering::kNormalAnomalyObject:
        emit_block(normal);
        emit_block(anomaly);
        seq.slots.push_back(FixedToken{ids.damaged});
        seq.slots.push_back(FixedToken{ids.object});
        break;
      case PromptOrdering::kAnomalyNormalObject:
        emit_block(anomaly);
        emit_block(normal);
        seq.slots.push_back(FixedToken{ids.damaged});
        seq.slots.push_back(FixedToken{ids.object});
        break;
      case PromptOrdering::kNormalObjectAnomaly:
        emit_block(normal);
        seq.slots.push_back(FixedToken{ids.damaged});
        seq.slots.push_back(FixedToken{ids.object});
        emit_block(anomaly);
        break;
    }
  }
  seq.slots.push_back(FixedToken{ids.end_of_text});

  if (static_cast<int>(seq.slots.size()) > context_length) {
    throw Error(ErrorKind::kContextOverflow,
                "compose_sequence: " + std::to_string(seq.slots.size()) +
                    " slots exceed context length " +
                    std::to_string(context_length));
  }
  return seq;
}

}  // namespace glocal
