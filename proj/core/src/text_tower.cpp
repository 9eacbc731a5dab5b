#include "glocal/text_tower.hpp"

#include "glocal/archive.hpp"
#include "glocal/error.hpp"

namespace glocal {
namespace {

int scalar_int(const ArrayArchive& a, const std::string& key) {
  const NamedArray& arr = a.get(key);
  if (arr.values.size() != 1) {
    throw Error(ErrorKind::kShapeMismatch, "archive: '" + key + "' must be a scalar");
  }
  return static_cast<int>(arr.values[0]);
}

void put_scalar(ArrayArchive& a, const std::string& key, double v) {
  a.put(key, NamedArray{{}, {v}});
}

}  // namespace

TextTower::TextTower(TextTowerWeights weights) : w_(std::move(weights)) {
  const auto width = w_.token_embedding.cols();
  if (w_.blocks.empty() || w_.heads <= 0 || width % w_.heads != 0 ||
      w_.positional_embedding.cols() != width ||
      w_.projection.rows() != width ||
      w_.ln_final.gamma.cols() != width) {
    throw Error(ErrorKind::kShapeMismatch, "text tower: inconsistent weights");
  }
  const auto& v = w_.vocabulary;
  for (int id : {v.start_of_text, v.end_of_text, v.object, v.damaged}) {
    if (id < 0 || id >= w_.token_embedding.rows()) {
      throw Error(ErrorKind::kInvalidArgument, "text tower: token id out of range");
    }
  }
  w_.vocabulary.size = static_cast<int>(w_.token_embedding.rows());
}

Eigen::RowVectorXd TextTower::token_embedding(int id) const {
  if (id < 0 || id >= w_.token_embedding.rows()) {
    throw Error(ErrorKind::kInvalidArgument, "token id out of range");
  }
  return w_.token_embedding.value().row(id);
}

ad::Var TextTower::encode(const TokenSequence& seq, const BankVars& bank,
                          int deep_depth) const {
  if (bank.deep_tokens.empty() || deep_depth < 1 ||
      deep_depth > static_cast<int>(bank.deep_tokens.size())) {
    throw Error(ErrorKind::kInvalidArgument, "encode: bad deep prompt depth");
  }
  if (deep_depth > layers()) {
    throw Error(ErrorKind::kInvariant, "encode: deep_prompt_depth exceeds text layers");
  }
  const ad::Index prompt_len = bank.deep_tokens.front().rows();
  const auto n = static_cast<ad::Index>(seq.slots.size()) + prompt_len;
  if (n > context_length()) {
    throw Error(ErrorKind::kContextOverflow,
                "encode: sequence of " + std::to_string(n) +
                    " positions exceeds context length " +
                    std::to_string(context_length()));
  }
  if (seq.slots.size() < 2) {
    throw Error(ErrorKind::kInvalidArgument, "encode: sequence lacks SOT/EOT");
  }

  std::vector<ad::Var> parts;
  parts.reserve(seq.slots.size() + 1);
  for (std::size_t i = 0; i < seq.slots.size(); ++i) {
    const Slot& slot = seq.slots[i];
    if (const auto* fixed = std::get_if<FixedToken>(&slot)) {
      parts.push_back(ad::rows(w_.token_embedding, fixed->id, 1));
    } else {
      const auto& ref = std::get<BankRow>(slot);
      parts.push_back(ad::rows(bank.block(ref.block), ref.row, 1));
    }
    if (i == 0) parts.push_back(bank.deep_tokens[0]);
  }
  ad::Var x = ad::concat_rows(parts);
  x = ad::add(x, ad::rows(w_.positional_embedding, 0, n));

  for (int layer = 0; layer < layers(); ++layer) {
    if (layer > 0 && layer < deep_depth) {
      const ad::Var pieces[] = {
          ad::rows(x, 0, 1), bank.deep_tokens[layer],
          ad::rows(x, 1 + prompt_len, n - 1 - prompt_len)};
      x = ad::concat_rows(pieces);
    }
    x = transformer_block(w_.blocks[layer], x, w_.heads, /*causal=*/true,
                          w_.activation, AttentionMode::kQueryKeyValue);
  }
  ad::Var eot = apply_layer_norm(w_.ln_final, ad::rows(x, n - 1, 1));
  return ad::l2_normalize_rows(ad::matmul(eot, w_.projection));
}

std::uint64_t TextTower::checksum() const {
  Checksum c;
  c.add(w_.token_embedding.value());
  c.add(w_.positional_embedding.value());
  for (const auto& b : w_.blocks) c.add(b);
  c.add(w_.ln_final);
  c.add(w_.projection.value());
  return c.value();
}

TextTower TextTower::from_archive(const ArrayArchive& a) {
  TextTowerWeights w;
  w.heads = scalar_int(a, "text.heads");
  w.activation = a.contains_text("text.activation")
                     ? parse_activation(a.text("text.activation"))
                     : Activation::kQuickGelu;
  w.token_embedding = ad::constant(a.matrix("text.token_embedding"));
  w.positional_embedding = ad::constant(a.matrix("text.positional_embedding"));
  for (int i = 0; a.contains("text.layers." + std::to_string(i) + ".ln_1.weight");
       ++i) {
    w.blocks.push_back(read_block(a, "text.layers." + std::to_string(i) + "."));
  }
  w.ln_final = read_layer_norm(a, "text.ln_final.");
  w.projection = ad::constant(a.matrix("text.text_projection"));
  w.vocabulary.start_of_text = scalar_int(a, "text.vocab.sot");
  w.vocabulary.end_of_text = scalar_int(a, "text.vocab.eot");
  w.vocabulary.object = scalar_int(a, "text.vocab.object");
  w.vocabulary.damaged = scalar_int(a, "text.vocab.damaged");
  for (double id : a.get("text.vocab.carrier").values) {
    w.vocabulary.carrier.push_back(static_cast<int>(id));
  }
  return TextTower(std::move(w));
}

void TextTower::to_archive(ArrayArchive& a) const {
  put_scalar(a, "text.heads", w_.heads);
  a.put_text("text.activation", to_string(w_.activation));
  a.put_matrix("text.token_embedding", w_.token_embedding.value());
  a.put_matrix("text.positional_embedding", w_.positional_embedding.value());
  for (std::size_t i = 0; i < w_.blocks.size(); ++i) {
    write_block(a, "text.layers." + std::to_string(i) + ".", w_.blocks[i]);
  }
  write_layer_norm(a, "text.ln_final.", w_.ln_final);
  a.put_matrix("text.text_projection", w_.projection.value());
  put_scalar(a, "text.vocab.sot", w_.vocabulary.start_of_text);
  put_scalar(a, "text.vocab.eot", w_.vocabulary.end_of_text);
  put_scalar(a, "text.vocab.object", w_.vocabulary.object);
  put_scalar(a, "text.vocab.damaged", w_.vocabulary.damaged);
  NamedArray carrier;
  carrier.shape = {static_cast<std::int64_t>(w_.vocabulary.carrier.size())};
  for (int id : w_.vocabulary.carrier) carrier.values.push_back(id);
  a.put("text.vocab.carrier", std::move(carrier));
}

Eigen::VectorXd encode_prompt(const TextTower& tower, const TokenSequence& seq,
                              const PromptBank& bank, int deep_depth) {
  ad::Var out = tower.encode(seq, BankVars::constants(bank), deep_depth);
  return out.value().row(0).transpose();
}

ad::Var encode_all(const TextTower& tower, const BankVars& bank,
                   const PromptBank& layout, const RunConfig& cfg) {
  const int ctx = tower.context_length();
  std::vector<ad::Var> rows;
  for (Branch branch : {Branch::kGlobal, Branch::kLocal}) {
    for (Polarity polarity : {Polarity::kNormal, Polarity::kAnomaly}) {
      TokenSequence seq =
          compose_sequence(layout, branch, polarity, cfg.prompt_ordering, ctx);
      rows.push_back(tower.encode(seq, bank, cfg.deep_prompt_depth));
    }
  }
  return ad::concat_rows(rows);
}

GlocalTextEmbeddings encode_all(const TextTower& tower, const PromptBank& bank,
                                const RunConfig& cfg) {
  ad::Var rows = encode_all(tower, BankVars::constants(bank), bank, cfg);
  return to_embeddings(rows.value());
}

GlocalTextEmbeddings to_embeddings(const ad::Matrix& rows4) {
  return {rows4.row(0).transpose(), rows4.row(1).transpose(),
          rows4.row(2).transpose(), rows4.row(3).transpose()};
}

}  // namespace glocal
