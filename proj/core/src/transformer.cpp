#include "glocal/transformer.hpp"

#include <cstring>

#include "glocal/archive.hpp"
#include "glocal/error.hpp"

namespace glocal {
namespace {

ad::Var read_linear_weight(const ArrayArchive& a, const std::string& key) {
  // PyTorch Linear stores [out, in]; we multiply from the right.
  return ad::constant(a.matrix(key).transpose());
}

ad::Var read_row(const ArrayArchive& a, const std::string& key) {
  ad::Matrix m = a.matrix(key);
  if (m.rows() != 1) {
    throw Error(ErrorKind::kShapeMismatch, "archive: '" + key + "' must be 1-D");
  }
  return ad::constant(std::move(m));
}

void put_row(ArrayArchive& a, const std::string& key, const ad::Var& v) {
  NamedArray arr;
  arr.shape = {v.cols()};
  arr.values.assign(v.value().data(), v.value().data() + v.cols());
  a.put(key, std::move(arr));
}

}  // namespace

ad::Var apply_layer_norm(const LayerNormWeights& ln, const ad::Var& x) {
  return ad::layer_norm_rows(x, ln.gamma, ln.beta, kLayerNormEps);
}

ad::Var transformer_block(const BlockWeights& w, const ad::Var& x, int heads,
                          bool causal, Activation act, AttentionMode mode) {
  const ad::Index width = x.cols();
  ad::Var h = ad::layer_norm_rows(x, w.ln1_gamma, w.ln1_beta, kLayerNormEps);
  ad::Var qkv = ad::add_row_broadcast(ad::matmul(h, w.attn_in_w), w.attn_in_b);
  ad::Var attn;
  if (mode == AttentionMode::kValueValue) {
    ad::Var v = ad::cols(qkv, 2 * width, width);
    attn = ad::multi_head_attention(v, v, v, heads, causal);
  } else {
    attn = ad::multi_head_attention(ad::cols(qkv, 0, width),
                                    ad::cols(qkv, width, width),
                                    ad::cols(qkv, 2 * width, width), heads,
                                    causal);
  }
  attn = ad::add_row_broadcast(ad::matmul(attn, w.attn_out_w), w.attn_out_b);
  ad::Var y = ad::add(x, attn);

  ad::Var m = ad::layer_norm_rows(y, w.ln2_gamma, w.ln2_beta, kLayerNormEps);
  m = ad::add_row_broadcast(ad::matmul(m, w.fc_w), w.fc_b);
  m = act == Activation::kQuickGelu ? ad::quick_gelu(m) : ad::gelu(m);
  m = ad::add_row_broadcast(ad::matmul(m, w.proj_w), w.proj_b);
  return ad::add(y, m);
}

BlockWeights read_block(const ArrayArchive& a, const std::string& prefix) {
  BlockWeights w;
  w.ln1_gamma = read_row(a, prefix + "ln_1.weight");
  w.ln1_beta = read_row(a, prefix + "ln_1.bias");
  w.attn_in_w = read_linear_weight(a, prefix + "attn.in_proj_weight");
  w.attn_in_b = read_row(a, prefix + "attn.in_proj_bias");
  w.attn_out_w = read_linear_weight(a, prefix + "attn.out_proj.weight");
  w.attn_out_b = read_row(a, prefix + "attn.out_proj.bias");
  w.ln2_gamma = read_row(a, prefix + "ln_2.weight");
  w.ln2_beta = read_row(a, prefix + "ln_2.bias");
  w.fc_w = read_linear_weight(a, prefix + "mlp.c_fc.weight");
  w.fc_b = read_row(a, prefix + "mlp.c_fc.bias");
  w.proj_w = read_linear_weight(a, prefix + "mlp.c_proj.weight");
  w.proj_b = read_row(a, prefix + "mlp.c_proj.bias");

  const ad::Index width = w.ln1_gamma.cols();
  if (w.attn_in_w.rows() != width || w.attn_in_w.cols() != 3 * width ||
      w.attn_out_w.rows() != width || w.fc_w.rows() != width ||
      w.proj_w.cols() != width || w.proj_w.rows() != w.fc_w.cols()) {
    throw Error(ErrorKind::kShapeMismatch,
                "archive: inconsistent block shapes under '" + prefix + "'");
  }
  return w;
}

void write_block(ArrayArchive& a, const std::string& prefix,
                 const BlockWeights& w) {
  put_row(a, prefix + "ln_1.weight", w.ln1_gamma);
  put_row(a, prefix + "ln_1.bias", w.ln1_beta);
  a.put_matrix(prefix + "attn.in_proj_weight", w.attn_in_w.value().transpose());
  put_row(a, prefix + "attn.in_proj_bias", w.attn_in_b);
  a.put_matrix(prefix + "attn.out_proj.weight",
               w.attn_out_w.value().transpose());
  put_row(a, prefix + "attn.out_proj.bias", w.attn_out_b);
  put_row(a, prefix + "ln_2.weight", w.ln2_gamma);
  put_row(a, prefix + "ln_2.bias", w.ln2_beta);
  a.put_matrix(prefix + "mlp.c_fc.weight", w.fc_w.value().transpose());
  put_row(a, prefix + "mlp.c_fc.bias", w.fc_b);
  a.put_matrix(prefix + "mlp.c_proj.weight", w.proj_w.value().transpose());
  put_row(a, prefix + "mlp.c_proj.bias", w.proj_b);
}

LayerNormWeights read_layer_norm(const ArrayArchive& a,
                                 const std::string& prefix) {
  return {read_row(a, prefix + "weight"), read_row(a, prefix + "bias")};
}

void write_layer_norm(ArrayArchive& a, const std::string& prefix,
                      const LayerNormWeights& ln) {
  put_row(a, prefix + "weight", ln.gamma);
  put_row(a, prefix + "bias", ln.beta);
}

void Checksum::add(const ad::Matrix& m) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
  const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    state_ ^= bytes[i];
    state_ *= 0x100000001b3ull;
  }
}

void Checksum::add(const BlockWeights& w) {
  for (const ad::Var* v :
       {&w.ln1_gamma, &w.ln1_beta, &w.attn_in_w, &w.attn_in_b, &w.attn_out_w,
        &w.attn_out_b, &w.ln2_gamma, &w.ln2_beta, &w.fc_w, &w.fc_b, &w.proj_w,
        &w.proj_b}) {
    add(v->value());
  }
}

void Checksum::add(const LayerNormWeights& ln) {
  add(ln.gamma.value());
  add(ln.beta.value());
}

Activation parse_activation(const std::string& name) {
  if (name == "quick_gelu") return Activation::kQuickGelu;
  if (name == "gelu") return Activation::kGelu;
  throw Error(ErrorKind::kParse, "unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
  return act == Activation::kQuickGelu ? "quick_gelu" : "gelu";
}

}  // namespace glocal
