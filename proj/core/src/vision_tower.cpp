#include "glocal/vision_tower.hpp"

#include <cmath>

#include "glocal/archive.hpp"
#include "glocal/error.hpp"

namespace glocal {

Eigen::MatrixXd vv_attention_weights(const Eigen::MatrixXd& values) {
  if (values.rows() < 1 || !values.allFinite()) {
    throw Error(ErrorKind::kInvalidArgument,
                "vv_attention: need at least one finite row");
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(values.cols()));
  Eigen::MatrixXd scores = values * values.transpose() * inv_scale;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double m = scores.row(i).maxCoeff();
    scores.row(i) = (scores.row(i).array() - m).exp().matrix();
    scores.row(i) /= scores.row(i).sum();
  }
  return scores;
}

Eigen::MatrixXd vv_attention(const Eigen::MatrixXd& values) {
  return vv_attention_weights(values) * values;
}

VisionTower::VisionTower(VisionTowerWeights weights) : w_(std::move(weights)) {
  const auto width = w_.class_embedding.cols();
  const auto p = w_.patch_size;
  if (w_.blocks.empty() || w_.heads <= 0 || width % w_.heads != 0 || p <= 0 ||
      w_.patch_embedding.rows() != 3 * p * p ||
      w_.patch_embedding.cols() != width ||
      w_.positional_embedding.cols() != width ||
      w_.projection.rows() != width) {
    throw Error(ErrorKind::kShapeMismatch, "vision tower: inconsistent weights");
  }
  const auto grid = static_cast<ad::Index>(
      std::lround(std::sqrt(static_cast<double>(w_.positional_embedding.rows() - 1))));
  if (grid * grid + 1 != w_.positional_embedding.rows()) {
    throw Error(ErrorKind::kShapeMismatch,
                "vision tower: positional embedding is not 1 + square grid");
  }
}

ad::Var VisionTower::positional_for_grid(int gh, int gw) const {
  const ad::Matrix& pos = w_.positional_embedding.value();
  const auto g0 = static_cast<int>(std::lround(std::sqrt(double(pos.rows() - 1))));
  if (g0 == gh && g0 == gw) return w_.positional_embedding;

  // Resample the patch positions as a g0 x g0 grid per channel.
  const Eigen::MatrixXd ry = bilinear_axis_operator(g0, gh);
  const Eigen::MatrixXd rx = bilinear_axis_operator(g0, gw);
  ad::Matrix out(1 + gh * gw, pos.cols());
  out.row(0) = pos.row(0);
  Eigen::MatrixXd plane(g0, g0);
  for (Eigen::Index c = 0; c < pos.cols(); ++c) {
    for (int j = 0; j < g0; ++j) {
      for (int k = 0; k < g0; ++k) plane(j, k) = pos(1 + j * g0 + k, c);
    }
    const Eigen::MatrixXd r = ry * plane * rx.transpose();
    for (int j = 0; j < gh; ++j) {
      for (int k = 0; k < gw; ++k) out(1 + j * gw + k, c) = r(j, k);
    }
  }
  return ad::constant(std::move(out));
}

VisualFeatures VisionTower::encode(const Image& image, const RunConfig& cfg,
                                   bool with_patches) const {
  const auto [res_h, res_w] = cfg.image_resolution;
  if (image.height != res_h || image.width != res_w || image.channels != 3) {
    throw Error(ErrorKind::kShapeMismatch,
                "encode_image: image is " + std::to_string(image.height) + "x" +
                    std::to_string(image.width) + ", expected " +
                    std::to_string(res_h) + "x" + std::to_string(res_w));
  }
  const int p = w_.patch_size;
  if (res_h % p != 0 || res_w % p != 0) {
    throw Error(ErrorKind::kInvariant,
                "encode_image: resolution not divisible by patch size");
  }
  for (double v : image.data) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kNumerical, "encode_image: non-finite pixel");
    }
  }
  const int gh = res_h / p;
  const int gw = res_w / p;
  if (cfg.patch_tap_layers.back() > layers()) {
    throw Error(ErrorKind::kInvariant, "encode_image: tap layer exceeds depth");
  }

  ad::Matrix patches(gh * gw, 3 * p * p);
  for (int j = 0; j < gh; ++j) {
    for (int k = 0; k < gw; ++k) {
      ad::Index col = 0;
      for (int c = 0; c < 3; ++c) {
        for (int dy = 0; dy < p; ++dy) {
          for (int dx = 0; dx < p; ++dx) {
            patches(j * gw + k, col++) = image.at(j * p + dy, k * p + dx, c);
          }
        }
      }
    }
  }
  ad::Var tokens = ad::matmul(ad::constant(std::move(patches)), w_.patch_embedding);
  const ad::Var parts[] = {w_.class_embedding, tokens};
  ad::Var x = ad::add(ad::concat_rows(parts), positional_for_grid(gh, gw));
  x = apply_layer_norm(w_.ln_pre, x);

  auto project_rows = [&](const ad::Var& rows) {
    return ad::l2_normalize_rows(
        ad::matmul(apply_layer_norm(w_.ln_post, rows), w_.projection));
  };

  VisualFeatures out;
  out.grid_height = gh;
  out.grid_width = gw;
  const int last_tap = cfg.patch_tap_layers.back();
  std::size_t next_tap = 0;
  ad::Var xv;  // V-V stream, valid from the branch point on
  for (int layer = 1; layer <= layers(); ++layer) {
    const auto& block = w_.blocks[layer - 1];
    if (with_patches && layer <= last_tap && layer >= cfg.vv_start_depth) {
      xv = transformer_block(block, xv.valid() ? xv : x, w_.heads, false,
                             w_.activation, AttentionMode::kValueValue);
    }
    x = transformer_block(block, x, w_.heads, false, w_.activation,
                          AttentionMode::kQueryKeyValue);
    if (with_patches && next_tap < cfg.patch_tap_layers.size() &&
        cfg.patch_tap_layers[next_tap] == layer) {
      const ad::Var& src = layer >= cfg.vv_start_depth ? xv : x;
      out.patch_grids.push_back(project_rows(ad::rows(src, 1, gh * gw)).value());
      ++next_tap;
    }
  }
  out.global_embedding = project_rows(ad::rows(x, 0, 1)).value().row(0).transpose();
  return out;
}

std::uint64_t VisionTower::checksum() const {
  Checksum c;
  c.add(w_.patch_embedding.value());
  c.add(w_.class_embedding.value());
  c.add(w_.positional_embedding.value());
  c.add(w_.ln_pre);
  for (const auto& b : w_.blocks) c.add(b);
  c.add(w_.ln_post);
  c.add(w_.projection.value());
  return c.value();
}

VisionTower VisionTower::from_archive(const ArrayArchive& a) {
  VisionTowerWeights w;
  w.heads = static_cast<int>(a.get("vision.heads").values.at(0));
  w.activation = a.contains_text("vision.activation")
                     ? parse_activation(a.text("vision.activation"))
                     : Activation::kQuickGelu;
  const NamedArray& conv = a.get("vision.conv1.weight");
  if (conv.shape.size() != 4 || conv.shape[1] != 3 || conv.shape[2] != conv.shape[3]) {
    throw Error(ErrorKind::kShapeMismatch,
                "archive: vision.conv1.weight must be [w, 3, p, p]");
  }
  w.patch_size = static_cast<int>(conv.shape[2]);
  const auto width = conv.shape[0];
  const auto fan_in = 3 * conv.shape[2] * conv.shape[3];
  // [w, 3, p, p] row-major is [w, 3*p*p]; we need its transpose.
  w.patch_embedding = ad::constant(
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>(conv.values.data(), width,
                                                       fan_in)
          .transpose());
  w.class_embedding = ad::constant(a.matrix("vision.class_embedding"));
  w.positional_embedding = ad::constant(a.matrix("vision.positional_embedding"));
  w.ln_pre = read_layer_norm(a, "vision.ln_pre.");
  for (int i = 0;
       a.contains("vision.layers." + std::to_string(i) + ".ln_1.weight"); ++i) {
    w.blocks.push_back(read_block(a, "vision.layers." + std::to_string(i) + "."));
  }
  w.ln_post = read_layer_norm(a, "vision.ln_post.");
  w.projection = ad::constant(a.matrix("vision.proj"));
  if (a.contains("vision.image_mean")) {
    const auto& m = a.get("vision.image_mean").values;
    const auto& s = a.get("vision.image_std").values;
    if (m.size() != 3 || s.size() != 3) {
      throw Error(ErrorKind::kShapeMismatch, "archive: image stats must have 3 entries");
    }
    for (int c = 0; c < 3; ++c) {
      w.stats.mean[c] = m[c];
      w.stats.std[c] = s[c];
    }
  }
  return VisionTower(std::move(w));
}

void VisionTower::to_archive(ArrayArchive& a) const {
  a.put("vision.heads", NamedArray{{}, {static_cast<double>(w_.heads)}});
  a.put_text("vision.activation", to_string(w_.activation));
  const auto width = this->width();
  const int p = w_.patch_size;
  NamedArray conv;
  conv.shape = {width, 3, p, p};
  conv.values.resize(static_cast<std::size_t>(width * 3 * p * p));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      conv.values.data(), width, 3 * p * p) = w_.patch_embedding.value().transpose();
  a.put("vision.conv1.weight", std::move(conv));
  a.put_matrix("vision.class_embedding", w_.class_embedding.value());
  a.put_matrix("vision.positional_embedding", w_.positional_embedding.value());
  write_layer_norm(a, "vision.ln_pre.", w_.ln_pre);
  for (std::size_t i = 0; i < w_.blocks.size(); ++i) {
    write_block(a, "vision.layers." + std::to_string(i) + ".", w_.blocks[i]);
  }
  write_layer_norm(a, "vision.ln_post.", w_.ln_post);
  a.put_matrix("vision.proj", w_.projection.value());
  a.put("vision.image_mean", NamedArray{{3}, {w_.stats.mean.begin(), w_.stats.mean.end()}});
  a.put("vision.image_std", NamedArray{{3}, {w_.stats.std.begin(), w_.stats.std.end()}});
}

VisualFeatures encode_image(const VisionTower& tower, const Image& image,
                            const RunConfig& cfg) {
  return tower.encode(image, cfg, true);
}

}  // namespace glocal
