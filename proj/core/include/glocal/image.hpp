#pragma once

#include <Eigen/Dense>

#include <array>
#include <filesystem>
#include <vector>

namespace glocal {

// Interleaved H x W x C image of doubles.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c = 3, double fill = 0.0)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

struct ChannelStats {
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};
};

// Bilinear resampling with half-pixel centers (corner alignment off), the
// convention of torch.nn.functional.interpolate(align_corners=False).
Eigen::MatrixXd resize_bilinear(const Eigen::MatrixXd& src, int height,
                                int width);
Image resize_bilinear(const Image& src, int height, int width);

// Interpolation weights of resize_bilinear along one axis: out = R * in.
Eigen::MatrixXd bilinear_axis_operator(int src_size, int dst_size);

// Nearest neighbour on pixel centers: src = floor((dst + 0.5) * src/dst).
Eigen::MatrixXd resize_nearest(const Eigen::MatrixXd& src, int height,
                               int width);

// 8-bit RGB decode/encode. Decoded values are in [0, 1].
Image read_rgb(const std::filesystem::path& path);
Eigen::MatrixXd read_gray(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const Image& rgb01);

// (x - mean) / std per channel.
Image normalize_channels(const Image& rgb01, const ChannelStats& stats);

// Min-max normalized JET heatmap of `map`, as an RGB image in [0, 1].
Image heatmap(const Eigen::MatrixXd& map);
// Side-by-side panels of equal height.
Image hconcat(const std::vector<Image>& panels);
Image gray_to_rgb(const Eigen::MatrixXd& gray01);

}  // namespace glocal
