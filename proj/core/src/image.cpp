#include "glocal/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

#include "glocal/error.hpp"

namespace glocal {

Eigen::MatrixXd bilinear_axis_operator(int src_size, int dst_size) {
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(dst_size, src_size);
  const double scale = static_cast<double>(src_size) / dst_size;
  for (int i = 0; i < dst_size; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    if (s < 0.0) s = 0.0;
    int i0 = static_cast<int>(std::floor(s));
    if (i0 > src_size - 1) i0 = src_size - 1;
    const int i1 = std::min(i0 + 1, src_size - 1);
    const double frac = s - i0;
    r(i, i0) += 1.0 - frac;
    r(i, i1) += frac;
  }
  return r;
}

Eigen::MatrixXd resize_bilinear(const Eigen::MatrixXd& src, int height,
                                int width) {
  if (src.rows() == height && src.cols() == width) return src;
  const Eigen::MatrixXd ry =
      bilinear_axis_operator(static_cast<int>(src.rows()), height);
  const Eigen::MatrixXd rx =
      bilinear_axis_operator(static_cast<int>(src.cols()), width);
  return ry * src * rx.transpose();
}

Image resize_bilinear(const Image& src, int height, int width) {
  if (src.height == height && src.width == width) return src;
  Image out(height, width, src.channels);
  for (int c = 0; c < src.channels; ++c) {
    Eigen::MatrixXd plane(src.height, src.width);
    for (int y = 0; y < src.height; ++y) {
      for (int x = 0; x < src.width; ++x) plane(y, x) = src.at(y, x, c);
    }
    const Eigen::MatrixXd r = resize_bilinear(plane, height, width);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) out.at(y, x, c) = r(y, x);
    }
  }
  return out;
}

Eigen::MatrixXd resize_nearest(const Eigen::MatrixXd& src, int height,
                               int width) {
  Eigen::MatrixXd out(height, width);
  const double sy = static_cast<double>(src.rows()) / height;
  const double sx = static_cast<double>(src.cols()) / width;
  for (int y = 0; y < height; ++y) {
    const auto yy = std::min<Eigen::Index>(
        static_cast<Eigen::Index>(std::floor((y + 0.5) * sy)), src.rows() - 1);
    for (int x = 0; x < width; ++x) {
      const auto xx = std::min<Eigen::Index>(
          static_cast<Eigen::Index>(std::floor((x + 0.5) * sx)),
          src.cols() - 1);
      out(y, x) = src(yy, xx);
    }
  }
  return out;
}

Image read_rgb(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw Error(ErrorKind::kIo, "cannot decode image " + path.string());
  }
  Image img(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x][2 - c] / 255.0;
    }
  }
  return img;
}

Eigen::MatrixXd read_gray(const std::filesystem::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) {
    throw Error(ErrorKind::kIo, "cannot decode image " + path.string());
  }
  Eigen::MatrixXd m(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y) {
    const auto* row = gray.ptr<unsigned char>(y);
    for (int x = 0; x < gray.cols; ++x) m(y, x) = row[x] / 255.0;
  }
  return m;
}

void write_rgb(const std::filesystem::path& path, const Image& rgb01) {
  cv::Mat bgr(rgb01.height, rgb01.width, CV_8UC3);
  for (int y = 0; y < rgb01.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < rgb01.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(rgb01.at(y, x, c), 0.0, 1.0);
        row[x][2 - c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  if (!cv::imwrite(path.string(), bgr)) {
    throw Error(ErrorKind::kIo, "cannot write image " + path.string());
  }
}

Image normalize_channels(const Image& rgb01, const ChannelStats& stats) {
  Image out = rgb01;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = (out.at(y, x, c) - stats.mean[c]) / stats.std[c];
      }
    }
  }
  return out;
}

Image heatmap(const Eigen::MatrixXd& map) {
  const double lo = map.minCoeff();
  const double hi = map.maxCoeff();
  const double range = hi - lo;
  cv::Mat gray(static_cast<int>(map.rows()), static_cast<int>(map.cols()),
               CV_8UC1);
  for (int y = 0; y < gray.rows; ++y) {
    for (int x = 0; x < gray.cols; ++x) {
      const double v = range > 0.0 ? (map(y, x) - lo) / range : 0.0;
      gray.at<unsigned char>(y, x) =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
  }
  cv::Mat color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  Image out(color.rows, color.cols, 3);
  for (int y = 0; y < color.rows; ++y) {
    for (int x = 0; x < color.cols; ++x) {
      const auto px = color.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = px[2 - c] / 255.0;
    }
  }
  return out;
}

Image hconcat(const std::vector<Image>& panels) {
  if (panels.empty()) return {};
  const int h = panels.front().height;
  int w = 0;
  for (const auto& p : panels) {
    if (p.height != h || p.channels != 3) {
      throw Error(ErrorKind::kShapeMismatch, "hconcat: panel heights differ");
    }
    w += p.width;
  }
  Image out(h, w, 3);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < p.width; ++x) {
        for (int c = 0; c < 3; ++c) out.at(y, x0 + x, c) = p.at(y, x, c);
      }
    }
    x0 += p.width;
  }
  return out;
}

Image gray_to_rgb(const Eigen::MatrixXd& gray01) {
  Image out(static_cast<int>(gray01.rows()), static_cast<int>(gray01.cols()), 3);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = gray01(y, x);
    }
  }
  return out;
}

}  // namespace glocal
