#include "glocal/data_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "glocal/error.hpp"
#include "glocal/runtime_config.hpp"

namespace glocal {
namespace fs = std::filesystem;
namespace {

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> exts = {".png", ".jpg", ".jpeg",
                                             ".bmp", ".tif", ".tiff"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return fs::is_regular_file(p) && exts.contains(ext);
}

void require_readable(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "unreadable image " + p.string());
}

std::vector<fs::path> sorted_children(const fs::path& dir, bool dirs) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (dirs ? e.is_directory() : is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

DatasetIndex index_mvtec(const fs::path& root) {
  DatasetIndex index;
  for (const auto& class_dir : sorted_children(root, true)) {
    const fs::path test_dir = class_dir / "test";
    if (!fs::is_directory(test_dir)) continue;
    const std::string class_name = class_dir.filename().string();
    bool any = false;
    for (const auto& defect_dir : sorted_children(test_dir, true)) {
      const std::string defect = defect_dir.filename().string();
      for (const auto& img : sorted_children(defect_dir, false)) {
        require_readable(img);
        SampleEntry e;
        e.image = img;
        e.class_name = class_name;
        e.defect = defect;
        e.label = defect == "good" ? 0 : 1;
        if (e.label == 1) {
          const fs::path gt = class_dir / "ground_truth" / defect;
          fs::path mask = gt / (img.stem().string() + "_mask.png");
          if (!fs::exists(mask)) mask = gt / (img.stem().string() + ".png");
          if (!fs::exists(mask)) {
            throw Error(ErrorKind::kIo, "mask referenced but missing for " +
                                            img.string() + " (expected " +
                                            (gt / (img.stem().string() + "_mask.png"))
                                                .string() +
                                            ")");
          }
          e.mask = mask;
        }
        index.entries.push_back(std::move(e));
        any = true;
      }
    }
    if (any) index.classes.push_back(class_name);
  }
  return index;
}

DatasetIndex index_jsonl(const fs::path& root) {
  const fs::path file = fs::is_directory(root) ? root / "index.jsonl" : root;
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + file.string());
  const fs::path base = file.parent_path();
  DatasetIndex index;
  std::set<std::string> classes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
      SampleEntry e;
      e.image = base / rec.at("image").get<std::string>();
      e.label = rec.at("label").get<int>();
      e.class_name = rec.at("class").get<std::string>();
      if (e.label != 0 && e.label != 1) {
        throw Error(ErrorKind::kParse, "label must be 0 or 1");
      }
      e.defect = e.label == 0 ? "good" : "anomaly";
      if (rec.contains("mask") && !rec.at("mask").is_null()) {
        const fs::path mask = base / rec.at("mask").get<std::string>();
        if (!fs::exists(mask)) {
          throw Error(ErrorKind::kIo, "mask referenced but missing: " + mask.string());
        }
        e.mask = mask;
      }
      require_readable(std::get<fs::path>(e.image));
      classes.insert(e.class_name);
      index.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::kParse, file.string() + ":" + std::to_string(line_no) +
                                         ": " + ex.what());
    }
  }
  index.classes.assign(classes.begin(), classes.end());
  std::stable_sort(index.entries.begin(), index.entries.end(),
                   [](const SampleEntry& a, const SampleEntry& b) {
                     return a.class_name < b.class_name;
                   });
  return index;
}

}  // namespace

DatasetLayout parse_layout(const std::string& text) {
  if (text == "mvtec") return DatasetLayout::kMvtec;
  if (text == "flat-jsonl") return DatasetLayout::kFlatJsonl;
  throw Error(ErrorKind::kInvalidArgument, "unknown layout '" + text + "'");
}

DatasetIndex index_dataset(const fs::path& root, DatasetLayout layout) {
  if (!fs::exists(root)) {
    throw Error(ErrorKind::kIo, "dataset root does not exist: " + root.string());
  }
  DatasetIndex index =
      layout == DatasetLayout::kMvtec ? index_mvtec(root) : index_jsonl(root);
  if (index.entries.empty()) {
    throw Error(ErrorKind::kEmptyIndex, "no samples found under " + root.string());
  }
  index.source = DatasetSource::kDisk;
  return index;
}

Sample load_sample(const SampleEntry& entry, std::pair<int, int> resolution,
                   const ChannelStats& stats) {
  const auto [h, w] = resolution;
  Image rgb;
  if (const auto* path = std::get_if<fs::path>(&entry.image)) {
    rgb = read_rgb(*path);
  } else {
    rgb = *std::get<std::shared_ptr<const Image>>(entry.image);
  }
  Sample s;
  s.label = entry.label;
  s.image = normalize_channels(resize_bilinear(rgb, h, w), stats);
  s.mask = Eigen::MatrixXd::Zero(h, w);
  s.has_mask = entry.label == 0 || entry.mask.has_value();
  if (entry.label == 1 && entry.mask) {
    Eigen::MatrixXd raw;
    if (const auto* path = std::get_if<fs::path>(&*entry.mask)) {
      raw = read_gray(*path);
    } else {
      raw = *std::get<std::shared_ptr<const Eigen::MatrixXd>>(*entry.mask);
    }
    if (!raw.allFinite() || raw.minCoeff() < 0.0 || raw.maxCoeff() > 1.0) {
      throw Error(ErrorKind::kParse, "mask values outside [0, 1]");
    }
    s.mask = (resize_nearest(raw, h, w).array() >= 0.5).cast<double>().matrix();
  }
  return s;
}

DatasetIndex synth_blobs(int n_normal, int n_anomalous, int resolution,
                         std::uint64_t seed) {
  if (n_normal < 0 || n_anomalous < 0 || resolution <= 0) {
    throw Error(ErrorKind::kInvalidArgument, "synth_blobs: bad arguments");
  }
  Rng rng = make_rng(seed, RngStream::kSynthetic);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r = resolution;
  static constexpr std::array<std::array<double, 3>, 8> kColors = {{
      {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0},
      {1, 0, 1}, {0, 1, 1}, {0, 0, 0}, {1, 1, 1},
  }};

  auto texture = [&]() {
    Image img(resolution, resolution, 3);
    for (int c = 0; c < 3; ++c) {
      const double base = 0.4 + 0.2 * unit(rng);
      struct Wave { double fx, fy, phase; };
      std::array<Wave, 3> waves;
      for (auto& wv : waves) {
        const double freq = 1.0 + 2.0 * unit(rng);
        const double angle = 2.0 * M_PI * unit(rng);
        wv = {freq * std::cos(angle), freq * std::sin(angle), 2.0 * M_PI * unit(rng)};
      }
      for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
          double v = base;
          for (const auto& wv : waves) {
            v += 0.05 * std::sin(2.0 * M_PI * (wv.fx * x + wv.fy * y) / r + wv.phase);
          }
          img.at(y, x, c) = std::clamp(v, 0.2, 0.8);
        }
      }
    }
    return img;
  };

  DatasetIndex index;
  index.source = DatasetSource::kSynthetic;
  index.classes = {"blobs"};
  for (int i = 0; i < n_normal; ++i) {
    SampleEntry e;
    e.image = std::make_shared<const Image>(texture());
    e.label = 0;
    e.class_name = "blobs";
    index.entries.push_back(std::move(e));
  }
  for (int i = 0; i < n_anomalous; ++i) {
    Image img = texture();
    Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(resolution, resolution);
    const int blobs = 1 + static_cast<int>(unit(rng) * 3.0) % 3;
    for (int b = 0; b < blobs; ++b) {
      const double cx = std::floor(r * (0.15 + 0.7 * unit(rng))) + 0.5;
      const double cy = std::floor(r * (0.15 + 0.7 * unit(rng))) + 0.5;
      const double ax = r * (0.10 + 0.12 * unit(rng));
      const double ay = r * (0.10 + 0.12 * unit(rng));
      const double theta = M_PI * unit(rng);
      const auto& color = kColors[static_cast<std::size_t>(unit(rng) * 8.0) % 8];
      const double ct = std::cos(theta);
      const double st = std::sin(theta);
      for (int y = 0; y < resolution; ++y) {
        for (int x = 0; x < resolution; ++x) {
          const double dx = x + 0.5 - cx;
          const double dy = y + 0.5 - cy;
          const double u = (dx * ct + dy * st) / ax;
          const double v = (-dx * st + dy * ct) / ay;
          if (u * u + v * v <= 1.0) {
            mask(y, x) = 1.0;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
          }
        }
      }
    }
    SampleEntry e;
    e.image = std::make_shared<const Image>(std::move(img));
    e.mask = std::make_shared<const Eigen::MatrixXd>(std::move(mask));
    e.label = 1;
    e.class_name = "blobs";
    e.defect = "blob";
    index.entries.push_back(std::move(e));
  }
  return index;
}

void write_mvtec(const DatasetIndex& index, const fs::path& root) {
  std::map<std::string, int> counters;
  for (const auto& e : index.entries) {
    const auto* img = std::get_if<std::shared_ptr<const Image>>(&e.image);
    if (img == nullptr) {
      throw Error(ErrorKind::kInvalidArgument, "write_mvtec: entry is not in memory");
    }
    const std::string key = e.class_name + "/" + e.defect;
    std::ostringstream stem;
    stem << std::setw(3) << std::setfill('0') << counters[key]++;
    const fs::path dir = root / e.class_name / "test" / e.defect;
    fs::create_directories(dir);
    write_rgb(dir / (stem.str() + ".png"), **img);
    if (e.label == 1 && e.mask) {
      const auto& mask = *std::get<std::shared_ptr<const Eigen::MatrixXd>>(*e.mask);
      const fs::path gt = root / e.class_name / "ground_truth" / e.defect;
      fs::create_directories(gt);
      write_rgb(gt / (stem.str() + "_mask.png"), gray_to_rgb(mask));
    }
  }
}

}  // namespace glocal
