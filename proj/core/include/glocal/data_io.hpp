#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "glocal/image.hpp"

namespace glocal {

enum class DatasetLayout { kMvtec, kFlatJsonl };
enum class DatasetSource { kDisk, kSynthetic };

DatasetLayout parse_layout(const std::string& text);

// An image either on disk or held in memory (RGB in [0, 1]).
using ImageRef = std::variant<std::filesystem::path, std::shared_ptr<const Image>>;
// A mask either on disk or held in memory ({0, 1}).
using MaskRef =
    std::variant<std::filesystem::path, std::shared_ptr<const Eigen::MatrixXd>>;

struct SampleEntry {
  ImageRef image;
  std::optional<MaskRef> mask;
  int label = 0;  // 0 normal, 1 anomalous
  std::string class_name;
  std::string defect = "good";
};

struct DatasetIndex {
  std::vector<SampleEntry> entries;
  std::vector<std::string> classes;
  DatasetSource source = DatasetSource::kDisk;
};

struct Sample {
  Image image;           // channel-normalized
  Eigen::MatrixXd mask;  // {0, 1}
  int label = 0;
  bool has_mask = true;  // false for anomalous entries without a mask
};

// mvtec: <root>/<class>/test/<defect>/<img>, masks at
// <root>/<class>/ground_truth/<defect>/<stem>_mask.png.
// flat-jsonl: <root>/index.jsonl (or <root> itself when it is a file) with
// {"image", "mask", "label", "class"} per line; paths relative to the file.
DatasetIndex index_dataset(const std::filesystem::path& root, DatasetLayout layout);

// Bilinear image resize then per-channel normalization; nearest-neighbour mask
// resize thresholded at 0.5. Label-0 entries always get a zero mask.
Sample load_sample(const SampleEntry& entry, std::pair<int, int> resolution,
                   const ChannelStats& stats = {});

// Normal images are smooth random textures; anomalous ones add 1-3 saturated
// ellipses whose union is the mask. Pure function of its arguments.
DatasetIndex synth_blobs(int n_normal, int n_anomalous, int resolution,
                         std::uint64_t seed);

// Writes an in-memory dataset to disk in the mvtec layout.
void write_mvtec(const DatasetIndex& index, const std::filesystem::path& root);

}  // namespace glocal
