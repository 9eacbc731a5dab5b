#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "glocal/data_io.hpp"
#include "glocal/error.hpp"
#include "glocal/image.hpp"
#include "temp_dir.hpp"

using namespace glocal;
namespace fs = std::filesystem;

namespace {

void write_gray(const fs::path& path, const Eigen::MatrixXd& m) {
  fs::create_directories(path.parent_path());
  write_rgb(path, gray_to_rgb(m));
}

void write_color(const fs::path& path, int size, double value) {
  fs::create_directories(path.parent_path());
  write_rgb(path, Image(size, size, 3, value));
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::kIo;
}

bool binary(const Eigen::MatrixXd& m) {
  return ((m.array() == 0.0) || (m.array() == 1.0)).all();
}

}  // namespace

TEST_CASE("mvtec layout with one good and one defect image") {
  TempDir dir;
  const fs::path root = dir.path();
  write_color(root / "bottle/test/good/000.png", 16, 0.5);
  write_color(root / "bottle/test/crack/000.png", 16, 0.2);
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(16, 16);
  mask.block(4, 4, 3, 3).setOnes();
  write_gray(root / "bottle/ground_truth/crack/000_mask.png", mask);

  const DatasetIndex index = index_dataset(root, DatasetLayout::kMvtec);
  REQUIRE(index.entries.size() == 2);
  CHECK(index.classes == std::vector<std::string>{"bottle"});
  int labels = 0;
  for (const auto& e : index.entries) labels += e.label;
  CHECK(labels == 1);

  for (const auto& e : index.entries) {
    const Sample s = load_sample(e, {8, 8});
    CHECK(s.image.height == 8);
    CHECK(binary(s.mask));
    if (e.label == 0) {
      CHECK(s.mask.isZero(0.0));
      CHECK(e.defect == "good");
    } else {
      CHECK(s.mask.sum() > 0.0);
      CHECK(e.defect == "crack");
    }
  }

  // A second scan yields the same ordering.
  const DatasetIndex again = index_dataset(root, DatasetLayout::kMvtec);
  for (std::size_t i = 0; i < index.entries.size(); ++i) {
    CHECK(std::get<fs::path>(again.entries[i].image) == std::get<fs::path>(index.entries[i].image));
  }
}

TEST_CASE("index errors") {
  TempDir dir;
  CHECK(kind_of([&] { index_dataset(dir.path(), DatasetLayout::kMvtec); }) ==
        ErrorKind::kEmptyIndex);
  CHECK(kind_of([&] { index_dataset(dir.path() / "nope", DatasetLayout::kMvtec); }) ==
        ErrorKind::kIo);

  write_color(dir.path() / "cable/test/cut/001.png", 8, 0.3);
  CHECK(kind_of([&] { index_dataset(dir.path(), DatasetLayout::kMvtec); }) == ErrorKind::kIo);
}

TEST_CASE("flat-jsonl layout") {
  TempDir dir;
  write_color(dir.path() / "a.png", 8, 0.4);
  write_color(dir.path() / "b.png", 8, 0.6);
  write_gray(dir.path() / "b_mask.png", Eigen::MatrixXd::Ones(8, 8));
  std::ofstream(dir.path() / "index.jsonl")
      << R"({"image": "a.png", "mask": null, "label": 0, "class": "x"})" << "\n"
      << R"({"image": "b.png", "mask": "b_mask.png", "label": 1, "class": "x"})" << "\n";
  const DatasetIndex index = index_dataset(dir.path(), DatasetLayout::kFlatJsonl);
  REQUIRE(index.entries.size() == 2);
  CHECK(index.entries[1].mask.has_value());
  const Sample s = load_sample(index.entries[1], {5, 7});
  CHECK(s.mask.rows() == 5);
  CHECK(s.mask.cols() == 7);
  CHECK((s.mask.array() == 1.0).all());

  // The file itself works as the root too.
  CHECK(index_dataset(dir.path() / "index.jsonl", DatasetLayout::kFlatJsonl).entries.size() == 2);

  std::ofstream(dir.path() / "bad.jsonl") << R"({"image": "a.png", "label": 2, "class": "x"})" << "\n";
  CHECK(kind_of([&] { index_dataset(dir.path() / "bad.jsonl", DatasetLayout::kFlatJsonl); }) ==
        ErrorKind::kParse);
  std::ofstream(dir.path() / "missing.jsonl")
      << R"({"image": "b.png", "mask": "gone.png", "label": 1, "class": "x"})" << "\n";
  CHECK(kind_of([&] { index_dataset(dir.path() / "missing.jsonl", DatasetLayout::kFlatJsonl); }) ==
        ErrorKind::kIo);
  std::ofstream(dir.path() / "broken.jsonl") << "{oops\n";
  CHECK(kind_of([&] { index_dataset(dir.path() / "broken.jsonl", DatasetLayout::kFlatJsonl); }) ==
        ErrorKind::kParse);
  CHECK(kind_of([&] { parse_layout("coco"); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("nearest-neighbour mask resize keeps a square") {
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(100, 100);
  mask.block(20, 30, 10, 10).setOnes();
  const Eigen::MatrixXd small = resize_nearest(mask, 50, 50);
  // dst pixel d reads src floor((d + 0.5) * 2) = 2d + 1.
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(50, 50);
  for (int y = 0; y < 50; ++y) {
    for (int x = 0; x < 50; ++x) expected(y, x) = mask(2 * y + 1, 2 * x + 1);
  }
  CHECK(small == expected);
  CHECK(small.sum() == 25.0);
  CHECK(small.block(10, 15, 5, 5).isOnes(0.0));
}

TEST_CASE("loading through disk") {
  TempDir dir;
  Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(100, 100);
  mask.block(20, 30, 10, 10).setOnes();
  write_gray(dir.path() / "m.png", mask);
  write_color(dir.path() / "i.png", 100, 1.0);
  SampleEntry e;
  e.image = dir.path() / "i.png";
  e.mask = dir.path() / "m.png";
  e.label = 1;
  const Sample s = load_sample(e, {50, 50});
  CHECK(s.mask.sum() == 25.0);
  CHECK(binary(s.mask));
  // White pixels normalize to (1 - 0.5) / 0.5.
  CHECK(s.image.at(7, 9, 2) == doctest::Approx(1.0));

  SampleEntry all_white = e;
  write_gray(dir.path() / "w.png", Eigen::MatrixXd::Ones(13, 13));
  all_white.mask = dir.path() / "w.png";
  for (int r : {3, 13, 40}) CHECK(load_sample(all_white, {r, r}).mask.isOnes(0.0));

  SampleEntry normal = e;
  normal.mask.reset();
  normal.label = 0;
  CHECK(load_sample(normal, {50, 50}).mask.isZero(0.0));

  SampleEntry unreadable = normal;
  std::ofstream(dir.path() / "junk.png") << "not a png";
  unreadable.image = dir.path() / "junk.png";
  CHECK_THROWS_AS(load_sample(unreadable, {8, 8}), Error);
}

TEST_CASE("synthetic blobs") {
  const DatasetIndex a = synth_blobs(6, 10, 32, 0);
  const DatasetIndex b = synth_blobs(6, 10, 32, 0);
  REQUIRE(a.entries.size() == 16);
  CHECK(a.source == DatasetSource::kSynthetic);
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    const auto& ia = *std::get<std::shared_ptr<const Image>>(a.entries[i].image);
    const auto& ib = *std::get<std::shared_ptr<const Image>>(b.entries[i].image);
    CHECK(ia == ib);
  }
  const DatasetIndex other = synth_blobs(6, 10, 32, 1);
  CHECK_FALSE(*std::get<std::shared_ptr<const Image>>(a.entries[0].image) ==
              *std::get<std::shared_ptr<const Image>>(other.entries[0].image));

  const DatasetIndex normals = synth_blobs(5, 0, 16, 3);
  for (const auto& e : normals.entries) {
    CHECK(e.label == 0);
    CHECK(load_sample(e, {16, 16}).mask.isZero(0.0));
  }
}

TEST_CASE("synthetic masks are exactly the blob pixels") {
  // Texture values live in [0.2, 0.8]; blob pixels carry saturated colours
  // (every channel 0 or 1). So the mask is recoverable from the pixels alone.
  const DatasetIndex index = synth_blobs(0, 40, 32, 5);
  for (const auto& e : index.entries) {
    const Image& img = *std::get<std::shared_ptr<const Image>>(e.image);
    const Eigen::MatrixXd& mask = *std::get<std::shared_ptr<const Eigen::MatrixXd>>(*e.mask);
    CHECK(mask.sum() >= 1.0);
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        bool saturated = true;
        for (int c = 0; c < 3; ++c) {
          const double v = img.at(y, x, c);
          saturated = saturated && (v == 0.0 || v == 1.0);
        }
        CHECK(saturated == (mask(y, x) == 1.0));
      }
    }
  }
}

TEST_CASE("synthetic dataset round trip through disk") {
  TempDir dir;
  const DatasetIndex mem = synth_blobs(3, 3, 32, 2);
  write_mvtec(mem, dir.path());
  const DatasetIndex disk = index_dataset(dir.path(), DatasetLayout::kMvtec);
  REQUIRE(disk.entries.size() == 6);
  int anomalous = 0;
  for (const auto& e : disk.entries) anomalous += e.label;
  CHECK(anomalous == 3);
  for (const auto& e : disk.entries) {
    const Sample s = load_sample(e, {32, 32});
    CHECK(binary(s.mask));
    CHECK((s.mask.sum() > 0) == (e.label == 1));
  }
}
