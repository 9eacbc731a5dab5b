#pragma once

// Named-array archive stored as a NumPy .npz file, so that checkpoints and
// backbone weights can be produced or inspected with `numpy.load`.
//
// Numeric arrays are written as little-endian float64 ('<f8'); text payloads
// (the config copy, vocabularies) are written as byte arrays ('|u1'). Reading
// accepts float32/float64/int32/int64/uint8 members, stored or deflated.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace glocal {

struct NamedArray {
  std::vector<std::int64_t> shape;
  std::vector<double> values;  // row-major

  std::int64_t size() const;
};

class ArrayArchive {
 public:
  void put(const std::string& key, NamedArray array);
  void put_matrix(const std::string& key, const Eigen::MatrixXd& m);
  void put_text(const std::string& key, const std::string& text);

  bool contains(const std::string& key) const;
  bool contains_text(const std::string& key) const;
  const NamedArray& get(const std::string& key) const;
  // Interprets a rank-1 or rank-2 array as a matrix (rank-1 -> 1 x n).
  Eigen::MatrixXd matrix(const std::string& key) const;
  const std::string& text(const std::string& key) const;

  const std::map<std::string, NamedArray>& arrays() const { return arrays_; }

  void save(const std::filesystem::path& path) const;
  static ArrayArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, NamedArray> arrays_;
  std::map<std::string, std::string> texts_;
};

}  // namespace glocal
