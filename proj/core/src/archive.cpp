#include "glocal/archive.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include "glocal/error.hpp"

namespace glocal {
namespace {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

constexpr std::uint32_t kLocalHeaderSig = 0x04034b50;
constexpr std::uint32_t kCentralSig = 0x02014b50;
constexpr std::uint32_t kEndSig = 0x06054b50;
constexpr std::uint32_t kZip64EndSig = 0x06064b50;
constexpr std::uint32_t kZip64LocatorSig = 0x07064b50;
constexpr std::uint32_t kMax32 = 0xffffffffu;

class ByteWriter {
 public:
  void u16(std::uint16_t v) { raw(&v, 2); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void str(const std::string& s) { raw(s.data(), s.size()); }
  std::string bytes;
};

template <typename T>
T read_le(const std::string& buf, std::size_t pos) {
  if (pos + sizeof(T) > buf.size()) {
    throw Error(ErrorKind::kParse, "archive: truncated zip structure");
  }
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  return v;
}

std::string shape_tuple(const std::vector<std::int64_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += std::to_string(shape[i]);
    s += (shape.size() == 1 || i + 1 < shape.size()) ? "," : "";
    if (i + 1 < shape.size()) s += " ";
  }
  return s + ")";
}

std::string npy_bytes(const std::string& descr,
                      const std::vector<std::int64_t>& shape,
                      const void* data, std::size_t nbytes) {
  std::string header = "{'descr': '" + descr +
                       "', 'fortran_order': False, 'shape': " +
                       shape_tuple(shape) + ", }";
  // Magic (6) + version (2) + header length (2) + header, padded to 64 bytes.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  ByteWriter w;
  w.raw("\x93NUMPY", 6);
  w.raw("\x01\x00", 2);
  w.u16(static_cast<std::uint16_t>(header.size()));
  w.str(header);
  w.raw(data, nbytes);
  return std::move(w.bytes);
}

struct ParsedNpy {
  NamedArray array;
  std::string bytes;  // populated for '|u1'
  bool is_bytes = false;
};

ParsedNpy parse_npy(const std::string& member, const std::string& name) {
  if (member.size() < 10 || member.compare(0, 6, "\x93NUMPY") != 0) {
    throw Error(ErrorKind::kParse, "archive: member '" + name +
                                       "' is not a .npy payload");
  }
  const auto major = static_cast<unsigned char>(member[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = read_le<std::uint16_t>(member, 8);
    offset = 10;
  } else {
    header_len = read_le<std::uint32_t>(member, 8);
    offset = 12;
  }
  const std::string header = member.substr(offset, header_len);
  offset += header_len;

  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  if (!std::regex_search(header, m, descr_re)) {
    throw Error(ErrorKind::kParse, "archive: '" + name + "' lacks descr");
  }
  const std::string descr = m[1];
  if (std::regex_search(header, m, fortran_re) && m[1] == "True") {
    throw Error(ErrorKind::kParse,
                "archive: '" + name + "' is Fortran-ordered; unsupported");
  }
  if (!std::regex_search(header, m, shape_re)) {
    throw Error(ErrorKind::kParse, "archive: '" + name + "' lacks shape");
  }
  ParsedNpy out;
  {
    std::stringstream ss(m[1].str());
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(std::remove_if(item.begin(), item.end(), ::isspace),
                 item.end());
      if (!item.empty()) out.array.shape.push_back(std::stoll(item));
    }
  }
  const auto count = static_cast<std::size_t>(out.array.size());
  const char* data = member.data() + offset;
  const std::size_t available = member.size() - offset;

  auto convert = [&]<typename T>(T) {
    if (available < count * sizeof(T)) {
      throw Error(ErrorKind::kParse, "archive: '" + name + "' is truncated");
    }
    out.array.values.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      T v;
      std::memcpy(&v, data + i * sizeof(T), sizeof(T));
      out.array.values[i] = static_cast<double>(v);
    }
  };
  if (descr == "<f8") {
    convert(double{});
  } else if (descr == "<f4") {
    convert(float{});
  } else if (descr == "<i8") {
    convert(std::int64_t{});
  } else if (descr == "<i4") {
    convert(std::int32_t{});
  } else if (descr == "|u1" || descr == "|i1" || descr == "|b1") {
    if (available < count) {
      throw Error(ErrorKind::kParse, "archive: '" + name + "' is truncated");
    }
    out.is_bytes = descr == "|u1";
    out.bytes.assign(data, count);
    convert(std::uint8_t{});
  } else {
    throw Error(ErrorKind::kParse,
                "archive: '" + name + "' has unsupported dtype " + descr);
  }
  return out;
}

std::string inflate_raw(const std::string& in, std::size_t out_size) {
  std::string out(out_size, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) {
    throw Error(ErrorKind::kParse, "archive: inflateInit failed");
  }
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) {
    throw Error(ErrorKind::kParse, "archive: corrupt deflate stream");
  }
  return out;
}

}  // namespace

std::int64_t NamedArray::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         std::multiplies<>());
}

void ArrayArchive::put(const std::string& key, NamedArray array) {
  if (array.size() != static_cast<std::int64_t>(array.values.size())) {
    throw Error(ErrorKind::kShapeMismatch,
                "archive: '" + key + "' shape does not match value count");
  }
  arrays_[key] = std::move(array);
}

void ArrayArchive::put_matrix(const std::string& key,
                              const Eigen::MatrixXd& m) {
  NamedArray a;
  a.shape = {m.rows(), m.cols()};
  a.values.resize(static_cast<std::size_t>(m.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                           Eigen::RowMajor>>(a.values.data(), m.rows(),
                                             m.cols()) = m;
  put(key, std::move(a));
}

void ArrayArchive::put_text(const std::string& key, const std::string& text) {
  texts_[key] = text;
}

bool ArrayArchive::contains(const std::string& key) const {
  return arrays_.contains(key);
}

bool ArrayArchive::contains_text(const std::string& key) const {
  return texts_.contains(key);
}

const NamedArray& ArrayArchive::get(const std::string& key) const {
  auto it = arrays_.find(key);
  if (it == arrays_.end()) {
    throw Error(ErrorKind::kMissingKey, "archive: missing key '" + key + "'");
  }
  return it->second;
}

Eigen::MatrixXd ArrayArchive::matrix(const std::string& key) const {
  const NamedArray& a = get(key);
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  if (a.shape.size() == 1) {
    r = 1;
    c = a.shape[0];
  } else if (a.shape.size() == 2) {
    r = a.shape[0];
    c = a.shape[1];
  } else {
    throw Error(ErrorKind::kShapeMismatch,
                "archive: '" + key + "' is not rank 1 or 2");
  }
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>(a.values.data(), r,
                                                          c);
}

const std::string& ArrayArchive::text(const std::string& key) const {
  auto it = texts_.find(key);
  if (it == texts_.end()) {
    throw Error(ErrorKind::kMissingKey, "archive: missing key '" + key + "'");
  }
  return it->second;
}

void ArrayArchive::save(const std::filesystem::path& path) const {
  struct Member {
    std::string name;
    std::string payload;
    std::uint32_t crc;
    std::uint64_t offset;
  };
  std::vector<Member> members;
  for (const auto& [key, array] : arrays_) {
    members.push_back({key + ".npy",
                       npy_bytes("<f8", array.shape, array.values.data(),
                                 array.values.size() * sizeof(double)),
                       0, 0});
  }
  for (const auto& [key, text] : texts_) {
    members.push_back(
        {key + ".npy",
         npy_bytes("|u1", {static_cast<std::int64_t>(text.size())},
                   text.data(), text.size()),
         0, 0});
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorKind::kIo, "archive: cannot write " + path.string());
  }
  std::uint64_t pos = 0;
  auto emit = [&](const std::string& bytes) {
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    pos += bytes.size();
  };

  // Every member carries a zip64 extra so sizes and offsets are never capped.
  for (auto& m : members) {
    m.crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(m.payload.data()),
              static_cast<uInt>(m.payload.size())));
    m.offset = pos;
    ByteWriter w;
    w.u32(kLocalHeaderSig);
    w.u16(45);  // version needed (zip64)
    w.u16(0);   // flags
    w.u16(0);   // stored
    w.u16(0);   // mod time
    w.u16(0x21);  // mod date 1980-01-01
    w.u32(m.crc);
    w.u32(kMax32);
    w.u32(kMax32);
    w.u16(static_cast<std::uint16_t>(m.name.size()));
    w.u16(20);
    w.str(m.name);
    w.u16(0x0001);
    w.u16(16);
    w.u64(m.payload.size());
    w.u64(m.payload.size());
    emit(w.bytes);
    emit(m.payload);
  }

  const std::uint64_t central_start = pos;
  for (const auto& m : members) {
    ByteWriter w;
    w.u32(kCentralSig);
    w.u16(45);  // made by
    w.u16(45);  // needed
    w.u16(0);
    w.u16(0);
    w.u16(0);
    w.u16(0x21);
    w.u32(m.crc);
    w.u32(kMax32);
    w.u32(kMax32);
    w.u16(static_cast<std::uint16_t>(m.name.size()));
    w.u16(28);  // extra length
    w.u16(0);   // comment length
    w.u16(0);   // disk
    w.u16(0);   // internal attrs
    w.u32(0);   // external attrs
    w.u32(kMax32);
    w.str(m.name);
    w.u16(0x0001);
    w.u16(24);
    w.u64(m.payload.size());
    w.u64(m.payload.size());
    w.u64(m.offset);
    emit(w.bytes);
  }
  const std::uint64_t central_size = pos - central_start;

  ByteWriter w;
  const std::uint64_t zip64_end_offset = pos;
  w.u32(kZip64EndSig);
  w.u64(44);
  w.u16(45);
  w.u16(45);
  w.u32(0);
  w.u32(0);
  w.u64(members.size());
  w.u64(members.size());
  w.u64(central_size);
  w.u64(central_start);
  w.u32(kZip64LocatorSig);
  w.u32(0);
  w.u64(zip64_end_offset);
  w.u32(1);
  w.u32(kEndSig);
  w.u16(0);
  w.u16(0);
  w.u16(0xffff);
  w.u16(0xffff);
  w.u32(kMax32);
  w.u32(kMax32);
  w.u16(0);
  emit(w.bytes);
  if (!out) {
    throw Error(ErrorKind::kIo, "archive: write failed for " + path.string());
  }
}

ArrayArchive ArrayArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::kIo, "archive: cannot open " + path.string());
  }
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (buf.size() < 22) {
    throw Error(ErrorKind::kParse, "archive: " + path.string() +
                                       " is not a zip archive");
  }

  std::size_t end_pos = std::string::npos;
  const std::size_t search_from = buf.size() >= 22 + 65535
                                      ? buf.size() - 22 - 65535
                                      : 0;
  for (std::size_t p = buf.size() - 22 + 1; p-- > search_from;) {
    if (read_le<std::uint32_t>(buf, p) == kEndSig) {
      end_pos = p;
      break;
    }
  }
  if (end_pos == std::string::npos) {
    throw Error(ErrorKind::kParse, "archive: no end-of-central-directory");
  }
  std::uint64_t entries = read_le<std::uint16_t>(buf, end_pos + 10);
  std::uint64_t central_start = read_le<std::uint32_t>(buf, end_pos + 16);
  if (end_pos >= 20 &&
      read_le<std::uint32_t>(buf, end_pos - 20) == kZip64LocatorSig) {
    const auto z64 = read_le<std::uint64_t>(buf, end_pos - 20 + 8);
    if (read_le<std::uint32_t>(buf, z64) != kZip64EndSig) {
      throw Error(ErrorKind::kParse, "archive: bad zip64 end record");
    }
    entries = read_le<std::uint64_t>(buf, z64 + 32);
    central_start = read_le<std::uint64_t>(buf, z64 + 48);
  }

  ArrayArchive archive;
  std::size_t p = central_start;
  for (std::uint64_t e = 0; e < entries; ++e) {
    if (read_le<std::uint32_t>(buf, p) != kCentralSig) {
      throw Error(ErrorKind::kParse, "archive: bad central directory entry");
    }
    const auto method = read_le<std::uint16_t>(buf, p + 10);
    std::uint64_t comp_size = read_le<std::uint32_t>(buf, p + 20);
    std::uint64_t size = read_le<std::uint32_t>(buf, p + 24);
    const auto name_len = read_le<std::uint16_t>(buf, p + 28);
    const auto extra_len = read_le<std::uint16_t>(buf, p + 30);
    const auto comment_len = read_le<std::uint16_t>(buf, p + 32);
    std::uint64_t local = read_le<std::uint32_t>(buf, p + 42);
    const std::string name = buf.substr(p + 46, name_len);

    std::size_t x = p + 46 + name_len;
    const std::size_t x_end = x + extra_len;
    while (x + 4 <= x_end) {
      const auto id = read_le<std::uint16_t>(buf, x);
      const auto len = read_le<std::uint16_t>(buf, x + 2);
      if (id == 0x0001) {
        std::size_t f = x + 4;
        if (size == kMax32) {
          size = read_le<std::uint64_t>(buf, f);
          f += 8;
        }
        if (comp_size == kMax32) {
          comp_size = read_le<std::uint64_t>(buf, f);
          f += 8;
        }
        if (local == kMax32) local = read_le<std::uint64_t>(buf, f);
      }
      x += 4 + len;
    }
    p = x_end + comment_len;

    if (read_le<std::uint32_t>(buf, local) != kLocalHeaderSig) {
      throw Error(ErrorKind::kParse, "archive: bad local header for " + name);
    }
    const std::size_t data_pos = local + 30 +
                                 read_le<std::uint16_t>(buf, local + 26) +
                                 read_le<std::uint16_t>(buf, local + 28);
    if (data_pos + comp_size > buf.size()) {
      throw Error(ErrorKind::kParse, "archive: member " + name +
                                         " extends past end of file");
    }
    std::string member = buf.substr(data_pos, comp_size);
    if (method == 8) {
      member = inflate_raw(member, size);
    } else if (method != 0) {
      throw Error(ErrorKind::kParse, "archive: unsupported compression in " +
                                         name);
    }

    std::string key = name;
    if (key.size() > 4 && key.ends_with(".npy")) key.resize(key.size() - 4);
    ParsedNpy parsed = parse_npy(member, name);
    if (parsed.is_bytes && parsed.array.shape.size() == 1) {
      archive.texts_[key] = std::move(parsed.bytes);
    } else {
      archive.arrays_[key] = std::move(parsed.array);
    }
  }
  return archive;
}

}  // namespace glocal
