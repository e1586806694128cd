#pragma once

// NPY v1.0 reader and writer for little-endian float32/float64 C-order arrays.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <regex>
#include <string>
#include <vector>

#include "pvq/common.hpp"
#include "pvq/tensor_analysis.hpp"

namespace pvq::npy {

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

inline constexpr char kMagic[] = "\x93NUMPY";
inline constexpr std::size_t kMagicSize = 6;

enum class Dtype { f4, f8 };

inline std::string descr(Dtype d) { return d == Dtype::f4 ? "<f4" : "<f8"; }

struct Header {
  Dtype dtype = Dtype::f8;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
  std::size_t data_offset = 0;
};

/// Parses the magic, version and header dict of an NPY byte buffer.
inline Header parse_header(const std::string& bytes, const std::string& where = "<buffer>") {
  require(bytes.size() >= kMagicSize && bytes.compare(0, kMagicSize, kMagic, kMagicSize) == 0, ErrorCode::bad_magic,
          where + ": missing \\x93NUMPY magic string");
  require(bytes.size() >= 10, ErrorCode::truncated_payload, where + ": file ends inside the preamble");
  const auto major = static_cast<unsigned char>(bytes[6]);
  const auto minor = static_cast<unsigned char>(bytes[7]);
  require(major == 1 && minor == 0, ErrorCode::unsupported_version,
          where + ": NPY version " + std::to_string(major) + "." + std::to_string(minor) + " (only 1.0 is supported)");
  const std::size_t header_len =
      static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
  require(bytes.size() >= 10 + header_len, ErrorCode::truncated_payload, where + ": file ends inside the header");
  const std::string dict = bytes.substr(10, header_len);

  Header h;
  h.data_offset = 10 + header_len;

  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  require(std::regex_search(dict, m, descr_re), ErrorCode::malformed_header, where + ": header has no 'descr' key");
  const std::string d = m[1];
  if (d == "<f4") {
    h.dtype = Dtype::f4;
  } else if (d == "<f8") {
    h.dtype = Dtype::f8;
  } else {
    throw Error(ErrorCode::unsupported_dtype, where + ": descr '" + d + "' (accepted: '<f4', '<f8')");
  }
  require(std::regex_search(dict, m, fortran_re), ErrorCode::malformed_header,
          where + ": header has no 'fortran_order' key");
  h.fortran_order = m[1] == "True";
  require(!h.fortran_order, ErrorCode::unsupported_layout, where + ": fortran_order True is not supported");
  require(std::regex_search(dict, m, shape_re), ErrorCode::malformed_header, where + ": header has no 'shape' key");
  const std::string dims = m[1];
  static const std::regex dim_re(R"(\s*(\d+)\s*(,|$))");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), dim_re); it != std::sregex_iterator(); ++it) {
    h.shape.push_back(static_cast<std::size_t>(std::stoull((*it)[1])));
  }
  const bool only_digits_and_commas =
      std::regex_match(dims, std::regex(R"(\s*(\d+\s*(,\s*\d+\s*)*,?\s*)?)"));
  require(only_digits_and_commas, ErrorCode::malformed_header, where + ": cannot parse shape '(" + dims + ")'");
  return h;
}

inline std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

/// Decodes an NPY byte buffer into a tensor (values widened to double).
inline WeightTensor decode(const std::string& bytes, std::string name, const std::string& where = "<buffer>") {
  const Header h = parse_header(bytes, where);
  const std::size_t count = element_count(h.shape);
  const std::size_t width = h.dtype == Dtype::f4 ? 4 : 8;
  require(bytes.size() - h.data_offset >= count * width, ErrorCode::truncated_payload,
          where + ": payload holds " + std::to_string(bytes.size() - h.data_offset) + " bytes, expected " +
              std::to_string(count * width));
  WeightTensor t;
  t.name = std::move(name);
  t.shape = h.shape;
  t.values.resize(count);
  const char* p = bytes.data() + h.data_offset;
  for (std::size_t i = 0; i < count; ++i) {
    if (h.dtype == Dtype::f4) {
      float f;
      std::memcpy(&f, p + 4 * i, 4);
      t.values[i] = f;
    } else {
      std::memcpy(&t.values[i], p + 8 * i, 8);
    }
  }
  return t;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io_error, "cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Loads an NPY file; the tensor name is the file stem.
inline WeightTensor load_tensor(const std::filesystem::path& path) {
  return decode(read_file(path), path.stem().string(), path.string());
}

/// Encodes a tensor as NPY v1.0 (header padded to a multiple of 64 bytes).
inline std::string encode(const WeightTensor& t, Dtype dtype = Dtype::f8) {
  require(element_count(t.shape) == t.values.size(), ErrorCode::dimension_mismatch,
          "tensor '" + t.name + "': shape does not match element count");
  std::string shape = "(";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    shape += std::to_string(t.shape[i]);
    if (t.shape.size() == 1 || i + 1 < t.shape.size()) shape += ",";
    if (i + 1 < t.shape.size()) shape += " ";
  }
  shape += ")";
  std::string dict = "{'descr': '" + descr(dtype) + "', 'fortran_order': False, 'shape': " + shape + ", }";
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict.push_back('\n');
  require(dict.size() <= 0xFFFF, ErrorCode::too_large, "NPY v1.0 header exceeds 65535 bytes");

  std::string out(kMagic, kMagicSize);
  out.push_back('\x01');
  out.push_back('\x00');
  out.push_back(static_cast<char>(dict.size() & 0xFF));
  out.push_back(static_cast<char>(dict.size() >> 8));
  out += dict;
  for (double v : t.values) {
    if (dtype == Dtype::f4) {
      const auto f = static_cast<float>(v);
      out.append(reinterpret_cast<const char*>(&f), 4);
    } else {
      out.append(reinterpret_cast<const char*>(&v), 8);
    }
  }
  return out;
}

inline void save_tensor(const std::filesystem::path& path, const WeightTensor& t, Dtype dtype = Dtype::f8) {
  const std::string bytes = encode(t, dtype);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io_error, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::io_error, "write failed for '" + path.string() + "'");
}

}  // namespace pvq::npy
