#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pvq {

/// Error categories surfaced across the library. NPY ingestion needs distinct
/// codes per failure mode; everything else mostly uses invalid_argument.
enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  out_of_domain,
  too_large,
  io_error,
  bad_magic,
  unsupported_version,
  unsupported_dtype,
  unsupported_layout,
  malformed_header,
  truncated_payload,
  parse_error,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::dimension_mismatch: return "dimension mismatch";
    case ErrorCode::out_of_domain: return "out of domain";
    case ErrorCode::too_large: return "instance too large";
    case ErrorCode::io_error: return "I/O error";
    case ErrorCode::bad_magic: return "bad magic string";
    case ErrorCode::unsupported_version: return "unsupported version";
    case ErrorCode::unsupported_dtype: return "unsupported dtype";
    case ErrorCode::unsupported_layout: return "unsupported layout";
    case ErrorCode::malformed_header: return "malformed header";
    case ErrorCode::truncated_payload: return "truncated payload";
    case ErrorCode::parse_error: return "parse error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

/// Sentinel for a lossless compression (zero error energy).
inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

inline bool is_infinite_snr(double snr_db) { return std::isinf(snr_db) && snr_db > 0; }

/// 10*log10(signal/noise); noise == 0 maps to the +inf sentinel.
inline double snr_db(double signal, double noise) {
  if (noise <= 0.0) return kInfiniteSnr;
  return 10.0 * std::log10(signal / noise);
}

/// Compression ratio equivalent to b-bit quantization relative to FP16.
inline double equivalent_prune_ratio(int bits) { return 1.0 - static_cast<double>(bits) / 16.0; }

}  // namespace pvq
