#pragma once

// Run configuration and its key-value text format.
//
//   # comment
//   mode = layerwise
//   bits = 2-8            (list "2,4,8" or inclusive range "2-8")
//   equiv_sparsity = true
//   sparsity = 0.5,0.75   (used when equiv_sparsity = false)
//   distributions = gaussian:1; student_t:2:20
//
// Keys match the long CLI flags with '-' replaced by '_'.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "pvq/common.hpp"
#include "pvq/distributions.hpp"
#include "pvq/layerwise.hpp"
#include "pvq/report.hpp"

namespace pvq {

enum class Mode { distribution, tensor, layerwise };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::distribution: return "distribution";
    case Mode::tensor: return "tensor";
    case Mode::layerwise: return "layerwise";
  }
  return "unknown";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "distribution") return Mode::distribution;
  if (s == "tensor") return Mode::tensor;
  if (s == "layerwise") return Mode::layerwise;
  throw Error(ErrorCode::invalid_argument, "unknown mode '" + s + "' (expected distribution, tensor or layerwise)");
}

inline constexpr const char* kThreadsEnv = "PVQ_THREADS";

struct RunConfig {
  Mode mode = Mode::distribution;
  std::vector<std::string> inputs;
  std::vector<int> bits = {2, 3, 4, 5, 6, 7, 8};
  bool equiv_sparsity = true;
  std::vector<double> sparsity;
  std::vector<std::string> distributions = {"gaussian:1"};
  long long node_cap = 100000;
  double time_cap = 0.0;  // seconds per prune_exact solve; 0 = unlimited
  std::string output;
  Format format = Format::csv;
  std::uint64_t seed = 0;
  bool preference_map = false;
  int grid_points = 100;
  std::string layer_kind = "auto";
  int samples = 64;  // synthetic activation rows when no activation file exists
  int threads = 1;
};

namespace detail {

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

inline std::vector<std::string> split(const std::string& s, const std::string& seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (seps.find(ch) != std::string::npos) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(trim(cur));
  out.erase(std::remove(out.begin(), out.end(), std::string()), out.end());
  return out;
}

inline long long to_integer(const std::string& key, const std::string& v) {
  try {
    return parse_integer(trim(v));
  } catch (const Error&) {
    throw Error(ErrorCode::invalid_argument, key + ": expected an integer, got '" + v + "'");
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  const std::string t = trim(v);
  double out = kMissing;
  try {
    out = parse_number(t);
  } catch (const Error&) {
  }
  require(!t.empty() && !std::isnan(out), ErrorCode::invalid_argument, key + ": expected a number, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, std::string v) {
  v = trim(v);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::invalid_argument, key + ": expected true or false, got '" + v + "'");
}

}  // namespace detail

/// "2,4,8" or "2-8".
inline std::vector<int> parse_bits(const std::string& text) {
  std::vector<int> out;
  for (const auto& item : detail::split(text, ",")) {
    const auto dash = item.find('-', 1);
    if (dash != std::string::npos) {
      const auto lo = detail::to_integer("bits", item.substr(0, dash));
      const auto hi = detail::to_integer("bits", item.substr(dash + 1));
      require(lo <= hi, ErrorCode::invalid_argument, "bits: empty range '" + item + "'");
      for (auto b = lo; b <= hi; ++b) out.push_back(static_cast<int>(b));
    } else {
      out.push_back(static_cast<int>(detail::to_integer("bits", item)));
    }
  }
  return out;
}

/// "gaussian[:sigma]", "uniform[:half_width]", "student_t:nu[:r]" (r may be inf).
inline DistributionSpec parse_distribution(const std::string& text) {
  const auto parts = detail::split(text, ":");
  require(!parts.empty(), ErrorCode::invalid_argument, "empty distribution spec");
  const auto& family = parts[0];
  auto arg = [&](std::size_t i, double fallback) {
    return i < parts.size() ? detail::to_double("distributions", parts[i]) : fallback;
  };
  DistributionSpec d;
  if (family == "gaussian" || family == "normal") {
    require(parts.size() <= 2, ErrorCode::invalid_argument, "gaussian takes one parameter: '" + text + "'");
    d = gaussian(arg(1, 1.0));
  } else if (family == "uniform") {
    require(parts.size() <= 2, ErrorCode::invalid_argument, "uniform takes one parameter: '" + text + "'");
    d = uniform(arg(1, 1.0));
  } else if (family == "student_t" || family == "t") {
    require(parts.size() >= 2 && parts.size() <= 3, ErrorCode::invalid_argument,
            "student_t needs nu and an optional truncation r: '" + text + "'");
    d = truncated_student_t(arg(1, 2.0), arg(2, std::numeric_limits<double>::infinity()));
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown distribution family '" + family + "'");
  }
  validate(d);
  return d;
}

inline void validate(const RunConfig& c) {
  require(!c.bits.empty(), ErrorCode::invalid_argument, "no bit-widths configured");
  for (int b : c.bits) require(b >= 2 && b <= 16, ErrorCode::invalid_argument, "bit-widths must lie in [2, 16]");
  if (!c.equiv_sparsity) {
    require(!c.sparsity.empty(), ErrorCode::invalid_argument, "equiv_sparsity is off but no sparsity list is given");
  }
  for (double s : c.sparsity) {
    require(s >= 0.0 && s < 1.0, ErrorCode::invalid_argument, "sparsity ratios must lie in [0, 1)");
  }
  require(c.node_cap >= 1, ErrorCode::invalid_argument, "node_cap must be >= 1");
  require(c.time_cap >= 0.0, ErrorCode::invalid_argument, "time_cap must be >= 0");
  require(c.grid_points >= 2, ErrorCode::invalid_argument, "grid_points must be >= 2");
  require(c.samples >= 1, ErrorCode::invalid_argument, "samples must be >= 1");
  require(c.threads >= 1, ErrorCode::invalid_argument, "threads must be >= 1");
  if (c.mode == Mode::distribution) {
    require(!c.distributions.empty(), ErrorCode::invalid_argument, "no distributions configured");
    for (const auto& d : c.distributions) parse_distribution(d);
  }
  if (c.layer_kind != "auto") parse_layer_kind(c.layer_kind);
}

/// Applies one key = value pair.
inline void apply_setting(RunConfig& c, const std::string& raw_key, const std::string& value) {
  std::string key = detail::trim(raw_key);
  std::replace(key.begin(), key.end(), '-', '_');
  if (key == "mode") c.mode = parse_mode(detail::trim(value));
  else if (key == "inputs" || key == "input") c.inputs = detail::split(value, ",");
  else if (key == "bits") c.bits = parse_bits(value);
  else if (key == "equiv_sparsity") c.equiv_sparsity = detail::to_bool(key, value);
  else if (key == "sparsity") {
    c.sparsity.clear();
    for (const auto& s : detail::split(value, ",")) c.sparsity.push_back(detail::to_double(key, s));
  } else if (key == "distributions" || key == "distribution") c.distributions = detail::split(value, ",;");
  else if (key == "node_cap") c.node_cap = detail::to_integer(key, value);
  else if (key == "time_cap") c.time_cap = detail::to_double(key, value);
  else if (key == "output") c.output = detail::trim(value);
  else if (key == "format") c.format = parse_format(detail::trim(value));
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(detail::to_integer(key, value));
  else if (key == "preference_map") c.preference_map = detail::to_bool(key, value);
  else if (key == "grid_points") c.grid_points = static_cast<int>(detail::to_integer(key, value));
  else if (key == "layer_kind") c.layer_kind = detail::trim(value);
  else if (key == "samples") c.samples = static_cast<int>(detail::to_integer(key, value));
  else throw Error(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
}

/// Parses key-value text and applies it over `c`.
inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& where = "<config>") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::invalid_argument,
            where + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      apply_setting(c, line.substr(0, eq), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.code(), where + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io_error, "cannot open config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(c, ss.str(), path.string());
}

/// Thread count from PVQ_THREADS (default 1).
inline int threads_from_env() {
  const char* v = std::getenv(kThreadsEnv);
  if (v == nullptr || *v == '\0') return 1;
  const auto n = detail::to_integer(kThreadsEnv, v);
  require(n >= 1 && n <= 1024, ErrorCode::invalid_argument, std::string(kThreadsEnv) + " must lie in [1, 1024]");
  return static_cast<int>(n);
}

/// Canonical text of every setting that affects results.
inline std::string canonical(const RunConfig& c) {
  std::ostringstream s;
  auto join = [](const auto& xs) {
    std::ostringstream o;
    for (std::size_t i = 0; i < xs.size(); ++i) o << (i ? "," : "") << xs[i];
    return o.str();
  };
  std::vector<std::string> sp;
  for (double x : c.sparsity) sp.push_back(format_number(x));
  s << "mode=" << to_string(c.mode) << "\ninputs=" << join(c.inputs) << "\nbits=" << join(c.bits)
    << "\nequiv_sparsity=" << c.equiv_sparsity << "\nsparsity=" << join(sp)
    << "\ndistributions=" << join(c.distributions) << "\nnode_cap=" << c.node_cap
    << "\ntime_cap=" << format_number(c.time_cap) << "\nseed=" << c.seed << "\npreference_map=" << c.preference_map
    << "\ngrid_points=" << c.grid_points << "\nlayer_kind=" << c.layer_kind << "\nsamples=" << c.samples << "\n";
  return s.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical(c))));
  return buf;
}

}  // namespace pvq
