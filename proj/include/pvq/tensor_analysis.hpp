#pragma once

// Empirical quantization and magnitude pruning of concrete weight tensors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pvq/common.hpp"
#include "pvq/distributions.hpp"

namespace pvq {

struct WeightTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

inline void validate(const WeightTensor& t) {
  require(!t.values.empty(), ErrorCode::invalid_argument, "tensor '" + t.name + "' is empty");
  const std::size_t count =
      std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>());
  require(t.shape.empty() ? t.values.size() == 1 : count == t.values.size(), ErrorCode::dimension_mismatch,
          "tensor '" + t.name + "': shape does not match element count");
  for (double v : t.values) {
    require(std::isfinite(v), ErrorCode::invalid_argument, "tensor '" + t.name + "' has non-finite values");
  }
}

inline double energy(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v * v;
  return s;
}

inline double squared_error(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Quantization.

struct QuantizedTensor {
  std::vector<double> values;
  int bits = 0;
  double delta = 0.0;
  double mse = 0.0;
  double snr_db = kInfiniteSnr;
};

/// Sum of squared rounding/clipping errors of `values` on `grid`.
inline double quantization_sse(std::span<const double> values, const QuantGrid& grid) {
  double s = 0.0;
  const double inv = 1.0 / grid.delta;
  const double lo = static_cast<double>(grid.wmin), hi = static_cast<double>(grid.wmax);
  for (double w : values) {
    const double q = grid.delta * std::clamp(std::nearbyint(w * inv), lo, hi);
    s += (w - q) * (w - q);
  }
  return s;
}

/// Per-tensor symmetric quantization with the MSE-optimal scale among
/// delta_k = k/200 * max|w| / 2^(b-1). An all-zero tensor uses max|w| = 1.
inline QuantizedTensor quantize_tensor(const WeightTensor& t, int bits) {
  validate(t);
  require(bits >= 2 && bits <= 31, ErrorCode::invalid_argument, "bit-width must be in [2, 31]");
  double max_abs = 0.0;
  for (double v : t.values) max_abs = std::max(max_abs, std::abs(v));
  const double range = max_abs > 0.0 ? max_abs : 1.0;

  double best_delta = scale_candidate(1, range, bits);
  double best_sse = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= kScaleCandidates; ++k) {
    const double delta = scale_candidate(k, range, bits);
    const double sse = quantization_sse(t.values, make_grid(bits, delta));
    if (sse < best_sse) {
      best_sse = sse;
      best_delta = delta;
    }
  }

  QuantizedTensor out;
  out.bits = bits;
  out.delta = best_delta;
  const auto grid = make_grid(bits, best_delta);
  out.values.reserve(t.values.size());
  for (double w : t.values) out.values.push_back(grid.quantize(w));
  const double sse = squared_error(t.values, out.values);
  out.mse = sse / static_cast<double>(t.values.size());
  out.snr_db = snr_db(energy(t.values), sse);
  return out;
}

// ---------------------------------------------------------------------------
// Pruning.

struct PrunedTensor {
  std::vector<double> values;
  std::size_t zeroed = 0;
  double snr_db = kInfiniteSnr;
};

/// Number of entries removed at ratio c: floor(c * n).
inline std::size_t prune_count(double ratio, std::size_t n) {
  // The slack absorbs products like 0.57 * 100 = 56.999999999999993.
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) * (1.0 + 1e-12)));
}

/// Zeroes the floor(c*n) smallest-magnitude entries; equal magnitudes are
/// removed in flat-index order.
inline PrunedTensor prune_tensor(const WeightTensor& t, double ratio) {
  validate(t);
  require(ratio >= 0.0 && ratio < 1.0, ErrorCode::out_of_domain, "pruning ratio must lie in [0, 1)");
  const std::size_t n = t.values.size();
  PrunedTensor out;
  out.values = t.values;
  out.zeroed = std::min(prune_count(ratio, n), n);
  if (out.zeroed > 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto by_magnitude = [&](std::size_t a, std::size_t b) { return std::abs(t.values[a]) < std::abs(t.values[b]); };
    std::stable_sort(order.begin(), order.end(), by_magnitude);
    for (std::size_t i = 0; i < out.zeroed; ++i) out.values[order[i]] = 0.0;
  }
  out.snr_db = snr_db(energy(t.values), squared_error(t.values, out.values));
  return out;
}

// ---------------------------------------------------------------------------
// Statistics.

/// k = m4 / m2^2 with population (1/n) central moments; no bias correction.
inline double sample_kurtosis(std::span<const double> values) {
  require(values.size() >= 2, ErrorCode::invalid_argument, "sample kurtosis needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  require(m2 > 0.0, ErrorCode::invalid_argument, "sample kurtosis undefined for zero variance");
  return m4 / (m2 * m2);
}

inline double sample_kurtosis(const WeightTensor& t) { return sample_kurtosis(std::span<const double>(t.values)); }

/// Fraction of entries that are exactly zero.
inline double natural_sparsity(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const auto zeros = std::count(values.begin(), values.end(), 0.0);
  return static_cast<double>(zeros) / static_cast<double>(values.size());
}

// ---------------------------------------------------------------------------
// Per-tensor report.

struct BitRecord {
  int bits = 0;
  double delta = 0.0;
  double quant_snr_db = 0.0;
  double natural_sparsity = 0.0;
  double prune_ratio = 0.0;
  double prune_snr_db = 0.0;
  Winner winner = Winner::tie;
};

struct TensorReport {
  std::string name;
  std::size_t n = 0;
  double kurtosis = 0.0;
  std::vector<BitRecord> records;
};

/// Quantization versus pruning at c = 1 - b/16 for each bit-width.
inline TensorReport analyze_tensor(const WeightTensor& t, const std::vector<int>& bit_widths) {
  validate(t);
  TensorReport report;
  report.name = t.name;
  report.n = t.values.size();
  report.kurtosis = sample_kurtosis(t);
  for (int b : bit_widths) {
    require(b >= 2 && b <= 16, ErrorCode::invalid_argument, "bit-widths must lie in [2, 16]");
    const auto q = quantize_tensor(t, b);
    BitRecord r;
    r.bits = b;
    r.delta = q.delta;
    r.quant_snr_db = q.snr_db;
    r.natural_sparsity = natural_sparsity(q.values);
    r.prune_ratio = equivalent_prune_ratio(b);
    r.prune_snr_db = prune_tensor(t, r.prune_ratio).snr_db;
    r.winner = pick_winner(r.quant_snr_db, r.prune_snr_db);
    report.records.push_back(r);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Kurtosis preference map.

/// Silverman's rule of thumb: 0.9 * min(sd, IQR/1.34) * n^(-1/5). Returns 0
/// when the sample has no spread.
inline double silverman_bandwidth(std::vector<double> xs) {
  if (xs.size() < 2) return 0.0;
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  const double sd = std::sqrt(var / (n - 1.0));
  std::sort(xs.begin(), xs.end());
  auto quantile = [&](double p) {
    const double pos = p * (n - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  return 0.9 * spread * std::pow(n, -0.2);
}

struct PreferenceCell {
  int bits = 0;
  bool has_data = false;
  std::size_t prune_count = 0;
  std::size_t quant_count = 0;
  double prune_bandwidth = 0.0;
  double quant_bandwidth = 0.0;
  std::vector<double> kurtosis;
  std::vector<double> prune_probability;
};

struct PreferenceMap {
  std::vector<PreferenceCell> cells;  // ascending bit-width
};

namespace detail {

/// log(sum_i N(x; c_i, h^2)), i.e. log of count * KDE density.
inline double log_kernel_mass(double x, const std::vector<double>& centers, double h) {
  if (centers.empty()) return -std::numeric_limits<double>::infinity();
  double peak = -std::numeric_limits<double>::infinity();
  std::vector<double> logs;
  logs.reserve(centers.size());
  for (double c : centers) {
    const double z = (x - c) / h;
    logs.push_back(-0.5 * z * z);
    peak = std::max(peak, logs.back());
  }
  double s = 0.0;
  for (double l : logs) s += std::exp(l - peak);
  return peak + std::log(s) - std::log(h * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace detail

/**
 * Per bit-width, fits a Gaussian KDE over the kurtosis of tensors where pruning
 * won and another where quantization won, and reports
 *   P(prune | k) = n_p f_p(k) / (n_p f_p(k) + n_q f_q(k))
 * on a uniform kurtosis grid spanning the observed range. Ties count for
 * neither side. Cells with fewer than two decided tensors have no data.
 */
inline PreferenceMap preference_map(const std::vector<TensorReport>& reports, int grid_points = 100) {
  require(grid_points >= 2, ErrorCode::invalid_argument, "preference map needs at least two grid points");
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_bits;  // prune, quant
  double kmin = std::numeric_limits<double>::infinity();
  double kmax = -std::numeric_limits<double>::infinity();
  for (const auto& r : reports) {
    kmin = std::min(kmin, r.kurtosis);
    kmax = std::max(kmax, r.kurtosis);
    for (const auto& rec : r.records) {
      auto& cell = by_bits[rec.bits];
      if (rec.winner == Winner::prune) cell.first.push_back(r.kurtosis);
      if (rec.winner == Winner::quant) cell.second.push_back(r.kurtosis);
    }
  }
  PreferenceMap map;
  if (reports.empty()) return map;
  if (kmax == kmin) {
    kmin -= 0.5;
    kmax += 0.5;
  }
  std::vector<double> grid(grid_points);
  for (int i = 0; i < grid_points; ++i) grid[i] = kmin + (kmax - kmin) * i / (grid_points - 1);

  for (auto& [bits, groups] : by_bits) {
    auto& [prune, quant] = groups;
    std::sort(prune.begin(), prune.end());
    std::sort(quant.begin(), quant.end());
    PreferenceCell cell;
    cell.bits = bits;
    cell.prune_count = prune.size();
    cell.quant_count = quant.size();
    cell.kurtosis = grid;
    if (prune.size() + quant.size() < 2) {
      map.cells.push_back(std::move(cell));
      continue;
    }
    cell.has_data = true;
    std::vector<double> all = prune;
    all.insert(all.end(), quant.begin(), quant.end());
    double fallback = silverman_bandwidth(all);
    if (!(fallback > 0.0)) fallback = 1e-3 * std::max(1.0, std::abs(all.front()));
    cell.prune_bandwidth = silverman_bandwidth(prune);
    cell.quant_bandwidth = silverman_bandwidth(quant);
    if (!(cell.prune_bandwidth > 0.0)) cell.prune_bandwidth = fallback;
    if (!(cell.quant_bandwidth > 0.0)) cell.quant_bandwidth = fallback;
    cell.prune_probability.reserve(grid.size());
    for (double k : grid) {
      if (prune.empty()) {
        cell.prune_probability.push_back(0.0);
        continue;
      }
      if (quant.empty()) {
        cell.prune_probability.push_back(1.0);
        continue;
      }
      const double lp = detail::log_kernel_mass(k, prune, cell.prune_bandwidth);
      const double lq = detail::log_kernel_mass(k, quant, cell.quant_bandwidth);
      cell.prune_probability.push_back(1.0 / (1.0 + std::exp(lq - lp)));
    }
    map.cells.push_back(std::move(cell));
  }
  return map;
}

}  // namespace pvq
