#pragma once

/**
 * @file distributions.hpp
 * @brief Expected quantization and pruning error for symmetric zero-mean
 *        densities (Gaussian, uniform, truncated Student's-t).
 *
 * A distribution is W = scale * Z, where Z is one of
 *   - N(0, 1),
 *   - U[-range, range],
 *   - Student's-t with nu degrees of freedom restricted to [-range, range]
 *     (range = +inf means untruncated, which needs nu > 2).
 *
 * Expected quantization MSE splits into a rounding part over [q_min, q_max]
 * and a clipping part over the two tails. Both are assembled from the
 * segment moment I(a, b, w0) = int_a^b (w - w0)^2 p(w) dw.
 */

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "pvq/common.hpp"
#include "pvq/quadrature.hpp"

namespace pvq {

enum class Family { gaussian, uniform, truncated_student_t };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::gaussian: return "gaussian";
    case Family::uniform: return "uniform";
    case Family::truncated_student_t: return "truncated_t";
  }
  return "unknown";
}

struct DistributionSpec {
  Family family = Family::gaussian;
  double scale = 1.0;
  double nu = 0.0;
  double range = 0.0;
};

/// Which compression method gives the higher SNR.
enum class Winner { quant, prune, tie };

inline std::string to_string(Winner w) {
  switch (w) {
    case Winner::quant: return "quant";
    case Winner::prune: return "prune";
    case Winner::tie: return "tie";
  }
  return "unknown";
}

inline Winner pick_winner(double quant_snr_db, double prune_snr_db) {
  if (quant_snr_db > prune_snr_db) return Winner::quant;
  if (prune_snr_db > quant_snr_db) return Winner::prune;
  return Winner::tie;
}

// ---------------------------------------------------------------------------
// Standard normal and Student's-t primitives.

namespace detail {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double normal_pdf(double z) {
  if (std::isinf(z)) return 0.0;
  return kInvSqrt2Pi * std::exp(-0.5 * z * z);
}
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }
inline double normal_sf(double z) { return 0.5 * std::erfc(z * kInvSqrt2); }

/// P(a < Z < b) for Z ~ N(0,1), evaluated on the side that avoids cancellation.
inline double normal_mass(double a, double b) {
  if (a >= 0.0) return normal_sf(a) - normal_sf(b);
  if (b <= 0.0) return normal_cdf(b) - normal_cdf(a);
  return 1.0 - normal_sf(b) - normal_cdf(a);
}

inline double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> n01;
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  if (p > 0.5) return boost::math::quantile(boost::math::complement(n01, 1.0 - p));
  return boost::math::quantile(n01, p);
}

inline double t_log_norm(double nu) {
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi);
}

inline double t_pdf(double z, double nu, double log_norm) {
  if (std::isinf(z)) return 0.0;
  return std::exp(log_norm - 0.5 * (nu + 1.0) * std::log1p(z * z / nu));
}

inline double t_pdf(double z, double nu) { return t_pdf(z, nu, t_log_norm(nu)); }

inline double t_cdf(double z, double nu) {
  if (z == -std::numeric_limits<double>::infinity()) return 0.0;
  if (z == std::numeric_limits<double>::infinity()) return 1.0;
  return boost::math::cdf(boost::math::students_t_distribution<double>(nu), z);
}

/// Mass of the base t on [-r, r].
inline double t_central_mass(double r, double nu) {
  if (std::isinf(r)) return 1.0;
  const boost::math::students_t_distribution<double> t(nu);
  return 1.0 - 2.0 * boost::math::cdf(boost::math::complement(t, r));
}

/// Quantile of the base t at probability 0.5 + offset (offset in (-0.5, 0.5)).
inline double t_quantile_centered(double offset, double nu) {
  const boost::math::students_t_distribution<double> t(nu);
  if (offset == 0.0) return 0.0;
  if (offset > 0.0) return boost::math::quantile(boost::math::complement(t, 0.5 - offset));
  return -boost::math::quantile(boost::math::complement(t, 0.5 + offset));
}

inline double t_second_moment_truncated(double r, double nu) {
  if (std::isinf(r)) return nu / (nu - 2.0);
  const double mass = t_central_mass(r, nu);
  auto f = [nu, ln = t_log_norm(nu)](double z) { return z * z * t_pdf(z, nu, ln); };
  return quad::integrate(f, -r, r, {.abs_tol = 1e-13}).value / mass;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Construction and validation.

inline DistributionSpec gaussian(double sigma = 1.0) {
  return {.family = Family::gaussian, .scale = sigma, .nu = 0.0, .range = 0.0};
}

inline DistributionSpec uniform(double half_width = 1.0) {
  return {.family = Family::uniform, .scale = 1.0, .nu = 0.0, .range = half_width};
}

inline void validate(const DistributionSpec& d) {
  require(std::isfinite(d.scale) && d.scale > 0.0, ErrorCode::invalid_argument, "distribution scale must be positive");
  switch (d.family) {
    case Family::gaussian: break;
    case Family::uniform:
      require(std::isfinite(d.range) && d.range > 0.0, ErrorCode::invalid_argument, "uniform half-width must be positive");
      break;
    case Family::truncated_student_t:
      require(std::isfinite(d.nu) && d.nu > 0.0, ErrorCode::invalid_argument, "degrees of freedom must be positive");
      require(d.range > 0.0 && !std::isnan(d.range), ErrorCode::invalid_argument, "truncation range must be positive");
      require(std::isfinite(d.range) || d.nu > 2.0, ErrorCode::out_of_domain,
              "untruncated Student's-t needs nu > 2 for a finite variance");
      break;
  }
}

/// Student's-t with `nu` degrees of freedom truncated to [-r, r] (r in units
/// of the raw t variable), rescaled to unit variance.
inline DistributionSpec truncated_student_t(double nu, double r) {
  DistributionSpec d{.family = Family::truncated_student_t, .scale = 1.0, .nu = nu, .range = r};
  validate(d);
  d.scale = 1.0 / std::sqrt(detail::t_second_moment_truncated(r, nu));
  return d;
}

inline std::string describe(const DistributionSpec& d) {
  std::string s = to_string(d.family);
  auto num = [](double v) {
    if (std::isinf(v)) return std::string("inf");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return std::string(buf);
  };
  switch (d.family) {
    case Family::gaussian: s += "(sigma=" + num(d.scale) + ")"; break;
    case Family::uniform: s += "(a=" + num(d.scale * d.range) + ")"; break;
    case Family::truncated_student_t: s += "(nu=" + num(d.nu) + ";r=" + num(d.range) + ")"; break;
  }
  return s;
}

/// Closed support [lo, hi] of W; infinite for the Gaussian and untruncated t.
inline std::pair<double, double> support(const DistributionSpec& d) {
  if (d.family == Family::gaussian) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return {-inf, inf};
  }
  const double hi = d.scale * d.range;
  return {-hi, hi};
}

inline double pdf(const DistributionSpec& d, double x) {
  const double z = x / d.scale;
  switch (d.family) {
    case Family::gaussian: return detail::normal_pdf(z) / d.scale;
    case Family::uniform: return std::abs(z) <= d.range ? 0.5 / (d.range * d.scale) : 0.0;
    case Family::truncated_student_t:
      if (std::abs(z) > d.range) return 0.0;
      return detail::t_pdf(z, d.nu) / (detail::t_central_mass(d.range, d.nu) * d.scale);
  }
  return 0.0;
}

inline double cdf(const DistributionSpec& d, double x) {
  require(!std::isnan(x), ErrorCode::invalid_argument, "cdf argument is NaN");
  const double z = x / d.scale;
  switch (d.family) {
    case Family::gaussian: return detail::normal_cdf(z);
    case Family::uniform: return std::clamp(0.5 + 0.5 * z / d.range, 0.0, 1.0);
    case Family::truncated_student_t: {
      if (z <= -d.range) return 0.0;
      if (z >= d.range) return 1.0;
      const double lower_tail = 0.5 * (1.0 - detail::t_central_mass(d.range, d.nu));
      return (detail::t_cdf(z, d.nu) - lower_tail) / detail::t_central_mass(d.range, d.nu);
    }
  }
  return 0.0;
}

inline double quantile(const DistributionSpec& d, double p) {
  require(p >= 0.0 && p <= 1.0, ErrorCode::out_of_domain, "quantile probability must lie in [0, 1]");
  switch (d.family) {
    case Family::gaussian: return d.scale * detail::normal_quantile(p);
    case Family::uniform: return d.scale * d.range * (2.0 * p - 1.0);
    case Family::truncated_student_t: {
      if (p == 0.0) return -d.scale * d.range;
      if (p == 1.0) return d.scale * d.range;
      const double mass = detail::t_central_mass(d.range, d.nu);
      const double z = detail::t_quantile_centered((p - 0.5) * mass, d.nu);
      return d.scale * std::clamp(z, -d.range, d.range);
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Moments.

namespace detail {

/// int_A^B (z - m)^2 phi(z) dz for the standard normal, closed form.
inline double normal_segment_closed(double A, double B, double m) {
  const double pa = normal_pdf(A);
  const double pb = normal_pdf(B);
  const double m0 = normal_mass(A, B);
  const double m1 = pa - pb;
  const double apa = std::isinf(A) ? 0.0 : A * pa;
  const double bpb = std::isinf(B) ? 0.0 : B * pb;
  const double m2 = m0 + apa - bpb;
  return m2 - 2.0 * m * m1 + m * m * m0;
}

}  // namespace detail

/**
 * I(a, b, w0) = int_a^b (w - w0)^2 p(w) dw over [a, b] intersected with the
 * support. Infinite limits are allowed. Gaussian and uniform use closed forms;
 * the truncated t uses adaptive quadrature to absolute tolerance 1e-10.
 */
inline double segment_moment(double a, double b, double w0, const DistributionSpec& d) {
  require(!std::isnan(a) && !std::isnan(b) && std::isfinite(w0), ErrorCode::invalid_argument,
          "segment_moment: limits must not be NaN and w0 must be finite");
  require(a <= b, ErrorCode::invalid_argument, "segment_moment: requires a <= b");
  const auto [lo, hi] = support(d);
  a = std::max(a, lo);
  b = std::min(b, hi);
  if (!(a < b)) return 0.0;

  switch (d.family) {
    case Family::gaussian: {
      const double s = d.scale;
      const double A = a / s, B = b / s, m = w0 / s;
      // Far one-sided tails cancel badly in closed form; integrate those instead.
      if (A > 5.0 || B < -5.0) {
        auto f = [m](double z) { return (z - m) * (z - m) * detail::normal_pdf(z); };
        return s * s * quad::integrate(f, A, B, {.abs_tol = 1e-16}).value;
      }
      return s * s * std::max(0.0, detail::normal_segment_closed(A, B, m));
    }
    case Family::uniform: {
      const double half = d.scale * d.range;
      const double ub = b - w0, ua = a - w0;
      return (ub * ub * ub - ua * ua * ua) / (6.0 * half);
    }
    case Family::truncated_student_t: {
      const double s = d.scale;
      const double inv_mass = 1.0 / detail::t_central_mass(d.range, d.nu);
      const double nu = d.nu;
      const double log_norm = detail::t_log_norm(nu);
      auto f = [=](double z) {
        const double dz = s * z - w0;
        return dz * dz * detail::t_pdf(z, nu, log_norm) * inv_mass;
      };
      return quad::integrate(f, a / s, b / s, {.abs_tol = 1e-10}).value;
    }
  }
  return 0.0;
}

/// E[W^2].
inline double second_moment(const DistributionSpec& d) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (d.family) {
    case Family::gaussian: return d.scale * d.scale;
    case Family::uniform: return d.scale * d.scale * d.range * d.range / 3.0;
    case Family::truncated_student_t: return segment_moment(-inf, inf, 0.0, d);
  }
  return 0.0;
}

/// E[W^4] / E[W^2]^2, by quadrature.
inline double distribution_kurtosis(const DistributionSpec& d) {
  validate(d);
  if (d.family == Family::truncated_student_t && std::isinf(d.range)) {
    require(d.nu > 4.0, ErrorCode::out_of_domain, "kurtosis of an untruncated Student's-t needs nu > 4");
  }
  const auto [lo, hi] = support(d);
  // Work on the standardized variable Z; kurtosis is scale invariant.
  double zlo = lo / d.scale, zhi = hi / d.scale;
  std::function<double(double)> base;
  switch (d.family) {
    case Family::gaussian: base = detail::normal_pdf; break;
    case Family::uniform: base = [r = d.range](double z) { return std::abs(z) <= r ? 0.5 / r : 0.0; }; break;
    case Family::truncated_student_t:
      base = [nu = d.nu, ln = detail::t_log_norm(d.nu)](double z) { return detail::t_pdf(z, nu, ln); };
      break;
  }
  const quad::Options opt{.abs_tol = 1e-14};
  const double m2 = quad::integrate([&](double z) { return z * z * base(z); }, zlo, zhi, opt).value;
  const double m4 = quad::integrate([&](double z) { return z * z * z * z * base(z); }, zlo, zhi, opt).value;
  const double m0 = quad::integrate(base, zlo, zhi, opt).value;
  // m0 normalizes the truncated densities.
  return (m4 / m0) / ((m2 / m0) * (m2 / m0));
}

// ---------------------------------------------------------------------------
// Quantization grid.

/// Symmetric signed b-bit grid q_i = delta * i, i in [-2^(b-1), 2^(b-1) - 1].
struct QuantGrid {
  int bits = 8;
  double delta = 1.0;
  long long wmin = -128;
  long long wmax = 127;

  double qmin() const { return delta * static_cast<double>(wmin); }
  double qmax() const { return delta * static_cast<double>(wmax); }
  double node(long long i) const { return delta * static_cast<double>(i); }

  /// Round-to-nearest integer index, saturated to the grid limits.
  long long index(double w) const {
    const double r = std::nearbyint(w / delta);
    return static_cast<long long>(std::clamp(r, static_cast<double>(wmin), static_cast<double>(wmax)));
  }

  double quantize(double w) const { return node(index(w)); }
};

inline QuantGrid make_grid(int bits, double delta) {
  require(bits >= 2 && bits <= 62, ErrorCode::invalid_argument, "bit-width must be in [2, 62]");
  require(std::isfinite(delta) && delta > 0.0, ErrorCode::invalid_argument, "quantization scale must be positive");
  const long long half = 1LL << (bits - 1);
  return {.bits = bits, .delta = delta, .wmin = -half, .wmax = half - 1};
}

/// Number of scale candidates searched by the range estimator.
inline constexpr int kScaleCandidates = 200;

/// delta_k = k / 200 * max_range / 2^(b-1), k = 1..200.
inline double scale_candidate(int k, double max_range, int bits) {
  const double levels = std::ldexp(1.0, bits - 1);
  return static_cast<double>(k) * max_range / (kScaleCandidates * levels);
}

// ---------------------------------------------------------------------------
// Expected errors.

struct ErrorBreakdown {
  double rounding = 0.0;
  double clipping = 0.0;
  double total = 0.0;
  double snr_db = kInfiniteSnr;
};

inline ErrorBreakdown make_breakdown(double rounding, double clipping, double signal) {
  ErrorBreakdown e{.rounding = rounding, .clipping = clipping, .total = rounding + clipping};
  e.snr_db = snr_db(signal, e.total);
  return e;
}

/// Rounding error summed cell by cell (each cell split at its midpoint), plus
/// the two clipping tails beyond q_min and q_max.
inline ErrorBreakdown expected_quant_error(const DistributionSpec& d, const QuantGrid& g) {
  validate(d);
  require(g.delta > 0.0 && g.wmin < 0 && g.wmax > 0, ErrorCode::invalid_argument, "invalid quantization grid");
  const auto [lo, hi] = support(d);
  // Cells entirely outside the support contribute nothing.
  const long long first = std::max(g.wmin, static_cast<long long>(std::floor(std::max(lo, g.qmin()) / g.delta)) - 1);
  const long long last = std::min(g.wmax - 1, static_cast<long long>(std::ceil(std::min(hi, g.qmax()) / g.delta)) + 1);

  double rounding = 0.0;
  for (long long i = std::max(first, g.wmin); i <= last; ++i) {
    const double left = g.node(i);
    const double right = g.node(i + 1);
    const double mid = 0.5 * (left + right);
    rounding += segment_moment(left, mid, left, d);
    rounding += segment_moment(mid, right, right, d);
  }
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double clipping = segment_moment(-inf, g.qmin(), g.qmin(), d) + segment_moment(g.qmax(), inf, g.qmax(), d);
  return make_breakdown(rounding, clipping, second_moment(d));
}

/// Range used to span the scale candidates: the support edge for bounded
/// densities, 6 sigma otherwise.
inline double candidate_range(const DistributionSpec& d) {
  const auto [lo, hi] = support(d);
  if (std::isfinite(hi)) return hi;
  return 6.0 * std::sqrt(second_moment(d));
}

/// MSE-optimal scale over the fixed candidate set; ties go to the smaller scale.
inline double optimal_scale(const DistributionSpec& d, int bits) {
  validate(d);
  require(bits >= 2, ErrorCode::invalid_argument, "bit-width must be >= 2");
  const double range = candidate_range(d);
  double best_delta = scale_candidate(1, range, bits);
  double best = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= kScaleCandidates; ++k) {
    const double delta = scale_candidate(k, range, bits);
    const double total = expected_quant_error(d, make_grid(bits, delta)).total;
    if (total < best) {
      best = total;
      best_delta = delta;
    }
  }
  return best_delta;
}

/// t = F^{-1}(1/2 + c/2), so that P(-t <= W <= t) = c.
inline double prune_threshold(const DistributionSpec& d, double ratio) {
  validate(d);
  require(ratio >= 0.0 && ratio < 1.0, ErrorCode::out_of_domain, "pruning ratio must lie in [0, 1)");
  if (ratio == 0.0) return 0.0;
  switch (d.family) {
    case Family::gaussian: {
      static const boost::math::normal_distribution<double> n01;
      // Upper-tail form keeps precision for ratios close to 1.
      return d.scale * boost::math::quantile(boost::math::complement(n01, 0.5 * (1.0 - ratio)));
    }
    case Family::uniform: return d.scale * d.range * ratio;
    case Family::truncated_student_t: {
      const double mass = detail::t_central_mass(d.range, d.nu);
      return d.scale * std::min(detail::t_quantile_centered(0.5 * ratio * mass, d.nu), d.range);
    }
  }
  return 0.0;
}

/// Pruning error int_{-t}^{t} w^2 p(w) dw; reported entirely as clipping-like error.
inline ErrorBreakdown expected_prune_error(const DistributionSpec& d, double ratio) {
  const double t = prune_threshold(d, ratio);
  const double total = t > 0.0 ? segment_moment(-t, t, 0.0, d) : 0.0;
  return make_breakdown(0.0, total, second_moment(d));
}

// ---------------------------------------------------------------------------
// Trade-off sweep.

struct TradeoffRow {
  int bits = 0;
  double delta = 0.0;
  ErrorBreakdown quant;
  double prune_ratio = 0.0;
  double prune_threshold = 0.0;
  ErrorBreakdown prune;
  Winner winner = Winner::tie;
};

/// Quantization at the optimal scale versus pruning at c = 1 - b/16, per bit-width.
inline std::vector<TradeoffRow> sweep_tradeoff(const DistributionSpec& d, const std::vector<int>& bit_widths) {
  validate(d);
  std::vector<TradeoffRow> rows;
  rows.reserve(bit_widths.size());
  for (int b : bit_widths) {
    require(b >= 2 && b <= 16, ErrorCode::invalid_argument, "sweep bit-widths must lie in [2, 16]");
    TradeoffRow row;
    row.bits = b;
    row.delta = optimal_scale(d, b);
    row.quant = expected_quant_error(d, make_grid(b, row.delta));
    row.prune_ratio = equivalent_prune_ratio(b);
    row.prune_threshold = prune_threshold(d, row.prune_ratio);
    row.prune = expected_prune_error(d, row.prune_ratio);
    row.winner = pick_winner(row.quant.snr_db, row.prune.snr_db);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace pvq
