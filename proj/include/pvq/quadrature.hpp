#pragma once

// Adaptive Gauss-Kronrod (G7/K15) integration.

#include <algorithm>
#include <array>
#include <queue>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "pvq/common.hpp"

namespace pvq::quad {

struct Options {
  double abs_tol = 1e-10;
  double rel_tol = 1e-13;
  int max_depth = 60;
  int max_subdivisions = 4000;
};

struct Result {
  double value = 0.0;
  double error = 0.0;
  int evaluations = 0;
};

namespace detail {

inline constexpr std::array<double, 8> kKronrodNodes = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};

inline constexpr std::array<double, 8> kKronrodWeights = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};

// Gauss weights for the odd Kronrod nodes (indices 1,3,5,7).
inline constexpr std::array<double, 4> kGaussWeights = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <typename F>
std::pair<double, double> gk15(F&& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kKronrodWeights[7];
  double gauss = fc * kGaussWeights[3];
  for (int i = 0; i < 7; ++i) {
    const double dx = half * kKronrodNodes[i];
    const double sum = f(center - dx) + f(center + dx);
    kronrod += kKronrodWeights[i] * sum;
    if (i % 2 == 1) gauss += kGaussWeights[i / 2] * sum;
  }
  return {kronrod * half, std::abs((kronrod - gauss) * half)};
}

}  // namespace detail

namespace detail {

struct Panel {
  double a, b, value, error;
  int depth;
  bool operator<(const Panel& o) const { return error < o.error; }
};

/// Globally adaptive: always bisect the panel with the largest error estimate
/// until the summed estimate meets max(abs_tol, rel_tol * |I|).
template <typename F>
Result integrate_finite(F& f, double a, double b, const Options& opt) {
  Result out;
  std::priority_queue<Panel> panels;
  double value = 0.0, error = 0.0;
  auto push = [&](double lo, double hi, int depth) {
    auto [v, e] = gk15(f, lo, hi);
    out.evaluations += 15;
    value += v;
    error += e;
    panels.push({lo, hi, v, e, depth});
  };
  // Coarse pre-split so narrow features are not missed by a single panel.
  constexpr int kPanels = 4;
  const double width = (b - a) / kPanels;
  for (int i = 0; i < kPanels; ++i) push(a + width * i, (i + 1 == kPanels) ? b : a + width * (i + 1), 0);

  int splits = 0;
  while (!panels.empty() && error > std::max(opt.abs_tol, opt.rel_tol * std::abs(value)) &&
         splits < opt.max_subdivisions) {
    const Panel worst = panels.top();
    if (worst.depth >= opt.max_depth) break;
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) break;
    panels.pop();
    value -= worst.value;
    error -= worst.error;
    push(worst.a, mid, worst.depth + 1);
    push(mid, worst.b, worst.depth + 1);
    ++splits;
  }
  // Re-sum to shed the drift from incremental updates.
  out.value = 0.0;
  out.error = 0.0;
  std::vector<Panel> rest;
  rest.reserve(panels.size());
  while (!panels.empty()) {
    rest.push_back(panels.top());
    panels.pop();
  }
  std::sort(rest.begin(), rest.end(), [](const Panel& x, const Panel& y) { return x.a < y.a; });
  for (const auto& p : rest) {
    out.value += p.value;
    out.error += p.error;
  }
  return out;
}

}  // namespace detail

/// Integrates f over [a, b]. Either limit may be infinite; infinite ranges are
/// mapped onto a finite one with x = t / (1 - t^2).
template <typename F>
Result integrate(F&& f, double a, double b, const Options& opt = {}) {
  require(!std::isnan(a) && !std::isnan(b), ErrorCode::invalid_argument, "quadrature limits must not be NaN");
  double sign = 1.0;
  if (a > b) {
    std::swap(a, b);
    sign = -1.0;
  }
  Result out;
  if (a == b) return out;
  if (std::isinf(a) || std::isinf(b)) {
    auto to_t = [](double x) {
      if (std::isinf(x)) return x > 0 ? 1.0 : -1.0;
      if (x == 0.0) return 0.0;
      return (std::sqrt(1.0 + 4.0 * x * x) - 1.0) / (2.0 * x);
    };
    auto g = [&f](double t) {
      const double d = 1.0 - t * t;
      if (d <= 0.0) return 0.0;
      const double x = t / d;
      const double v = f(x) * (1.0 + t * t) / (d * d);
      return std::isfinite(v) ? v : 0.0;
    };
    out = detail::integrate_finite(g, to_t(a), to_t(b), opt);
  } else {
    out = detail::integrate_finite(f, a, b, opt);
  }
  out.value *= sign;
  return out;
}

}  // namespace pvq::quad
