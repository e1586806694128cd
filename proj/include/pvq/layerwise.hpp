#pragma once

/**
 * @file layerwise.hpp
 * @brief Per-layer post-training compression with bounds.
 *
 * One output channel (or a chunk of its input features) is the problem
 *   min_w || X (delta w) - X w_orig ||^2,  w integer in [w_min, w_max]
 * for quantization and
 *   min_w || X w - X w_orig ||^2,  ||w||_0 <= s
 * for pruning. Quantization gets a heuristic upper bound and a dual lower
 * bound certified by an eigenvalue check; pruning gets a magnitude+refit
 * heuristic and an exact best-first branch-and-bound.
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pvq/common.hpp"
#include "pvq/distributions.hpp"
#include "pvq/linalg.hpp"
#include "pvq/tensor_analysis.hpp"

namespace pvq {

using linalg::Matrix;
using linalg::Vector;

struct LayerProblem {
  Matrix x;       // rows = samples, columns = weight coordinates
  Vector w_orig;  // original weights
  double delta = 1.0;
  long long wmin = -8;
  long long wmax = 7;
  std::string label;

  Eigen::Index n() const { return w_orig.size(); }
};

inline void validate(const LayerProblem& p) {
  require(p.n() >= 1, ErrorCode::invalid_argument, "layer problem needs at least one weight");
  require(p.x.rows() >= 1, ErrorCode::invalid_argument, "layer problem needs at least one sample row");
  require(p.x.cols() == p.n(), ErrorCode::dimension_mismatch,
          "activation columns (" + std::to_string(p.x.cols()) + ") != weight count (" + std::to_string(p.n()) + ")");
  require(p.x.allFinite() && p.w_orig.allFinite(), ErrorCode::invalid_argument, "layer problem has non-finite data");
  require(std::isfinite(p.delta) && p.delta > 0.0, ErrorCode::invalid_argument, "quantization scale must be positive");
  require(p.wmin < p.wmax, ErrorCode::invalid_argument, "integer limits must satisfy wmin < wmax");
}

/// Layer problem on the signed b-bit grid.
inline LayerProblem make_layer_problem(Matrix x, Vector w_orig, double delta, int bits, std::string label = {}) {
  const auto grid = make_grid(bits, delta);
  LayerProblem p{std::move(x), std::move(w_orig), delta, grid.wmin, grid.wmax, std::move(label)};
  validate(p);
  return p;
}

// ---------------------------------------------------------------------------
// Quadratic form.

/// E(w) = 1/2 w'Pw - q'w + c with P = 2 delta^2 X'X, q = 2 delta X'X w_orig,
/// c = ||X w_orig||^2.
struct QpForm {
  Matrix p;
  Vector q;
  double c = 0.0;

  double reduced(const Vector& w) const { return 0.5 * w.dot(p * w) - q.dot(w); }
  double full(const Vector& w) const { return reduced(w) + c; }
};

inline QpForm build_qp(const LayerProblem& prob) {
  validate(prob);
  const Matrix gram = prob.x.transpose() * prob.x;
  const Vector xw = prob.x * prob.w_orig;
  QpForm qp;
  qp.p = 2.0 * prob.delta * prob.delta * gram;
  qp.p = 0.5 * (qp.p + qp.p.transpose());
  qp.q = 2.0 * prob.delta * (prob.x.transpose() * xw);
  qp.c = xw.squaredNorm();
  return qp;
}

/// ||X (delta w) - X w_orig||^2 evaluated directly.
inline double quant_objective(const LayerProblem& p, const Vector& w_int) {
  return (p.x * (p.delta * w_int - p.w_orig)).squaredNorm();
}

/// ||X w - X w_orig||^2 for real-valued weights.
inline double weight_objective(const LayerProblem& p, const Vector& w) { return (p.x * (w - p.w_orig)).squaredNorm(); }

/// Output-activation SNR 10 log10(c / E); E <= 0 maps to the +inf sentinel.
inline double activation_snr(double objective, double c) {
  require(c > 0.0, ErrorCode::invalid_argument, "activation SNR undefined for a zero original output");
  return objective <= 0.0 ? kInfiniteSnr : 10.0 * std::log10(c / objective);
}

// ---------------------------------------------------------------------------
// Reports.

enum class Method { quant_heur, quant_bound, prune_heur, prune_exact, oracle };
enum class Status { optimal, feasible, bound, timeout, error };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::quant_heur: return "quant_heur";
    case Method::quant_bound: return "quant_bound";
    case Method::prune_heur: return "prune_heur";
    case Method::prune_exact: return "prune_exact";
    case Method::oracle: return "oracle";
  }
  return "unknown";
}

inline std::string to_string(Status s) {
  switch (s) {
    case Status::optimal: return "optimal";
    case Status::feasible: return "feasible";
    case Status::bound: return "bound";
    case Status::timeout: return "timeout";
    case Status::error: return "error";
  }
  return "unknown";
}

struct SolveReport {
  Method method = Method::oracle;
  Status status = Status::feasible;
  double objective = 0.0;    // E, or the certified lower bound for quant_bound
  double lower_bound = 0.0;  // best proven lower bound on the global optimum
  double snr_db = kInfiniteSnr;
  long long iterations = 0;  // sweeps, ascent steps, or B&B nodes
  double seconds = 0.0;
  Vector weights;                 // real-valued compressed weights
  std::vector<long long> levels;  // integer levels (quantization only)
  std::vector<int> mask;          // kept coordinates (pruning only)
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline Vector clamp_round(const Vector& w, long long lo, long long hi) {
  Vector out(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    out(i) = std::clamp(std::nearbyint(w(i)), static_cast<double>(lo), static_cast<double>(hi));
  }
  return out;
}

inline std::vector<long long> to_levels(const Vector& w) {
  std::vector<long long> out(static_cast<std::size_t>(w.size()));
  for (Eigen::Index i = 0; i < w.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<long long>(w(i));
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Quantization heuristic.

inline constexpr int kMaxCoordinateSweeps = 100;

/// Clipped rounding of the continuous minimizer, then greedy coordinate
/// descent w_i <- clamp(round((q_i - sum_{j!=i} P_ij w_j) / P_ii)) until a full
/// sweep changes nothing.
inline SolveReport quant_heuristic(const LayerProblem& prob) {
  const auto t0 = detail::Clock::now();
  const QpForm qp = build_qp(prob);
  const Vector continuous = linalg::pinv_solve(qp.p, qp.q);
  Vector w = detail::clamp_round(continuous, prob.wmin, prob.wmax);
  Vector pw = qp.p * w;
  const double lo = static_cast<double>(prob.wmin), hi = static_cast<double>(prob.wmax);

  int sweeps = 0;
  for (; sweeps < kMaxCoordinateSweeps; ++sweeps) {
    bool changed = false;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double pii = qp.p(i, i);
      if (!(pii > 0.0)) continue;
      const double rest = qp.q(i) - (pw(i) - pii * w(i));
      const double target = std::clamp(std::nearbyint(rest / pii), lo, hi);
      const double step = target - w(i);
      if (step == 0.0) continue;
      const double gain = step * (pw(i) - qp.q(i)) + 0.5 * step * step * pii;
      if (gain < 0.0) {
        w(i) = target;
        pw += step * qp.p.col(i);
        changed = true;
      }
    }
    if (!changed) break;
  }

  SolveReport r;
  r.method = Method::quant_heur;
  r.status = Status::feasible;
  r.objective = quant_objective(prob, w);
  r.lower_bound = -std::numeric_limits<double>::infinity();
  r.snr_db = activation_snr(r.objective, qp.c);
  r.iterations = sweeps + 1;
  r.weights = prob.delta * w;
  r.levels = detail::to_levels(w);
  r.seconds = detail::seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------
// Dual lower bound for quantization.

/**
 * Certificate for the relaxation z_i (z_i - 1) >= 0 of the integer problem,
 * posed on z = w - shift. Feasibility of
 *
 *     [ P - diag(lambda)    q_s - lambda/2 ]
 *     [ (q_s - lambda/2)'   gamma          ]  >= 0,   lambda >= 0
 *
 * gives 1/2 z'Pz - q_s'z >= -gamma/2 for every integer z, hence
 * E(w) >= c + kappa - gamma/2 with q_s = q - P shift and
 * kappa = 1/2 shift'P shift - q'shift.
 */
struct DualCertificate {
  Vector lambda;
  double gamma = 0.0;
  Vector shift;
  double shift_constant = 0.0;
  double bound = 0.0;         // lower bound on E
  double psd_residual = 0.0;  // smallest eigenvalue of the block matrix
  double psd_tolerance = 0.0;
  bool fallback = false;  // lambda = 0 continuous-relaxation certificate
  bool verified = false;
};

inline constexpr int kMaxDualIterations = 500;
inline constexpr double kDualStopImprovement = 1e-8;
inline constexpr double kPsdTolerance = 1e-7;

/// Block matrix of the certificate.
inline Matrix certificate_matrix(const QpForm& qp, const DualCertificate& cert) {
  const Eigen::Index n = qp.q.size();
  const Vector qs = qp.q - qp.p * cert.shift;
  Matrix m(n + 1, n + 1);
  m.topLeftCorner(n, n) = qp.p;
  m.topLeftCorner(n, n).diagonal() -= cert.lambda;
  const Vector v = qs - 0.5 * cert.lambda;
  m.topRightCorner(n, 1) = v;
  m.bottomLeftCorner(1, n) = v.transpose();
  m(n, n) = cert.gamma;
  return m;
}

/// Recomputes the smallest eigenvalue of the block matrix and checks it
/// against -kPsdTolerance * ||P||, together with lambda >= 0.
inline bool verify_certificate(const QpForm& qp, DualCertificate& cert) {
  cert.psd_residual = linalg::min_eigenvalue(certificate_matrix(qp, cert));
  cert.psd_tolerance = kPsdTolerance * std::max(linalg::spectral_norm(qp.p), std::numeric_limits<double>::min());
  cert.verified = cert.lambda.minCoeff() >= 0.0 && cert.psd_residual >= -cert.psd_tolerance;
  return cert.verified;
}

namespace detail {

struct DualPoint {
  bool feasible = false;
  double value = -std::numeric_limits<double>::infinity();  // g(lambda) = -1/2 v'A^{-1}v
  Vector x;                                                 // A^{-1} v
  Matrix a_inv;
};

inline DualPoint evaluate_dual(const Matrix& p, const Vector& qs, const Vector& lambda, bool need_inverse) {
  DualPoint d;
  Matrix a = p;
  a.diagonal() -= lambda;
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return d;
  const Matrix& l = llt.matrixLLT();
  const double max_diag = l.diagonal().cwiseAbs().maxCoeff();
  // Reject numerically singular factors; their inverse is meaningless.
  if (l.diagonal().cwiseAbs().minCoeff() <= 1e-7 * max_diag) return d;
  const Vector v = qs - 0.5 * lambda;
  d.x = llt.solve(v);
  d.value = -0.5 * v.dot(d.x);
  if (!std::isfinite(d.value)) return d;
  d.feasible = true;
  if (need_inverse) d.a_inv = llt.solve(Matrix::Identity(p.rows(), p.cols()));
  return d;
}

}  // namespace detail

/**
 * Maximizes g(lambda) = -1/2 (q_s - lambda/2)' (P - diag lambda)^{-1} (q_s - lambda/2)
 * over lambda >= 0 with P - diag(lambda) positive definite, by projected Newton
 * ascent with backtracking (gradient 1/2 x(1 - x), Hessian -D A^{-1} D with
 * D = diag(x - 1/2)). The shift is the floor of the continuous minimizer,
 * clamped into the integer box. Any feasible lambda certifies a bound, and the
 * lambda = 0 certificate is the fallback whenever verification fails.
 */
inline std::pair<DualCertificate, SolveReport> quant_lower_bound(const LayerProblem& prob) {
  const auto t0 = detail::Clock::now();
  const QpForm qp = build_qp(prob);
  const Eigen::Index n = prob.n();

  const Vector continuous = linalg::pinv_solve(qp.p, qp.q);
  Vector shift(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    shift(i) = std::clamp(std::floor(continuous(i)), static_cast<double>(prob.wmin), static_cast<double>(prob.wmax - 1));
  }
  const Vector qs = qp.q - qp.p * shift;
  const double kappa = 0.5 * shift.dot(qp.p * shift) - qp.q.dot(shift);
  const double scale = std::max(linalg::spectral_norm(qp.p), std::numeric_limits<double>::min());

  auto finish = [&](Vector lambda, double gamma, bool fallback) {
    DualCertificate cert;
    cert.lambda = std::move(lambda);
    cert.shift = shift;
    cert.shift_constant = kappa;
    cert.fallback = fallback;
    // Slack keeps the Schur complement strictly positive after rounding.
    cert.gamma = gamma + 1e-12 * (std::abs(gamma) + scale);
    cert.bound = qp.c + kappa - 0.5 * cert.gamma;
    verify_certificate(qp, cert);
    return cert;
  };

  auto fallback_certificate = [&]() {
    const Vector x = linalg::pinv_solve(qp.p, qs);
    return finish(Vector::Zero(n), qs.dot(x), true);
  };

  Vector lambda = Vector::Zero(n);
  detail::DualPoint cur = detail::evaluate_dual(qp.p, qs, lambda, true);
  int iterations = 0;
  if (cur.feasible) {
    for (; iterations < kMaxDualIterations; ++iterations) {
      const Vector x = cur.x;
      const Vector grad = 0.5 * x.cwiseProduct(Vector::Ones(n) - x);
      std::vector<int> free;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (lambda(i) > 0.0 || grad(i) > 0.0) free.push_back(static_cast<int>(i));
      }
      if (free.empty()) break;
      const Vector grad_f = linalg::subvector(grad, free);
      if (grad_f.cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + std::abs(cur.value))) break;

      // Newton direction on the free coordinates.
      const Vector dv = x - 0.5 * Vector::Ones(n);
      Matrix h = linalg::submatrix(cur.a_inv, free);
      for (Eigen::Index i = 0; i < h.rows(); ++i)
        for (Eigen::Index j = 0; j < h.cols(); ++j) h(i, j) *= dv(free[i]) * dv(free[j]);
      h.diagonal().array() += 1e-12 * (h.trace() + 1.0);
      Vector dir_f = h.ldlt().solve(grad_f);
      if (!dir_f.allFinite() || dir_f.dot(grad_f) <= 0.0) dir_f = grad_f;

      Vector direction = Vector::Zero(n);
      for (std::size_t k = 0; k < free.size(); ++k) direction(free[k]) = dir_f(static_cast<Eigen::Index>(k));

      auto try_direction = [&](const Vector& dir, double first_step) -> std::optional<Vector> {
        double step = first_step;
        for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
          const Vector candidate = (lambda + step * dir).cwiseMax(0.0);
          const auto trial = detail::evaluate_dual(qp.p, qs, candidate, false);
          if (trial.feasible && trial.value > cur.value) return candidate;
        }
        return std::nullopt;
      };
      auto next = try_direction(direction, 1.0);
      if (!next) next = try_direction(grad, 1.0 / std::max(grad.cwiseAbs().maxCoeff(), 1e-300));
      if (!next) break;

      const double previous = cur.value;
      lambda = *next;
      cur = detail::evaluate_dual(qp.p, qs, lambda, true);
      if (!cur.feasible) break;
      if (cur.value - previous <= kDualStopImprovement * std::max(1.0, std::abs(previous))) {
        ++iterations;
        break;
      }
    }
  }

  DualCertificate cert;
  if (cur.feasible) {
    const Vector v = qs - 0.5 * lambda;
    cert = finish(lambda, v.dot(cur.x), false);
  }
  if (!cert.verified) {
    cert = fallback_certificate();
  } else {
    // Ascent only ever improves on lambda = 0; keep whichever certificate is tighter.
    DualCertificate base = fallback_certificate();
    if (base.verified && base.bound > cert.bound) cert = base;
  }

  SolveReport r;
  r.method = Method::quant_bound;
  r.status = Status::bound;
  r.objective = cert.bound;
  r.lower_bound = cert.bound;
  r.snr_db = activation_snr(cert.bound, qp.c);
  r.iterations = iterations;
  r.seconds = detail::seconds_since(t0);
  return {cert, r};
}

// ---------------------------------------------------------------------------
// Pruning.

namespace detail {

struct Refit {
  Vector weights;  // full length, zero off the support
  double objective = 0.0;
};

/// Least-squares refit on `support`: min ||X_S w_S - X w_orig||^2 via the
/// pseudo-inverse of the support Gram block. Objective c - b_S' w_S.
inline Refit refit_support(const Matrix& gram, const Vector& target, double c, const std::vector<int>& support) {
  Refit r;
  r.weights = Vector::Zero(gram.rows());
  if (support.empty()) {
    r.objective = c;
    return r;
  }
  const Vector b = linalg::subvector(target, support);
  const Vector w = linalg::pinv_solve(linalg::submatrix(gram, support), b);
  for (std::size_t k = 0; k < support.size(); ++k) r.weights(support[k]) = w(static_cast<Eigen::Index>(k));
  r.objective = std::max(0.0, c - b.dot(w));
  return r;
}

/// Top-s coordinates by |w|, ties to the lower index; returned sorted.
inline std::vector<int> magnitude_mask(const Vector& w, int s) {
  std::vector<int> order(static_cast<std::size_t>(w.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return std::abs(w(a)) > std::abs(w(b)); });
  order.resize(static_cast<std::size_t>(s));
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace detail

inline void require_sparsity(const LayerProblem& p, int s) {
  require(s >= 1, ErrorCode::invalid_argument, "sparsity budget s must be >= 1");
  require(s <= p.n(), ErrorCode::invalid_argument,
          "sparsity budget s (" + std::to_string(s) + ") exceeds dimension n (" + std::to_string(p.n()) + ")");
}

/// Keeps the s largest |w_orig| and refits them by least squares.
inline SolveReport prune_heuristic(const LayerProblem& prob, int s) {
  const auto t0 = detail::Clock::now();
  validate(prob);
  require_sparsity(prob, s);
  const Matrix gram = prob.x.transpose() * prob.x;
  const Vector target = gram * prob.w_orig;
  const double c = (prob.x * prob.w_orig).squaredNorm();
  const auto mask = detail::magnitude_mask(prob.w_orig, s);
  const auto fit = detail::refit_support(gram, target, c, mask);

  SolveReport r;
  r.method = Method::prune_heur;
  r.status = Status::feasible;
  r.weights = fit.weights;
  r.mask = mask;
  r.objective = weight_objective(prob, fit.weights);
  r.lower_bound = -std::numeric_limits<double>::infinity();
  r.snr_db = activation_snr(r.objective, c);
  r.iterations = 1;
  r.seconds = detail::seconds_since(t0);
  return r;
}

struct SearchBudget {
  long long node_cap = 2'000'000;
  double time_cap_seconds = 600.0;
  int max_dimension = 36;
};

/// Mask formulation of a pruning solution: sum(mask) = s and
/// -mask*l <= w <= mask*u with l = u = 2 max|w|.
struct MaskProblem {
  int s = 0;
  std::vector<int> mask;  // 0/1 per coordinate
  double l = 0.0;
  double u = 0.0;
};

inline MaskProblem mask_problem(const SolveReport& pruned, Eigen::Index n, int s) {
  MaskProblem m;
  m.s = s;
  m.mask.assign(static_cast<std::size_t>(n), 0);
  for (int i : pruned.mask) m.mask[static_cast<std::size_t>(i)] = 1;
  const double big = 2.0 * (pruned.weights.size() > 0 ? pruned.weights.cwiseAbs().maxCoeff() : 0.0);
  m.l = m.u = big > 0.0 ? big : 1.0;
  return m;
}

/**
 * Exact pruning by best-first branch-and-bound over mask bits. A node fixes
 * some coordinates in or out; its bound is the least-squares error on every
 * coordinate not yet excluded. The branching coordinate is the undecided one
 * with the largest refit magnitude. The incumbent starts at prune_heuristic.
 * On budget exhaustion the report has status timeout, the incumbent, and the
 * smallest open-node bound as lower_bound.
 */
inline SolveReport prune_exact(const LayerProblem& prob, int s, const SearchBudget& budget = {}) {
  const auto t0 = detail::Clock::now();
  validate(prob);
  require_sparsity(prob, s);
  require(prob.n() <= budget.max_dimension, ErrorCode::too_large,
          "prune_exact: n = " + std::to_string(prob.n()) + " exceeds the cap " + std::to_string(budget.max_dimension));
  const int n = static_cast<int>(prob.n());
  const Matrix gram = prob.x.transpose() * prob.x;
  const Vector target = gram * prob.w_orig;
  const double c = (prob.x * prob.w_orig).squaredNorm();
  const double tol = 1e-12 * std::max(c, std::numeric_limits<double>::min());

  SolveReport best = prune_heuristic(prob, s);
  best.method = Method::prune_exact;
  double incumbent = best.objective;

  enum : char { undecided = 0, in = 1, out = 2 };
  struct Node {
    double bound;
    long long id;
    std::vector<char> state;
    bool operator>(const Node& o) const { return bound != o.bound ? bound > o.bound : id > o.id; }
  };
  auto candidates = [&](const std::vector<char>& st) {
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
      if (st[static_cast<std::size_t>(i)] != out) idx.push_back(i);
    return idx;
  };
  auto accept = [&](const std::vector<int>& support) {
    const auto fit = detail::refit_support(gram, target, c, support);
    const double e = weight_objective(prob, fit.weights);
    if (e < incumbent) {
      incumbent = e;
      best.objective = e;
      best.weights = fit.weights;
      best.mask = support;
    }
  };

  std::priority_queue<Node, std::vector<Node>, std::greater<>> open;
  long long next_id = 0;
  {
    std::vector<char> root(static_cast<std::size_t>(n), undecided);
    open.push({detail::refit_support(gram, target, c, candidates(root)).objective, next_id++, std::move(root)});
  }

  long long explored = 0;
  bool exhausted = false;
  while (!open.empty()) {
    if (open.top().bound >= incumbent - tol) {
      // Best-first: nothing left can improve the incumbent.
      while (!open.empty()) open.pop();
      break;
    }
    if (explored >= budget.node_cap || detail::seconds_since(t0) > budget.time_cap_seconds) {
      exhausted = true;
      break;
    }
    Node node = open.top();
    open.pop();
    ++explored;

    const auto support = candidates(node.state);
    const int fixed_in = static_cast<int>(std::count(node.state.begin(), node.state.end(), static_cast<char>(in)));
    if (static_cast<int>(support.size()) <= s) {
      accept(support);
      continue;
    }
    if (fixed_in == s) {
      std::vector<int> kept;
      for (int i = 0; i < n; ++i)
        if (node.state[static_cast<std::size_t>(i)] == in) kept.push_back(i);
      accept(kept);
      continue;
    }

    const auto fit = detail::refit_support(gram, target, c, support);
    int branch = -1;
    double largest = -1.0;
    for (int i : support) {
      if (node.state[static_cast<std::size_t>(i)] != undecided) continue;
      const double m = std::abs(fit.weights(i));
      if (m > largest) {
        largest = m;
        branch = i;
      }
    }

    Node keep{node.bound, next_id++, node.state};
    keep.state[static_cast<std::size_t>(branch)] = in;
    Node drop{0.0, next_id++, std::move(node.state)};
    drop.state[static_cast<std::size_t>(branch)] = out;
    drop.bound = detail::refit_support(gram, target, c, candidates(drop.state)).objective;
    if (keep.bound < incumbent - tol) open.push(std::move(keep));
    if (drop.bound < incumbent - tol) open.push(std::move(drop));
  }

  best.iterations = explored;
  if (exhausted) {
    best.status = Status::timeout;
    best.lower_bound = std::min(open.empty() ? incumbent : open.top().bound, incumbent);
  } else {
    best.status = Status::optimal;
    best.lower_bound = best.objective;
  }
  best.snr_db = activation_snr(best.objective, c);
  best.seconds = detail::seconds_since(t0);
  return best;
}

// ---------------------------------------------------------------------------
// Brute-force oracle.

enum class OracleMode { quant, prune };

inline constexpr double kOracleWorkLimit = 1e8;

namespace detail {

inline double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace detail

/// Exact optimum by exhaustive enumeration: every integer vector in the box
/// (quant) or every C(n, s) support with a QR least-squares refit (prune).
inline SolveReport brute_force_oracle(const LayerProblem& prob, OracleMode mode, std::optional<int> s = std::nullopt) {
  const auto t0 = detail::Clock::now();
  validate(prob);
  const int n = static_cast<int>(prob.n());
  const double c = (prob.x * prob.w_orig).squaredNorm();
  SolveReport r;
  r.method = Method::oracle;
  r.status = Status::optimal;

  if (mode == OracleMode::quant) {
    const double levels = static_cast<double>(prob.wmax - prob.wmin + 1);
    const double work = std::pow(levels, n);
    require(work <= kOracleWorkLimit, ErrorCode::too_large,
            "quant oracle: (wmax - wmin + 1)^n = " + std::to_string(work) + " exceeds the limit 1e8");
    const QpForm qp = build_qp(prob);
    Vector w = Vector::Constant(n, static_cast<double>(prob.wmin));
    Vector pw = qp.p * w;
    double value = qp.reduced(w);
    double best = value;
    Vector best_w = w;
    long long steps = 1;
    const double hi = static_cast<double>(prob.wmax);
    const double reset = static_cast<double>(prob.wmin - prob.wmax);
    while (true) {
      int i = 0;
      for (; i < n; ++i) {
        const double t = w(i) < hi ? 1.0 : reset;
        value += t * (pw(i) - qp.q(i)) + 0.5 * t * t * qp.p(i, i);
        pw += t * qp.p.col(i);
        w(i) += t;
        if (t == 1.0) break;
      }
      if (i == n) break;
      if (i >= 3) {
        // Periodic resync bounds the drift of the incremental updates.
        pw = qp.p * w;
        value = qp.reduced(w);
      }
      ++steps;
      if (value < best) {
        best = value;
        best_w = w;
      }
    }
    r.objective = quant_objective(prob, best_w);
    r.weights = prob.delta * best_w;
    r.levels = detail::to_levels(best_w);
    r.iterations = steps;
  } else {
    require(s.has_value(), ErrorCode::invalid_argument, "prune oracle needs a sparsity budget s");
    require_sparsity(prob, *s);
    const double work = detail::binomial(n, *s) * std::pow(static_cast<double>(n), 3);
    require(work <= kOracleWorkLimit, ErrorCode::too_large,
            "prune oracle: C(n,s) * n^3 = " + std::to_string(work) + " exceeds the limit 1e8");
    const Vector y = prob.x * prob.w_orig;
    std::vector<int> combo(static_cast<std::size_t>(*s));
    std::iota(combo.begin(), combo.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    long long count = 0;
    while (true) {
      const Matrix xs = linalg::columns(prob.x, combo);
      const Vector ws = xs.completeOrthogonalDecomposition().solve(y);
      const double e = (xs * ws - y).squaredNorm();
      ++count;
      if (e < best) {
        best = e;
        r.mask = combo;
        r.weights = Vector::Zero(n);
        for (std::size_t k = 0; k < combo.size(); ++k) r.weights(combo[k]) = ws(static_cast<Eigen::Index>(k));
      }
      // Next combination in lexicographic order.
      int k = *s - 1;
      while (k >= 0 && combo[static_cast<std::size_t>(k)] == n - *s + k) --k;
      if (k < 0) break;
      ++combo[static_cast<std::size_t>(k)];
      for (int j = k + 1; j < *s; ++j) combo[static_cast<std::size_t>(j)] = combo[static_cast<std::size_t>(j - 1)] + 1;
    }
    r.objective = best;
    r.iterations = count;
  }
  r.lower_bound = r.objective;
  r.snr_db = activation_snr(r.objective, c);
  r.seconds = detail::seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------
// Chunking.

enum class LayerKind { conv3x3, pointwise, linear };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::pointwise: return "pointwise";
    case LayerKind::linear: return "linear";
  }
  return "unknown";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  if (s == "conv3x3") return LayerKind::conv3x3;
  if (s == "pointwise") return LayerKind::pointwise;
  if (s == "linear") return LayerKind::linear;
  throw Error(ErrorCode::invalid_argument, "unknown layer kind '" + s + "'");
}

/// Coordinates per chunk: 4 input channels x 3x3 taps, or 36 input features.
inline constexpr int kChunkInputChannels = 4;
inline constexpr int kChunkFeatures = 36;

struct ChunkSlice {
  std::size_t output = 0;  // output channel / row
  std::size_t chunk = 0;   // chunk index along the input dimension
  std::size_t begin = 0;   // first flattened column
  std::size_t end = 0;     // one past the last column

  std::size_t size() const { return end - begin; }
};

/// Splits each output row of a weight tensor into independent slices of
/// flattened input coordinates (C order: input channel, then kernel taps).
/// A trailing remainder smaller than a full chunk is kept whole.
inline std::vector<ChunkSlice> chunk_layer(const WeightTensor& w, LayerKind kind) {
  validate(w);
  const auto& sh = w.shape;
  std::size_t outputs = 0, inputs = 0, taps = 1;
  switch (kind) {
    case LayerKind::conv3x3:
      require(sh.size() == 4 && sh[2] == 3 && sh[3] == 3, ErrorCode::dimension_mismatch,
              "conv3x3 weights must have shape (out, in, 3, 3)");
      outputs = sh[0];
      inputs = sh[1];
      taps = 9;
      break;
    case LayerKind::pointwise:
      require((sh.size() == 4 && sh[2] == 1 && sh[3] == 1) || sh.size() == 2, ErrorCode::dimension_mismatch,
              "pointwise weights must have shape (out, in, 1, 1) or (out, in)");
      outputs = sh[0];
      inputs = sh[1];
      break;
    case LayerKind::linear:
      require(sh.size() == 2, ErrorCode::dimension_mismatch, "linear weights must have shape (out, in)");
      outputs = sh[0];
      inputs = sh[1];
      break;
  }
  require(outputs > 0 && inputs > 0, ErrorCode::dimension_mismatch, "layer has an empty dimension");
  const std::size_t width = kind == LayerKind::conv3x3 ? kChunkInputChannels * taps : kChunkFeatures;
  const std::size_t cols = inputs * taps;
  std::vector<ChunkSlice> slices;
  for (std::size_t o = 0; o < outputs; ++o) {
    std::size_t chunk = 0;
    for (std::size_t b = 0; b < cols; b += width, ++chunk) {
      slices.push_back({o, chunk, b, std::min(cols, b + width)});
    }
  }
  return slices;
}

/// Builds one LayerProblem per slice from unfolded activations (rows x in*taps).
inline std::vector<LayerProblem> make_chunk_problems(const WeightTensor& w, const Matrix& activations, LayerKind kind,
                                                     double delta, int bits) {
  const auto slices = chunk_layer(w, kind);
  const std::size_t outputs = w.shape[0];
  const std::size_t cols = w.values.size() / outputs;
  require(static_cast<std::size_t>(activations.cols()) == cols, ErrorCode::dimension_mismatch,
          "activations have " + std::to_string(activations.cols()) + " columns, layer expects " + std::to_string(cols));
  std::vector<LayerProblem> problems;
  problems.reserve(slices.size());
  for (const auto& sl : slices) {
    const auto width = static_cast<Eigen::Index>(sl.size());
    Vector wo(width);
    for (Eigen::Index k = 0; k < width; ++k) wo(k) = w.values[sl.output * cols + sl.begin + static_cast<std::size_t>(k)];
    Matrix xs = activations.middleCols(static_cast<Eigen::Index>(sl.begin), width);
    problems.push_back(make_layer_problem(std::move(xs), std::move(wo), delta, bits,
                                          w.name + "/o" + std::to_string(sl.output) + "/c" + std::to_string(sl.chunk)));
  }
  return problems;
}

}  // namespace pvq
