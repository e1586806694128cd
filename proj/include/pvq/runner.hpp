#pragma once

/**
 * @file runner.hpp
 * @brief Batch execution of a RunConfig into a CompressionReport.
 *
 * Work items (distributions, tensors, chunk solves) are independent and fan
 * out over `config.threads` workers. Each item writes into its own slot, and
 * rows are sorted at the end, so the output does not depend on scheduling.
 * A failing item becomes a row with status "error"; the run continues.
 */

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>

#include "pvq/config.hpp"
#include "pvq/distributions.hpp"
#include "pvq/layerwise.hpp"
#include "pvq/npy.hpp"
#include "pvq/report.hpp"
#include "pvq/tensor_analysis.hpp"

#ifndef PVQ_VERSION
#define PVQ_VERSION "unknown"
#endif

namespace pvq {

struct RunOutcome {
  CompressionReport report;
  std::vector<std::string> warnings;
  std::size_t failures = 0;  // rows with status "error"
};

namespace detail {

/// Runs fn(i) for i in [0, count) on up to `threads` workers.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline ReportRow error_row(std::string source, std::string method, const std::string& message) {
  ReportRow r;
  r.source = std::move(source);
  r.method = std::move(method);
  r.status = "error";
  r.message = message;
  return r;
}

inline double error_from_snr(double signal, double snr) {
  if (is_infinite_snr(snr)) return 0.0;
  return signal * std::pow(10.0, -snr / 10.0);
}

/// (bits, prune ratio) pairs: one per bit-width under the equivalence, else
/// every bit-width against every configured ratio.
inline std::vector<std::pair<int, double>> comparison_points(const RunConfig& c) {
  std::vector<std::pair<int, double>> out;
  for (int b : c.bits) {
    if (c.equiv_sparsity) {
      out.emplace_back(b, equivalent_prune_ratio(b));
    } else {
      for (double s : c.sparsity) out.emplace_back(b, s);
    }
  }
  return out;
}

inline std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Distribution mode.

inline std::vector<ReportRow> distribution_rows(const DistributionSpec& d, const RunConfig& c) {
  std::vector<ReportRow> rows;
  const std::string source = describe(d);
  double kurt = kMissing;
  try {
    kurt = distribution_kurtosis(d);
  } catch (const Error&) {
    // Infinite kurtosis (untruncated t with nu <= 4) is left blank.
  }
  const double signal = second_moment(d);
  std::map<int, std::pair<double, ErrorBreakdown>> quant;
  for (int b : c.bits) {
    const double delta = optimal_scale(d, b);
    quant[b] = {delta, expected_quant_error(d, make_grid(b, delta))};
  }
  for (const auto& [b, ratio] : detail::comparison_points(c)) {
    const auto& [delta, q] = quant[b];
    const auto p = expected_prune_error(d, ratio);
    ReportRow r;
    r.source = source;
    r.method = "tradeoff";
    r.bits = b;
    r.prune_ratio = ratio;
    r.delta = delta;
    r.signal = signal;
    r.quant_error = q.total;
    r.quant_snr_db = q.snr_db;
    r.prune_error = p.total;
    r.prune_snr_db = p.snr_db;
    r.winner = to_string(pick_winner(q.snr_db, p.snr_db));
    r.kurtosis = kurt;
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Input discovery.

inline bool is_activation_file(const std::filesystem::path& p) {
  const std::string name = p.filename().string();
  return name.size() > 8 && name.compare(name.size() - 8, 8, ".act.npy") == 0;
}

/// Expands directories into their *.npy files (activation files excluded),
/// sorted by path.
inline std::vector<std::filesystem::path> collect_inputs(const std::vector<std::string>& inputs,
                                                         std::vector<std::string>& warnings) {
  namespace fs = std::filesystem;
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    require(fs::exists(p), ErrorCode::io_error, "input '" + in + "' does not exist");
    if (fs::is_directory(p)) {
      std::size_t found = 0;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ".npy" && !is_activation_file(e.path())) {
          out.push_back(e.path());
          ++found;
        }
      }
      if (found == 0) warnings.push_back("no .npy tensors in '" + in + "'");
    } else {
      out.push_back(p);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Tensor mode.

inline std::vector<ReportRow> tensor_rows(const WeightTensor& t, const TensorReport& rep, const RunConfig& c) {
  std::vector<ReportRow> rows;
  const double signal = energy(t.values);
  std::map<int, const BitRecord*> by_bits;
  for (const auto& rec : rep.records) by_bits[rec.bits] = &rec;
  for (const auto& [b, ratio] : detail::comparison_points(c)) {
    const BitRecord& rec = *by_bits.at(b);
    const double prune_snr = c.equiv_sparsity ? rec.prune_snr_db : prune_tensor(t, ratio).snr_db;
    ReportRow r;
    r.source = t.name;
    r.method = "tradeoff";
    r.bits = b;
    r.prune_ratio = ratio;
    r.n = static_cast<long long>(rep.n);
    r.delta = rec.delta;
    r.signal = signal;
    r.quant_snr_db = rec.quant_snr_db;
    r.quant_error = detail::error_from_snr(signal, rec.quant_snr_db);
    r.prune_snr_db = prune_snr;
    r.prune_error = detail::error_from_snr(signal, prune_snr);
    r.winner = to_string(pick_winner(rec.quant_snr_db, prune_snr));
    r.kurtosis = rep.kurtosis;
    r.natural_sparsity = rec.natural_sparsity;
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<ReportRow> preference_rows(const PreferenceMap& map) {
  std::vector<ReportRow> rows;
  for (const auto& cell : map.cells) {
    if (!cell.has_data) {
      ReportRow r;
      r.source = "preference_map";
      r.method = "prune_probability";
      r.status = "no_data";
      r.bits = cell.bits;
      r.n = static_cast<long long>(cell.prune_count + cell.quant_count);
      rows.push_back(std::move(r));
      continue;
    }
    for (std::size_t i = 0; i < cell.kurtosis.size(); ++i) {
      ReportRow r;
      r.source = "preference_map";
      r.method = "prune_probability";
      r.bits = cell.bits;
      r.n = static_cast<long long>(cell.prune_count + cell.quant_count);
      r.kurtosis = cell.kurtosis[i];
      r.probability = cell.prune_probability[i];
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Layerwise mode.

/// Layer kind from the weight shape: (o,i,3,3) conv3x3, (o,i,1,1) pointwise,
/// (o,i) linear.
inline LayerKind infer_layer_kind(const WeightTensor& w) {
  const auto& s = w.shape;
  if (s.size() == 4 && s[2] == 3 && s[3] == 3) return LayerKind::conv3x3;
  if (s.size() == 4 && s[2] == 1 && s[3] == 1) return LayerKind::pointwise;
  if (s.size() == 2) return LayerKind::linear;
  throw Error(ErrorCode::dimension_mismatch, "cannot infer a layer kind for tensor '" + w.name + "'");
}

/// Activations from "<stem>.act.npy" next to the weights (shape rows x in*taps),
/// or seeded standard-normal samples when that file is absent.
inline Matrix load_activations(const std::filesystem::path& weights_path, const WeightTensor& w, const RunConfig& c) {
  const std::size_t cols = w.values.size() / w.shape.at(0);
  auto act_path = weights_path;
  act_path.replace_extension(".act.npy");
  if (std::filesystem::exists(act_path)) {
    const auto a = npy::load_tensor(act_path);
    require(a.shape.size() == 2 && a.shape[1] == cols, ErrorCode::dimension_mismatch,
            "activation file '" + act_path.string() + "' must have shape (rows, " + std::to_string(cols) + ")");
    Matrix x(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < a.shape[0]; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a.values[i * cols + j];
    return x;
  }
  std::mt19937_64 rng(c.seed ^ fnv1a(w.name));
  std::normal_distribution<double> nd;
  Matrix x(c.samples, static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = nd(rng);
  return x;
}

/// Sparsity budget s for a chunk of n coordinates at prune ratio c.
inline int keep_count(double ratio, Eigen::Index n) {
  const auto kept = static_cast<long long>(std::llround((1.0 - ratio) * static_cast<double>(n)));
  return static_cast<int>(std::clamp<long long>(kept, 1, n));
}

struct ChunkTask {
  std::size_t problem = 0;
  Method method = Method::quant_heur;
  int bits = 0;
  double ratio = kMissing;
};

inline ReportRow solve_task(const LayerProblem& p, const ChunkTask& task, const RunConfig& c) {
  ReportRow r;
  r.source = p.label;
  r.method = to_string(task.method);
  r.bits = task.bits;
  r.n = p.n();
  try {
    const double signal = (p.x * p.w_orig).squaredNorm();
    r.signal = signal;
    SolveReport s;
    switch (task.method) {
      case Method::quant_heur: s = quant_heuristic(p); break;
      case Method::quant_bound: s = quant_lower_bound(p).second; break;
      case Method::prune_heur: s = prune_heuristic(p, keep_count(task.ratio, p.n())); break;
      case Method::prune_exact: {
        SearchBudget budget;
        budget.node_cap = c.node_cap;
        budget.time_cap_seconds = c.time_cap > 0.0 ? c.time_cap : std::numeric_limits<double>::infinity();
        s = prune_exact(p, keep_count(task.ratio, p.n()), budget);
        break;
      }
      case Method::oracle: throw Error(ErrorCode::invalid_argument, "oracle is not a runner method");
    }
    r.status = to_string(s.status);
    r.objective = s.objective;
    r.lower_bound = std::isfinite(s.lower_bound) ? s.lower_bound : kMissing;
    r.snr_db = s.snr_db;
    r.iterations = s.iterations;
    if (task.method == Method::quant_heur || task.method == Method::quant_bound) {
      r.delta = p.delta;
    } else {
      r.prune_ratio = task.ratio;
    }
  } catch (const std::exception& e) {
    r.status = "error";
    r.message = e.what();
  }
  return r;
}

/// Per-layer energy-weighted rows: objective and signal are summed over chunks
/// and snr_db = 10 log10(sum c / sum E).
inline std::vector<ReportRow> aggregate_rows(const std::string& layer, const std::vector<ReportRow>& chunk_rows) {
  std::map<std::tuple<long long, std::string, double>, std::vector<const ReportRow*>> groups;
  for (const auto& r : chunk_rows) {
    groups[{r.bits, r.method, std::isnan(r.prune_ratio) ? -1.0 : r.prune_ratio}].push_back(&r);
  }
  std::vector<ReportRow> out;
  for (const auto& [key, rows] : groups) {
    ReportRow a;
    a.source = layer;
    a.method = std::get<1>(key);
    a.bits = std::get<0>(key);
    a.prune_ratio = rows.front()->prune_ratio;
    a.delta = rows.front()->delta;
    a.objective = a.signal = a.lower_bound = 0.0;
    bool error = false, timeout = false;
    for (const auto* r : rows) {
      a.n += r->n;
      a.iterations += r->iterations;
      if (r->status == "error") {
        error = true;
        continue;
      }
      timeout = timeout || r->status == "timeout";
      a.signal += r->signal;
      a.objective += std::max(0.0, r->objective);
      a.lower_bound += std::max(0.0, r->lower_bound);
    }
    if (a.method == "quant_heur" || a.method == "prune_heur") a.lower_bound = kMissing;
    if (error) {
      a.status = "error";
      a.message = "one or more chunks failed";
      a.objective = a.lower_bound = a.signal = kMissing;
    } else {
      a.status = a.method == "quant_bound" ? "bound"
                 : a.method == "prune_exact" ? (timeout ? "timeout" : "optimal")
                                             : "feasible";
      a.snr_db = a.signal > 0.0 ? snr_db(a.signal, a.objective) : kMissing;
    }
    a.message += (a.message.empty() ? "" : "; ") + std::string("aggregate of ") + std::to_string(rows.size()) +
                 " chunks";
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<ReportRow> layerwise_rows(const std::filesystem::path& path, const RunConfig& c) {
  const auto w = npy::load_tensor(path);
  validate(w);
  const LayerKind kind = c.layer_kind == "auto" ? infer_layer_kind(w) : parse_layer_kind(c.layer_kind);
  const Matrix acts = load_activations(path, w, c);

  std::vector<LayerProblem> problems;
  std::vector<ChunkTask> tasks;
  for (int b : c.bits) {
    const double delta = quantize_tensor(w, b).delta;
    const std::size_t first = problems.size();
    auto chunk = make_chunk_problems(w, acts, kind, delta, b);
    for (auto& p : chunk) problems.push_back(std::move(p));
    std::vector<double> ratios = c.equiv_sparsity ? std::vector<double>{equivalent_prune_ratio(b)} : c.sparsity;
    for (std::size_t i = first; i < problems.size(); ++i) {
      tasks.push_back({i, Method::quant_heur, b, kMissing});
      tasks.push_back({i, Method::quant_bound, b, kMissing});
      for (double ratio : ratios) {
        tasks.push_back({i, Method::prune_heur, b, ratio});
        tasks.push_back({i, Method::prune_exact, b, ratio});
      }
    }
  }
  std::vector<ReportRow> rows(tasks.size());
  detail::parallel_for(tasks.size(), c.threads,
                       [&](std::size_t i) { rows[i] = solve_task(problems[tasks[i].problem], tasks[i], c); });
  const std::size_t chunks_per_bits = problems.size() / c.bits.size();
  if (chunks_per_bits > 1) {
    auto agg = aggregate_rows(w.name, rows);
    rows.insert(rows.end(), agg.begin(), agg.end());
  }
  return rows;
}

// ---------------------------------------------------------------------------

inline RunOutcome run(const RunConfig& config) {
  validate(config);
  RunOutcome out;
  auto& report = out.report;
  report.metadata.tool_version = PVQ_VERSION;
  report.metadata.mode = to_string(config.mode);
  report.metadata.config_hash = config_hash(config);
  report.metadata.created_at = detail::now_utc();
  report.metadata.seed = config.seed;
  report.metadata.extra = {
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION)},
      {"boost", BOOST_LIB_VERSION},
      {"threads", std::to_string(config.threads)},
      {"config", canonical(config)},
  };

  std::vector<std::vector<ReportRow>> slots;
  if (config.mode == Mode::distribution) {
    slots.resize(config.distributions.size());
    detail::parallel_for(slots.size(), config.threads, [&](std::size_t i) {
      try {
        slots[i] = distribution_rows(parse_distribution(config.distributions[i]), config);
      } catch (const std::exception& e) {
        slots[i] = {detail::error_row(config.distributions[i], "tradeoff", e.what())};
      }
    });
  } else {
    const auto paths = collect_inputs(config.inputs, out.warnings);
    if (config.mode == Mode::tensor) {
      slots.resize(paths.size());
      std::vector<std::optional<TensorReport>> reports(paths.size());
      detail::parallel_for(paths.size(), config.threads, [&](std::size_t i) {
        try {
          const auto t = npy::load_tensor(paths[i]);
          reports[i] = analyze_tensor(t, config.bits);
          slots[i] = tensor_rows(t, *reports[i], config);
        } catch (const std::exception& e) {
          slots[i] = {detail::error_row(paths[i].stem().string(), "tradeoff", e.what())};
        }
      });
      if (config.preference_map) {
        std::vector<TensorReport> ok;
        for (auto& r : reports)
          if (r) ok.push_back(*r);
        if (ok.empty()) {
          out.warnings.push_back("preference map skipped: no tensors analyzed");
        } else {
          slots.push_back(preference_rows(preference_map(ok, config.grid_points)));
        }
      }
    } else {
      // Chunk solves parallelize inside each layer.
      for (const auto& p : paths) {
        try {
          slots.push_back(layerwise_rows(p, config));
        } catch (const std::exception& e) {
          slots.push_back({detail::error_row(p.stem().string(), "layerwise", e.what())});
        }
      }
    }
  }

  for (auto& s : slots)
    for (auto& r : s) report.rows.push_back(std::move(r));
  sort_rows(report.rows);
  for (const auto& r : report.rows) out.failures += r.status == "error";
  return out;
}

}  // namespace pvq
