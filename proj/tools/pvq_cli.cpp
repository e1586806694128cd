// pvq: command-line front end for the pruning-vs-quantization analyses.
//
// Exit codes: 0 success, 1 configuration or usage error, 2 some rows failed.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pvq/config.hpp"
#include "pvq/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitPartial = 2;

struct Flags {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> bits;
  std::optional<std::string> equiv_sparsity;
  std::optional<std::string> sparsity;
  std::optional<long long> node_cap;
  std::optional<double> time_cap;
  std::optional<std::string> output;
  std::optional<std::string> format;
  std::optional<std::string> config_file;
  std::vector<std::string> inputs;
  std::vector<std::string> dists;
  std::optional<std::string> layer_kind;
  std::optional<int> samples;
  std::optional<int> grid_points;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--seed", f.seed, "Seed for synthetic sampling");
  cmd->add_option("--bits", f.bits, "Bit-widths, e.g. 2-8 or 2,4,8");
  cmd->add_option("--equiv-sparsity", f.equiv_sparsity, "Pair b bits with sparsity 1 - b/16 (true/false)");
  cmd->add_option("--sparsity", f.sparsity, "Sparsity ratios when the equivalence is off, e.g. 0.5,0.75");
  cmd->add_option("--node-cap", f.node_cap, "Branch-and-bound node limit per solve");
  cmd->add_option("--time-cap", f.time_cap, "Branch-and-bound wall-time limit per solve in seconds (0 = none)");
  cmd->add_option("-o,--output", f.output, "Output file (default: CSV to stdout)");
  cmd->add_option("--format", f.format, "csv or json");
  cmd->add_option("--config", f.config_file, "Key-value config file; its settings override flags");
}

pvq::RunConfig build_config(const std::string& command, const Flags& f) {
  pvq::RunConfig c;
  if (command == "analyze-dist") {
    c.mode = pvq::Mode::distribution;
  } else if (command == "layerwise") {
    c.mode = pvq::Mode::layerwise;
  } else {
    c.mode = pvq::Mode::tensor;
    c.preference_map = command == "preference-map";
  }
  c.threads = pvq::threads_from_env();
  c.inputs = f.inputs;
  if (!f.dists.empty()) c.distributions = f.dists;
  if (f.seed) c.seed = *f.seed;
  if (f.bits) pvq::apply_setting(c, "bits", *f.bits);
  if (f.equiv_sparsity) pvq::apply_setting(c, "equiv_sparsity", *f.equiv_sparsity);
  if (f.sparsity) {
    pvq::apply_setting(c, "sparsity", *f.sparsity);
    if (!f.equiv_sparsity) c.equiv_sparsity = false;
  }
  if (f.node_cap) c.node_cap = *f.node_cap;
  if (f.time_cap) c.time_cap = *f.time_cap;
  if (f.output) c.output = *f.output;
  if (f.format) c.format = pvq::parse_format(*f.format);
  if (f.layer_kind) c.layer_kind = *f.layer_kind;
  if (f.samples) c.samples = *f.samples;
  if (f.grid_points) c.grid_points = *f.grid_points;
  if (f.config_file) pvq::apply_config_file(c, *f.config_file);
  if (c.mode != pvq::Mode::distribution) {
    pvq::require(!c.inputs.empty(), pvq::ErrorCode::invalid_argument, "no input files or directories given");
  }
  pvq::validate(c);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pruning vs quantization: analytic, empirical and per-layer comparisons"};
  app.set_version_flag("--version", PVQ_VERSION);
  app.require_subcommand(1);

  Flags flags;
  auto* dist = app.add_subcommand("analyze-dist", "Analytic quant/prune SNR for distributions");
  add_common(dist, flags);
  dist->add_option("--dist", flags.dists,
                   "Distribution: gaussian[:sigma], uniform[:a], student_t:nu[:r] (repeatable)");

  auto* tensors = app.add_subcommand("analyze-tensors", "Per-tensor quant/prune SNR, kurtosis, natural sparsity");
  add_common(tensors, flags);
  tensors->add_option("inputs", flags.inputs, "NPY files or directories");

  auto* layer = app.add_subcommand("layerwise", "Per-chunk heuristics, bounds and exact pruning");
  add_common(layer, flags);
  layer->add_option("inputs", flags.inputs, "Weight NPY files or directories (activations in <stem>.act.npy)");
  layer->add_option("--layer-kind", flags.layer_kind, "conv3x3, pointwise, linear or auto");
  layer->add_option("--samples", flags.samples, "Synthetic activation rows when no activation file exists");

  auto* pref = app.add_subcommand("preference-map", "Tensor analysis plus the kurtosis preference map");
  add_common(pref, flags);
  pref->add_option("inputs", flags.inputs, "NPY files or directories");
  pref->add_option("--grid-points", flags.grid_points, "Kurtosis grid size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  pvq::RunConfig config;
  try {
    config = build_config(command, flags);
  } catch (const std::exception& e) {
    std::cerr << "pvq: config error: " << e.what() << "\n";
    return kExitConfig;
  }

  pvq::RunOutcome outcome;
  try {
    outcome = pvq::run(config);
  } catch (const std::exception& e) {
    std::cerr << "pvq: " << e.what() << "\n";
    return kExitConfig;
  }
  for (const auto& w : outcome.warnings) std::cerr << "pvq: warning: " << w << "\n";

  try {
    if (config.output.empty()) {
      std::cout << (config.format == pvq::Format::json ? pvq::to_json(outcome.report) : pvq::to_csv(outcome.report));
    } else {
      pvq::save_report(outcome.report, config.format, config.output);
    }
  } catch (const std::exception& e) {
    std::cerr << "pvq: " << e.what() << "\n";
    return kExitConfig;
  }

  if (outcome.failures > 0) {
    std::cerr << "pvq: " << outcome.failures << " row(s) failed\n";
    return kExitPartial;
  }
  return kExitOk;
}
