#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "pvq/runner.hpp"

namespace {

using namespace pvq;
namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "pvq_test_runner" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

WeightTensor random_tensor(std::string name, std::vector<std::size_t> shape, std::uint64_t seed) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  WeightTensor t{std::move(name), std::move(shape), std::vector<double>(n)};
  for (auto& v : t.values) v = nd(rng);
  return t;
}

// --- config -----------------------------------------------------------------

TEST(Config, BitsSyntax) {
  EXPECT_EQ(parse_bits("2-8"), (std::vector<int>{2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(parse_bits("2, 4,8"), (std::vector<int>{2, 4, 8}));
  EXPECT_THROW(parse_bits("8-2"), Error);
  EXPECT_THROW(parse_bits("four"), Error);
}

TEST(Config, DistributionSyntax) {
  EXPECT_EQ(parse_distribution("gaussian").family, Family::gaussian);
  EXPECT_DOUBLE_EQ(parse_distribution("gaussian:2").scale, 2.0);
  EXPECT_DOUBLE_EQ(parse_distribution("uniform:3").range, 3.0);
  const auto t = parse_distribution("student_t:2:20");
  EXPECT_EQ(t.family, Family::truncated_student_t);
  EXPECT_DOUBLE_EQ(t.range, 20.0);
  EXPECT_TRUE(std::isinf(parse_distribution("student_t:3:inf").range));
  EXPECT_THROW(parse_distribution("cauchy"), Error);
  EXPECT_THROW(parse_distribution("student_t:2"), Error);  // infinite variance
}

TEST(Config, KeyValueTextOverrides) {
  RunConfig c;
  c.bits = {4};
  apply_config_text(c,
                    "# comment\n"
                    "mode = layerwise\n"
                    "bits = 2-3   # trailing comment\n"
                    "equiv-sparsity = false\n"
                    "sparsity = 0.5, 0.9\n"
                    "node_cap = 77\n"
                    "format = json\n");
  EXPECT_EQ(c.mode, Mode::layerwise);
  EXPECT_EQ(c.bits, (std::vector<int>{2, 3}));
  EXPECT_FALSE(c.equiv_sparsity);
  EXPECT_EQ(c.sparsity, (std::vector<double>{0.5, 0.9}));
  EXPECT_EQ(c.node_cap, 77);
  EXPECT_EQ(c.format, Format::json);
}

TEST(Config, ErrorsNameTheLine) {
  RunConfig c;
  try {
    apply_config_text(c, "bits = 4\nwhat = 1\n", "run.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(apply_config_text(c, "no equals sign\n"), Error);
}

TEST(Config, ValidationRejectsBadValues) {
  RunConfig c;
  c.bits = {1};
  EXPECT_THROW(validate(c), Error);
  c = RunConfig{};
  c.equiv_sparsity = false;
  EXPECT_THROW(validate(c), Error);
  c.sparsity = {1.0};
  EXPECT_THROW(validate(c), Error);
}

TEST(Config, HashIgnoresOutputAndThreads) {
  RunConfig a, b;
  b.output = "elsewhere.csv";
  b.threads = 8;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

// --- run: distribution mode -------------------------------------------------

TEST(Run, GaussianSweepQuantWinsEveryRow) {
  RunConfig c;
  const auto out = run(c);
  ASSERT_EQ(out.report.rows.size(), 7u);
  for (const auto& r : out.report.rows) {
    EXPECT_EQ(r.winner, "quant") << r.bits;
    EXPECT_EQ(r.status, "ok");
  }
  EXPECT_EQ(out.failures, 0u);
}

TEST(Run, ExplicitSparsityCrossesBitsAndRatios) {
  RunConfig c;
  c.bits = {2, 4};
  c.equiv_sparsity = false;
  c.sparsity = {0.5, 0.9};
  EXPECT_EQ(run(c).report.rows.size(), 4u);
}

// --- run: tensor mode -------------------------------------------------------

TEST(Run, EmptyDirectoryWarnsWithoutRows) {
  RunConfig c;
  c.mode = Mode::tensor;
  c.inputs = {fresh_dir("empty").string()};
  const auto out = run(c);
  EXPECT_TRUE(out.report.rows.empty());
  EXPECT_EQ(out.failures, 0u);
  EXPECT_EQ(out.warnings.size(), 1u);
}

TEST(Run, FailingTensorDoesNotAbortBatch) {
  const auto dir = fresh_dir("batch");
  npy::save_tensor(dir / "good.npy", random_tensor("good", {500}, 1));
  std::ofstream(dir / "bad.npy") << "not an npy file";
  RunConfig c;
  c.mode = Mode::tensor;
  c.bits = {4, 8};
  c.inputs = {dir.string()};
  const auto out = run(c);
  ASSERT_EQ(out.report.rows.size(), 3u);
  EXPECT_EQ(out.failures, 1u);
  EXPECT_EQ(out.report.rows[0].source, "bad");
  EXPECT_EQ(out.report.rows[0].status, "error");
  EXPECT_NE(out.report.rows[0].message.find("bad magic"), std::string::npos);
  EXPECT_EQ(out.report.rows[1].source, "good");
}

TEST(Run, PreferenceMapRowsAppended) {
  const auto dir = fresh_dir("pref");
  for (int i = 0; i < 4; ++i) npy::save_tensor(dir / ("t" + std::to_string(i) + ".npy"), random_tensor("t", {400}, i));
  RunConfig c;
  c.mode = Mode::tensor;
  c.bits = {2, 8};
  c.inputs = {dir.string()};
  c.preference_map = true;
  c.grid_points = 5;
  const auto out = run(c);
  std::size_t pref = 0;
  for (const auto& r : out.report.rows) pref += r.source == "preference_map";
  EXPECT_GE(pref, 2u);
}

// --- run: layerwise mode ----------------------------------------------------

TEST(Run, SingleChunkYieldsFourSolveReports) {
  const auto dir = fresh_dir("chunk");
  npy::save_tensor(dir / "fc.npy", random_tensor("fc", {1, 36}, 3));
  RunConfig c;
  c.mode = Mode::layerwise;
  c.bits = {4};
  c.inputs = {(dir / "fc.npy").string()};
  const auto out = run(c);
  ASSERT_EQ(out.report.rows.size(), 4u);
  std::vector<std::string> methods;
  for (const auto& r : out.report.rows) {
    methods.push_back(r.method);
    EXPECT_EQ(r.n, 36);
    EXPECT_NE(r.status, "error") << r.message;
  }
  EXPECT_EQ(methods, (std::vector<std::string>{"prune_exact", "prune_heur", "quant_bound", "quant_heur"}));
  // s = round((4/16) * 36) = 9 kept weights.
  const auto& exact = out.report.rows[0];
  const auto& heur = out.report.rows[1];
  EXPECT_LE(exact.objective, heur.objective + 1e-12);
  EXPECT_LE(out.report.rows[2].objective, out.report.rows[3].objective + 1e-7);
}

TEST(Run, ActivationFileIsUsed) {
  const auto dir = fresh_dir("acts");
  npy::save_tensor(dir / "fc.npy", random_tensor("fc", {2, 5}, 4));
  npy::save_tensor(dir / "fc.act.npy", WeightTensor{"a", {3, 5}, std::vector<double>(15, 0.0)});
  RunConfig c;
  c.mode = Mode::layerwise;
  c.bits = {4};
  c.inputs = {dir.string()};
  const auto out = run(c);
  // Zero activations leave c = 0, so every chunk row is an error.
  EXPECT_GT(out.failures, 0u);
  for (const auto& r : out.report.rows) EXPECT_EQ(r.status, "error");
}

TEST(Run, MultiChunkLayerGetsAggregateRows) {
  const auto dir = fresh_dir("agg");
  npy::save_tensor(dir / "conv.npy", random_tensor("conv", {1, 8, 3, 3}, 5));
  RunConfig c;
  c.mode = Mode::layerwise;
  c.bits = {2};
  c.inputs = {dir.string()};
  const auto out = run(c);
  ASSERT_EQ(out.report.rows.size(), 12u);
  double sum_e = 0.0, sum_c = 0.0;
  const ReportRow* agg = nullptr;
  for (const auto& r : out.report.rows) {
    if (r.method != "quant_heur") continue;
    if (r.source == "conv") {
      agg = &r;
    } else {
      sum_e += r.objective;
      sum_c += r.signal;
    }
  }
  ASSERT_NE(agg, nullptr);
  EXPECT_NEAR(agg->objective, sum_e, 1e-9 * sum_e);
  EXPECT_NEAR(agg->snr_db, 10.0 * std::log10(sum_c / sum_e), 1e-9);
}

TEST(Run, ThreadCountDoesNotChangeOutput) {
  const auto dir = fresh_dir("threads");
  npy::save_tensor(dir / "conv.npy", random_tensor("conv", {2, 4, 3, 3}, 6));
  npy::save_tensor(dir / "lin.npy", random_tensor("lin", {3, 20}, 7));
  RunConfig c;
  c.mode = Mode::layerwise;
  c.bits = {2, 3};
  c.inputs = {dir.string()};
  const auto one = to_csv(run(c).report);
  c.threads = 4;
  EXPECT_EQ(to_csv(run(c).report), one);
}

TEST(Run, MissingInputIsConfigError) {
  RunConfig c;
  c.mode = Mode::tensor;
  c.inputs = {"/definitely/not/here"};
  EXPECT_THROW(run(c), Error);
}

TEST(Run, KeepCount) {
  EXPECT_EQ(keep_count(0.75, 36), 9);
  EXPECT_EQ(keep_count(0.99, 10), 1);
  EXPECT_EQ(keep_count(0.0, 10), 10);
}

}  // namespace
