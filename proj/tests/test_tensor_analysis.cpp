#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "pvq/tensor_analysis.hpp"

namespace {

using namespace pvq;

WeightTensor make_tensor(std::vector<double> values, std::string name = "t") {
  WeightTensor t;
  t.name = std::move(name);
  t.shape = {values.size()};
  t.values = std::move(values);
  return t;
}

WeightTensor gaussian_tensor(std::size_t n, std::uint64_t seed, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sigma);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  return make_tensor(std::move(v), "gauss" + std::to_string(seed));
}

WeightTensor sample_tensor(const DistributionSpec& d, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = quantile(d, u(rng));
  return make_tensor(std::move(v), describe(d) + "#" + std::to_string(seed));
}

// --- quantize_tensor --------------------------------------------------------

TEST(QuantizeTensor, GridValuesAreFixedPoints) {
  // Scale 0.25 is candidate k = 200 for max|w| = 2 at 4 bits.
  const double d = 0.25;
  const auto t = make_tensor({-8 * d, -d, 0.0, d, 2 * d});
  const auto q = quantize_tensor(t, 4);
  EXPECT_DOUBLE_EQ(q.delta, d);
  EXPECT_EQ(q.values, t.values);
  EXPECT_TRUE(is_infinite_snr(q.snr_db));
}

TEST(QuantizeTensor, OutputOnGridAndIdempotent) {
  const auto t = gaussian_tensor(5000, 1);
  for (int b : {2, 4, 8}) {
    const auto q = quantize_tensor(t, b);
    const auto grid = make_grid(b, q.delta);
    for (double v : q.values) {
      const double idx = v / q.delta;
      EXPECT_NEAR(idx, std::nearbyint(idx), 1e-9);
      EXPECT_GE(idx, static_cast<double>(grid.wmin));
      EXPECT_LE(idx, static_cast<double>(grid.wmax));
      EXPECT_EQ(grid.quantize(v), v);
    }
  }
}

TEST(QuantizeTensor, GaussianInt4Snr) {
  const auto q = quantize_tensor(gaussian_tensor(100000, 42), 4);
  EXPECT_NEAR(q.snr_db, 19.1, 0.4);
}

TEST(QuantizeTensor, EightBitsBeatFourOnRandomTensors) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> sigma(0.01, 3.0);
  for (int i = 0; i < 100; ++i) {
    const auto t = gaussian_tensor(500, 1000 + i, sigma(rng));
    EXPECT_GE(quantize_tensor(t, 8).snr_db, quantize_tensor(t, 4).snr_db) << t.name;
  }
}

TEST(QuantizeTensor, AllZeroTensor) {
  const auto q = quantize_tensor(make_tensor({0.0, 0.0, 0.0}), 4);
  EXPECT_TRUE(is_infinite_snr(q.snr_db));
  EXPECT_DOUBLE_EQ(q.delta, scale_candidate(1, 1.0, 4));
}

TEST(QuantizeTensor, RejectsBadInput) {
  EXPECT_THROW(quantize_tensor(make_tensor({}), 4), Error);
  EXPECT_THROW(quantize_tensor(make_tensor({1.0, NAN}), 4), Error);
  EXPECT_THROW(quantize_tensor(make_tensor({1.0}), 1), Error);
  WeightTensor bad = make_tensor({1.0, 2.0});
  bad.shape = {3};
  EXPECT_THROW(quantize_tensor(bad, 4), Error);
}

// --- prune_tensor -----------------------------------------------------------

TEST(PruneTensor, NoPruningIsIdentity) {
  const auto t = make_tensor({3.0, -2.0, 1.0, 0.5});
  const auto p = prune_tensor(t, 0.0);
  EXPECT_EQ(p.values, t.values);
  EXPECT_TRUE(is_infinite_snr(p.snr_db));
}

TEST(PruneTensor, HandExample) {
  const auto p = prune_tensor(make_tensor({3.0, -2.0, 1.0, 0.0}), 0.5);
  EXPECT_EQ(p.values, (std::vector<double>{3.0, -2.0, 0.0, 0.0}));
  EXPECT_NEAR(p.snr_db, 10.0 * std::log10(14.0), 1e-12);
  EXPECT_NEAR(p.snr_db, 11.46, 0.005);
}

TEST(PruneTensor, TiesBrokenByIndex) {
  const auto p = prune_tensor(make_tensor({1.0, -1.0, 1.0, 5.0}), 0.5);
  EXPECT_EQ(p.values, (std::vector<double>{0.0, 0.0, 1.0, 5.0}));
}

TEST(PruneTensor, ExactCountAndMagnitudeOrder) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ratio(0.0, 0.99);
  for (int i = 0; i < 50; ++i) {
    const auto t = gaussian_tensor(257, 300 + i);
    const double c = ratio(rng);
    const auto p = prune_tensor(t, c);
    ASSERT_EQ(p.zeroed, static_cast<std::size_t>(std::floor(c * 257)));
    double max_dropped = 0.0, min_kept = INFINITY;
    std::size_t dropped = 0;
    for (std::size_t k = 0; k < t.values.size(); ++k) {
      if (p.values[k] == 0.0 && t.values[k] != 0.0) {
        ++dropped;
        max_dropped = std::max(max_dropped, std::abs(t.values[k]));
      } else {
        min_kept = std::min(min_kept, std::abs(t.values[k]));
      }
    }
    EXPECT_EQ(dropped, p.zeroed);
    EXPECT_LE(max_dropped, min_kept);
  }
}

TEST(PruneTensor, GaussianSeventyFivePercent) {
  EXPECT_NEAR(prune_tensor(gaussian_tensor(100000, 43), 0.75).snr_db, 5.6, 0.15);
}

TEST(PruneTensor, RatioOutOfRange) {
  EXPECT_THROW(prune_tensor(make_tensor({1.0, 2.0}), 1.0), Error);
}

// --- sample_kurtosis --------------------------------------------------------

TEST(SampleKurtosis, HandExamples) {
  EXPECT_DOUBLE_EQ(sample_kurtosis(make_tensor({0, 0, 1, 1})), 1.0);
  EXPECT_NEAR(sample_kurtosis(make_tensor({-1, 0, 0, 0, 0, 1})), 3.0, 1e-12);
}

TEST(SampleKurtosis, GaussianSample) { EXPECT_NEAR(sample_kurtosis(gaussian_tensor(1'000'000, 8)), 3.0, 0.05); }

TEST(SampleKurtosis, AffineInvariant) {
  const auto t = sample_tensor(truncated_student_t(2.0, 10.0), 2000, 4);
  const double k = sample_kurtosis(t);
  for (auto [a, d] : {std::pair{2.0, 1.0}, {-0.5, 3.0}, {1e-3, -7.0}, {40.0, 0.0}}) {
    auto u = t;
    for (auto& v : u.values) v = a * v + d;
    EXPECT_NEAR(sample_kurtosis(u), k, 1e-9 * k);
  }
}

TEST(SampleKurtosis, ZeroVarianceIsError) {
  EXPECT_THROW(sample_kurtosis(make_tensor({2.0, 2.0, 2.0})), Error);
  EXPECT_THROW(sample_kurtosis(make_tensor({2.0})), Error);
}

// --- natural_sparsity -------------------------------------------------------

TEST(NaturalSparsity, NoZeros) { EXPECT_EQ(natural_sparsity(std::vector<double>{1.0, -2.0, 0.5}), 0.0); }

TEST(NaturalSparsity, MatchesZeroBinMass) {
  const auto t = gaussian_tensor(1'000'000, 77);
  for (double delta : {0.05, 0.3, 1.0}) {
    const auto grid = make_grid(4, delta);
    std::vector<double> q;
    q.reserve(t.values.size());
    for (double v : t.values) q.push_back(grid.quantize(v));
    const double expected = 2.0 * (0.5 * std::erfc(-(delta / 2.0) / std::sqrt(2.0))) - 1.0;
    EXPECT_NEAR(natural_sparsity(q), expected, 0.01);
  }
}

TEST(NaturalSparsity, LowerBitsAreSparser) {
  const auto t = gaussian_tensor(200000, 78);
  const double s2 = natural_sparsity(quantize_tensor(t, 2).values);
  const double s8 = natural_sparsity(quantize_tensor(t, 8).values);
  EXPECT_GT(s2, s8);
}

// --- analyze_tensor / preference_map ----------------------------------------

TEST(AnalyzeTensor, RecordsFollowEquivalence) {
  const auto r = analyze_tensor(gaussian_tensor(4000, 9), {2, 4, 8});
  ASSERT_EQ(r.records.size(), 3u);
  for (const auto& rec : r.records) {
    EXPECT_DOUBLE_EQ(rec.prune_ratio, 1.0 - rec.bits / 16.0);
    EXPECT_GE(rec.natural_sparsity, 0.0);
    EXPECT_LE(rec.natural_sparsity, 1.0);
    EXPECT_EQ(rec.winner, Winner::quant);
  }
}

TensorReport fake_report(const std::string& name, double kurtosis, int bits, Winner w) {
  TensorReport r;
  r.name = name;
  r.n = 10;
  r.kurtosis = kurtosis;
  r.records.push_back({.bits = bits, .winner = w});
  return r;
}

TEST(PreferenceMap, AllQuantMeansZeroProbability) {
  std::vector<TensorReport> reports;
  for (int i = 0; i < 5; ++i) reports.push_back(fake_report("r" + std::to_string(i), 3.0 + i, 8, Winner::quant));
  const auto map = preference_map(reports);
  ASSERT_EQ(map.cells.size(), 1u);
  EXPECT_TRUE(map.cells[0].has_data);
  for (double p : map.cells[0].prune_probability) EXPECT_EQ(p, 0.0);
  EXPECT_DOUBLE_EQ(map.cells[0].kurtosis.front(), 3.0);
  EXPECT_DOUBLE_EQ(map.cells[0].kurtosis.back(), 7.0);
}

TEST(PreferenceMap, SparseCellHasNoData) {
  const auto map = preference_map({fake_report("a", 3.0, 2, Winner::prune), fake_report("b", 4.0, 4, Winner::quant),
                                   fake_report("c", 5.0, 4, Winner::quant)});
  ASSERT_EQ(map.cells.size(), 2u);
  EXPECT_FALSE(map.cells[0].has_data);
  EXPECT_TRUE(map.cells[1].has_data);
}

TEST(PreferenceMap, ProbabilitiesInUnitInterval) {
  std::vector<TensorReport> reports;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> k(2.0, 40.0);
  for (int i = 0; i < 40; ++i) {
    const double kv = k(rng);
    reports.push_back(fake_report("r" + std::to_string(i), kv, 3, kv > 15.0 ? Winner::prune : Winner::quant));
  }
  const auto map = preference_map(reports);
  for (double p : map.cells[0].prune_probability) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST(PreferenceMap, HeavyTailedCorpusShowsKurtosisThreshold) {
  std::vector<TensorReport> reports;
  int seed = 0;
  for (double r : {1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0, 96.0}) {
    for (int rep = 0; rep < 2; ++rep) {
      reports.push_back(analyze_tensor(sample_tensor(truncated_student_t(2.0, r), 20000, ++seed), {2}));
    }
  }
  const auto map = preference_map(reports);
  ASSERT_EQ(map.cells.size(), 1u);
  const auto& cell = map.cells[0];
  ASSERT_TRUE(cell.has_data);
  EXPECT_GT(cell.prune_count, 0u);
  EXPECT_GT(cell.quant_count, 0u);
  EXPECT_LT(cell.prune_probability.front(), 0.5);
  EXPECT_GT(cell.prune_probability.back(), 0.5);
}

TEST(PreferenceMap, DuplicatedInputIsDeterministic) {
  std::vector<TensorReport> reports;
  for (int i = 0; i < 6; ++i) {
    reports.push_back(fake_report("r" + std::to_string(i), 3.0 + 2 * i, 2, i > 2 ? Winner::prune : Winner::quant));
  }
  const auto a = preference_map(reports);
  const auto b = preference_map(reports);
  ASSERT_EQ(a.cells.size(), b.cells.size());
  EXPECT_EQ(a.cells[0].prune_probability, b.cells[0].prune_probability);
  EXPECT_EQ(a.cells[0].prune_bandwidth, b.cells[0].prune_bandwidth);
}

}  // namespace
