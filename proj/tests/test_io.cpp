#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "pvq/npy.hpp"
#include "pvq/report.hpp"

namespace {

using namespace pvq;
namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "pvq_test_io";
  fs::create_directories(dir);
  return dir / name;
}

// Hand-assembled NPY bytes, independent of npy::encode.
std::string raw_npy(const std::string& dict, const std::string& payload, char major = 1) {
  std::string header = dict;
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::string out("\x93NUMPY", 6);
  out += major;
  out += '\0';
  out += static_cast<char>(header.size() & 0xFF);
  out += static_cast<char>(header.size() >> 8);
  return out + header + payload;
}

template <typename T>
std::string payload(const std::vector<T>& v) {
  return std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
}

ErrorCode decode_error(const std::string& bytes) {
  try {
    npy::decode(bytes, "x");
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::invalid_argument;
}

// --- NPY --------------------------------------------------------------------

TEST(Npy, Float32Matrix) {
  const std::vector<float> v = {1.5f, -2.f, 0.f, 3.25f, 1e-3f, -7.f};
  const auto bytes = raw_npy("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }", payload(v));
  const auto t = npy::decode(bytes, "m");
  EXPECT_EQ(t.shape, (std::vector<std::size_t>{2, 3}));
  ASSERT_EQ(t.values.size(), 6u);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(t.values[i], static_cast<double>(v[i]));
}

TEST(Npy, OneDimensionalAndScalarShapes) {
  const std::vector<double> v = {4.0, 5.0, 6.0};
  EXPECT_EQ(npy::decode(raw_npy("{'descr': '<f8', 'fortran_order': False, 'shape': (3,), }", payload(v)), "a").shape,
            (std::vector<std::size_t>{3}));
  const auto s = npy::decode(raw_npy("{'descr': '<f8', 'fortran_order': False, 'shape': (), }", payload(v)), "s");
  EXPECT_TRUE(s.shape.empty());
  EXPECT_EQ(s.values, (std::vector<double>{4.0}));
}

TEST(Npy, DistinctErrorCodes) {
  const auto good = payload(std::vector<double>{1.0, 2.0});
  EXPECT_EQ(decode_error("\x93NUMPX" + std::string(60, ' ')), ErrorCode::bad_magic);
  EXPECT_EQ(decode_error(raw_npy("{'descr': '>f8', 'fortran_order': False, 'shape': (2,), }", good)),
            ErrorCode::unsupported_dtype);
  EXPECT_EQ(decode_error(raw_npy("{'descr': '<i4', 'fortran_order': False, 'shape': (2,), }", good)),
            ErrorCode::unsupported_dtype);
  EXPECT_EQ(decode_error(raw_npy("{'descr': '<f8', 'fortran_order': False, 'shape': (3,), }", good)),
            ErrorCode::truncated_payload);
  EXPECT_EQ(decode_error(raw_npy("{'descr': '<f8', 'fortran_order': True, 'shape': (2,), }", good)),
            ErrorCode::unsupported_layout);
  EXPECT_EQ(decode_error(raw_npy("{'descr': '<f8', 'fortran_order': False, 'shape': (2,), }", good, 2)),
            ErrorCode::unsupported_version);
  EXPECT_EQ(decode_error(raw_npy("{'descr': '<f8', 'fortran_order': False}", good)), ErrorCode::malformed_header);
  EXPECT_EQ(decode_error(raw_npy("{'descr': '<f8', 'fortran_order': False, 'shape': (a,), }", good)),
            ErrorCode::malformed_header);
  EXPECT_EQ(decode_error(std::string("\x93NUMPY\x01\x00\xff\x00", 10)), ErrorCode::truncated_payload);
}

TEST(Npy, BigEndianMessage) {
  const auto bytes = raw_npy("{'descr': '>f4', 'fortran_order': False, 'shape': (1,), }", std::string(4, '\0'));
  try {
    npy::decode(bytes, "x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported dtype"), std::string::npos);
  }
}

TEST(Npy, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  WeightTensor t{"w", {3, 4, 2}, {}};
  for (int i = 0; i < 24; ++i) t.values.push_back(nd(rng));
  t.values[5] = -0.0;
  t.values[7] = std::numeric_limits<double>::denorm_min();
  const auto path = scratch("roundtrip.npy");
  npy::save_tensor(path, t);
  const auto back = npy::load_tensor(path);
  EXPECT_EQ(back.name, "roundtrip");
  EXPECT_EQ(back.shape, t.shape);
  ASSERT_EQ(back.values.size(), t.values.size());
  EXPECT_EQ(std::memcmp(back.values.data(), t.values.data(), t.values.size() * sizeof(double)), 0);
}

TEST(Npy, Float32RoundTrip) {
  WeightTensor t{"w", {2, 2}, {0.1, -0.25, 3.0, 1e-8}};
  const auto back = npy::decode(npy::encode(t, npy::Dtype::f4), "w");
  for (std::size_t i = 0; i < t.values.size(); ++i) EXPECT_EQ(back.values[i], static_cast<double>(static_cast<float>(t.values[i])));
}

TEST(Npy, HeaderAlignedTo64Bytes) {
  const auto bytes = npy::encode(WeightTensor{"w", {7}, std::vector<double>(7, 1.0)});
  EXPECT_EQ(npy::parse_header(bytes).data_offset % 64, 0u);
  EXPECT_EQ(bytes.size(), npy::parse_header(bytes).data_offset + 56);
}

TEST(Npy, MissingFile) {
  try {
    npy::load_tensor(scratch("does_not_exist.npy"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io_error);
  }
}

// --- report -----------------------------------------------------------------

CompressionReport sample_report() {
  CompressionReport r;
  r.metadata = {"0.1.0", "tensor", "00ff", "2024-01-01T00:00:00Z", 42, {{"eigen", "3.4.0"}}};
  ReportRow a;
  a.source = "layer, \"quoted\"\nname";
  a.method = "tradeoff";
  a.bits = 4;
  a.prune_ratio = 0.75;
  a.n = 100;
  a.delta = 0.1 + 0.2;
  a.signal = 1.0 / 3.0;
  a.quant_snr_db = kInfiniteSnr;
  a.prune_snr_db = -std::numeric_limits<double>::infinity();
  a.winner = "quant";
  a.kurtosis = 3.0000000000000018;
  a.iterations = 123456789012LL;
  ReportRow b;
  b.source = "plain";
  b.method = "quant_bound";
  b.status = "bound";
  b.objective = 5e-324;
  b.snr_db = -12.5;
  r.rows = {a, b};
  return r;
}

TEST(Report, EmptyReportIsHeaderOnlyCsv) {
  const std::string csv = to_csv(CompressionReport{});
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1);
  EXPECT_EQ(csv.rfind("source,method,status,bits,", 0), 0u);
  EXPECT_TRUE(rows_from_csv(csv).empty());
}

TEST(Report, InfiniteSnrIsInfField) {
  CompressionReport r;
  ReportRow row;
  row.source = "t";
  row.snr_db = kInfiniteSnr;
  r.rows = {row};
  const auto records = parse_csv(to_csv(r));
  ASSERT_EQ(records.size(), 2u);
  const auto& cols = columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i].name == "snr_db") EXPECT_EQ(records[1][i], "inf");
  }
  EXPECT_NE(to_json(r).find("\"snr_db\": \"inf\""), std::string::npos);
}

TEST(Report, CsvQuotingFollowsRfc4180) {
  EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_escape("plain"), "plain");
  const auto recs = parse_csv("x,\"a,b\",\"c\"\"d\"\r\n\"multi\r\nline\",,\r\n");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0], (std::vector<std::string>{"x", "a,b", "c\"d"}));
  EXPECT_EQ(recs[1], (std::vector<std::string>{"multi\r\nline", "", ""}));
}

TEST(Report, CsvRoundTrip) {
  const auto r = sample_report();
  const auto path = scratch("report.csv");
  save_report(r, Format::csv, path);
  EXPECT_TRUE(fs::exists(metadata_path(path)));
  EXPECT_EQ(load_report(Format::csv, path), r);
}

TEST(Report, JsonRoundTrip) {
  const auto r = sample_report();
  const auto path = scratch("report.json");
  save_report(r, Format::json, path);
  const auto back = load_report(Format::json, path);
  EXPECT_EQ(back, r);
  EXPECT_EQ(to_json(back), to_json(r));
}

TEST(Report, JsonSchemaVersionChecked) {
  auto text = to_json(sample_report());
  text.replace(text.find("\"schema_version\": 1"), 19, "\"schema_version\": 9");
  try {
    report_from_json(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unsupported_version);
  }
  EXPECT_THROW(report_from_json("{not json"), Error);
}

TEST(Report, CsvHeaderMismatchRejected) {
  EXPECT_THROW(rows_from_csv("a,b,c\r\n"), Error);
}

TEST(Report, SortIsBySourceThenBits) {
  std::vector<ReportRow> rows(3);
  rows[0].source = "b";
  rows[0].bits = 2;
  rows[1].source = "a";
  rows[1].bits = 8;
  rows[2].source = "a";
  rows[2].bits = 4;
  sort_rows(rows);
  EXPECT_EQ(rows[0].bits, 4);
  EXPECT_EQ(rows[1].bits, 8);
  EXPECT_EQ(rows[2].source, "b");
}

TEST(Report, UnwritablePathCarriesContext) {
  try {
    save_report(CompressionReport{}, Format::csv, "/nonexistent_dir/x.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::io_error);
    EXPECT_NE(std::string(e.what()).find("/nonexistent_dir/x.csv"), std::string::npos);
  }
}

}  // namespace
