#pragma once

/**
 * @file report.hpp
 * @brief CompressionReport and its CSV / JSON serialization.
 *
 * CSV holds only the rows, one record per row, in the column order of
 * `columns()`. Run metadata (including the timestamp) goes to a sidecar
 * `<path>.meta.json`, so two identical runs produce byte-identical CSV.
 * JSON is a single object {schema_version, metadata, rows}.
 *
 * Row kinds:
 *   method "tradeoff"   quant vs prune at one bit-width (distribution / tensor)
 *   method "prune_probability"  one preference-map grid point
 *   layerwise methods  quant_heur, quant_bound, prune_heur, prune_exact
 *
 * Non-finite numbers: +inf / -inf are written as "inf" / "-inf" in both
 * formats; a missing value (NaN) is an empty CSV field and JSON null.
 */

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "pvq/common.hpp"

namespace pvq {

inline constexpr int kSchemaVersion = 1;
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct ReportMetadata {
  std::string tool_version;
  std::string mode;
  std::string config_hash;
  std::string created_at;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> extra;  // library versions, config echo

  bool operator==(const ReportMetadata&) const = default;
};

struct ReportRow {
  std::string source;  // tensor name, chunk label, or distribution spec
  std::string method;
  std::string status = "ok";
  long long bits = 0;
  double prune_ratio = kMissing;
  long long n = 0;
  double delta = kMissing;
  double signal = kMissing;  // c, sum w^2, or E[W^2]
  double quant_error = kMissing;
  double quant_snr_db = kMissing;
  double prune_error = kMissing;
  double prune_snr_db = kMissing;
  std::string winner;
  double objective = kMissing;  // layerwise E, or the certified bound
  double lower_bound = kMissing;
  double snr_db = kMissing;
  double kurtosis = kMissing;
  double natural_sparsity = kMissing;
  double probability = kMissing;
  long long iterations = 0;
  std::string message;
};

struct CompressionReport {
  ReportMetadata metadata;
  std::vector<ReportRow> rows;
};

using Field = std::variant<std::string ReportRow::*, long long ReportRow::*, double ReportRow::*>;

struct Column {
  std::string_view name;
  Field field;
};

/// Fixed column order of the CSV output.
inline const std::vector<Column>& columns() {
  static const std::vector<Column> cols = {
      {"source", &ReportRow::source},
      {"method", &ReportRow::method},
      {"status", &ReportRow::status},
      {"bits", &ReportRow::bits},
      {"prune_ratio", &ReportRow::prune_ratio},
      {"n", &ReportRow::n},
      {"delta", &ReportRow::delta},
      {"signal", &ReportRow::signal},
      {"quant_error", &ReportRow::quant_error},
      {"quant_snr_db", &ReportRow::quant_snr_db},
      {"prune_error", &ReportRow::prune_error},
      {"prune_snr_db", &ReportRow::prune_snr_db},
      {"winner", &ReportRow::winner},
      {"objective", &ReportRow::objective},
      {"lower_bound", &ReportRow::lower_bound},
      {"snr_db", &ReportRow::snr_db},
      {"kurtosis", &ReportRow::kurtosis},
      {"natural_sparsity", &ReportRow::natural_sparsity},
      {"probability", &ReportRow::probability},
      {"iterations", &ReportRow::iterations},
      {"message", &ReportRow::message},
  };
  return cols;
}

inline bool operator==(const ReportRow& a, const ReportRow& b) {
  for (const auto& col : columns()) {
    const bool same = std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(a.*member)>;
          if constexpr (std::is_same_v<T, double>) {
            return (std::isnan(a.*member) && std::isnan(b.*member)) || a.*member == b.*member;
          } else {
            return a.*member == b.*member;
          }
        },
        col.field);
    if (!same) return false;
  }
  return true;
}

inline bool operator==(const CompressionReport& a, const CompressionReport& b) {
  return a.metadata == b.metadata && a.rows == b.rows;
}

/// Canonical row order: source, bit-width, method, prune ratio.
inline void sort_rows(std::vector<ReportRow>& rows) {
  auto ratio = [](const ReportRow& r) { return std::isnan(r.prune_ratio) ? -1.0 : r.prune_ratio; };
  std::stable_sort(rows.begin(), rows.end(), [&](const ReportRow& a, const ReportRow& b) {
    return std::make_tuple(std::cref(a.source), a.bits, std::cref(a.method), ratio(a)) <
           std::make_tuple(std::cref(b.source), b.bits, std::cref(b.method), ratio(b));
  });
}

// ---------------------------------------------------------------------------
// Scalars.

/// Shortest representation that parses back to the same double.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline double parse_number(std::string_view s) {
  if (s.empty()) return kMissing;
  if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorCode::parse_error,
          "not a number: '" + std::string(s) + "'");
  return v;
}

inline long long parse_integer(std::string_view s) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(!s.empty() && res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorCode::parse_error,
          "not an integer: '" + std::string(s) + "'");
  return v;
}

// ---------------------------------------------------------------------------
// CSV.

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

inline std::string field_text(const ReportRow& r, const Column& col) {
  return std::visit(
      [&](auto member) -> std::string {
        using T = std::remove_cvref_t<decltype(r.*member)>;
        if constexpr (std::is_same_v<T, double>) return format_number(r.*member);
        else if constexpr (std::is_same_v<T, long long>) return std::to_string(r.*member);
        else return r.*member;
      },
      col.field);
}

inline void set_field(ReportRow& r, const Column& col, const std::string& text) {
  std::visit(
      [&](auto member) {
        using T = std::remove_cvref_t<decltype(r.*member)>;
        if constexpr (std::is_same_v<T, double>) r.*member = parse_number(text);
        else if constexpr (std::is_same_v<T, long long>) r.*member = parse_integer(text);
        else r.*member = text;
      },
      col.field);
}

/// Header line plus one record per row, CRLF line endings.
inline std::string to_csv(const CompressionReport& report) {
  const auto& cols = columns();
  std::string out;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) out += ',';
    out += cols[i].name;
  }
  out += "\r\n";
  for (const auto& row : report.rows) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) out += ',';
      out += csv_escape(field_text(row, cols[i]));
    }
    out += "\r\n";
  }
  return out;
}

/// Splits RFC-4180 text into records of fields.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
    } else if (ch == '"' && !field_started) {
      quoted = field_started = true;
    } else if (ch == ',') {
      end_field();
    } else if (ch == '\r' || ch == '\n') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
    } else {
      field += ch;
      field_started = true;
    }
  }
  require(!quoted, ErrorCode::parse_error, "unterminated quoted CSV field");
  if (field_started || !record.empty()) end_record();
  return records;
}

inline std::vector<ReportRow> rows_from_csv(std::string_view text) {
  const auto& cols = columns();
  const auto records = parse_csv(text);
  require(!records.empty(), ErrorCode::parse_error, "CSV has no header line");
  const auto& header = records.front();
  bool header_ok = header.size() == cols.size();
  for (std::size_t i = 0; header_ok && i < cols.size(); ++i) header_ok = header[i] == cols[i].name;
  require(header_ok, ErrorCode::parse_error, "CSV header does not match the report columns");
  std::vector<ReportRow> rows;
  for (std::size_t k = 1; k < records.size(); ++k) {
    const auto& rec = records[k];
    require(rec.size() == cols.size(), ErrorCode::parse_error,
            "CSV record " + std::to_string(k) + " has " + std::to_string(rec.size()) + " fields, expected " +
                std::to_string(cols.size()));
    ReportRow row;
    for (std::size_t i = 0; i < cols.size(); ++i) set_field(row, cols[i], rec[i]);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// JSON.

inline nlohmann::ordered_json metadata_to_json(const ReportMetadata& m) {
  return {{"tool_version", m.tool_version}, {"mode", m.mode}, {"config_hash", m.config_hash},
          {"created_at", m.created_at},     {"seed", m.seed}, {"extra", m.extra}};
}

inline ReportMetadata metadata_from_json(const nlohmann::ordered_json& j) {
  ReportMetadata m;
  m.tool_version = j.at("tool_version").get<std::string>();
  m.mode = j.at("mode").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.created_at = j.at("created_at").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.extra = j.at("extra").get<std::map<std::string, std::string>>();
  return m;
}

inline nlohmann::ordered_json row_to_json(const ReportRow& r) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& col : columns()) {
    const std::string key(col.name);
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(r.*member)>;
          if constexpr (std::is_same_v<T, double>) {
            const double v = r.*member;
            if (std::isnan(v)) j[key] = nullptr;
            else if (std::isinf(v)) j[key] = format_number(v);
            else j[key] = v;
          } else {
            j[key] = r.*member;
          }
        },
        col.field);
  }
  return j;
}

inline ReportRow row_from_json(const nlohmann::ordered_json& j) {
  ReportRow r;
  for (const auto& col : columns()) {
    const auto& v = j.at(std::string(col.name));
    std::visit(
        [&](auto member) {
          using T = std::remove_cvref_t<decltype(r.*member)>;
          if constexpr (std::is_same_v<T, double>) {
            if (v.is_null()) r.*member = kMissing;
            else if (v.is_string()) r.*member = parse_number(v.template get<std::string>());
            else r.*member = v.template get<double>();
          } else {
            r.*member = v.template get<T>();
          }
        },
        col.field);
  }
  return r;
}

inline std::string to_json(const CompressionReport& report) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) rows.push_back(row_to_json(r));
  nlohmann::ordered_json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["metadata"] = metadata_to_json(report.metadata);
  doc["rows"] = std::move(rows);
  return doc.dump(2) + "\n";
}

inline CompressionReport report_from_json(std::string_view text) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("invalid JSON: ") + e.what());
  }
  require(doc.is_object() && doc.contains("schema_version"), ErrorCode::parse_error, "JSON report lacks schema_version");
  const int version = doc.at("schema_version").get<int>();
  require(version == kSchemaVersion, ErrorCode::unsupported_version,
          "report schema version " + std::to_string(version) + " (expected " + std::to_string(kSchemaVersion) + ")");
  CompressionReport report;
  try {
    report.metadata = metadata_from_json(doc.at("metadata"));
    for (const auto& r : doc.at("rows")) report.rows.push_back(row_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("malformed JSON report: ") + e.what());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Files.

enum class Format { csv, json };

inline std::string to_string(Format f) { return f == Format::csv ? "csv" : "json"; }

inline Format parse_format(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  throw Error(ErrorCode::invalid_argument, "unknown output format '" + s + "' (expected csv or json)");
}

inline std::filesystem::path metadata_path(const std::filesystem::path& csv_path) {
  return csv_path.string() + ".meta.json";
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io_error, "cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  require(static_cast<bool>(out), ErrorCode::io_error, "write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io_error, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline void save_report(const CompressionReport& report, Format format, const std::filesystem::path& path) {
  if (format == Format::json) {
    detail::write_text(path, to_json(report));
    return;
  }
  detail::write_text(path, to_csv(report));
  nlohmann::ordered_json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["metadata"] = metadata_to_json(report.metadata);
  detail::write_text(metadata_path(path), meta.dump(2) + "\n");
}

inline CompressionReport load_report(Format format, const std::filesystem::path& path) {
  const std::string text = detail::read_text(path);
  if (format == Format::json) return report_from_json(text);
  CompressionReport report;
  report.rows = rows_from_csv(text);
  if (std::filesystem::exists(metadata_path(path))) {
    try {
      const auto meta = nlohmann::ordered_json::parse(detail::read_text(metadata_path(path)));
      report.metadata = metadata_from_json(meta.at("metadata"));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::parse_error, "malformed metadata sidecar: " + std::string(e.what()));
    }
  }
  return report;
}

}  // namespace pvq
