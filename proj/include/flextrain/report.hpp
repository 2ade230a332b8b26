#pragma once

// Metric records and their CSV / JSON persistence.
//
// CSV header: run_id,stage,round_or_epoch,depth_k,split,metric,value
// JSON: array of objects with the same keys. Values are written in the
// shortest decimal form that round-trips to the same float64.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "flextrain/error.hpp"
#include "flextrain/evaluate.hpp"
#include "flextrain/sampler.hpp"

namespace flextrain {

inline constexpr const char* kReportHeader = "run_id,stage,round_or_epoch,depth_k,split,metric,value";

struct Record {
  std::string run_id;
  std::string stage;
  std::uint64_t round_or_epoch = 0;
  std::uint64_t depth_k = 0;  // 0 when the metric is not tied to a depth
  std::string split;
  std::string metric;
  double value = 0.0;

  auto key() const { return std::tie(run_id, stage, round_or_epoch, depth_k, split, metric); }
  bool operator==(const Record&) const = default;
};

enum class ReportFormat { kCsv, kJson };

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw IoError("report: cannot format value");
  return {buf, end};
}

namespace detail {

inline void check_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") != std::string::npos)
    throw std::invalid_argument("report: field '" + s + "' contains a separator character");
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw IoError("report: bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline void sort_records(std::vector<Record>& records) {
  std::stable_sort(records.begin(), records.end(), [](const Record& a, const Record& b) { return a.key() < b.key(); });
}

inline std::string render_csv(const std::vector<Record>& records) {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : records) {
    for (const auto* s : {&r.run_id, &r.stage, &r.split, &r.metric}) detail::check_field(*s);
    out += r.run_id + ',' + r.stage + ',' + std::to_string(r.round_or_epoch) + ',' + std::to_string(r.depth_k) +
           ',' + r.split + ',' + r.metric + ',' + format_double(r.value) + '\n';
  }
  return out;
}

inline std::string render_json(const std::vector<Record>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records)
    arr.push_back({{"run_id", r.run_id},
                   {"stage", r.stage},
                   {"round_or_epoch", r.round_or_epoch},
                   {"depth_k", r.depth_k},
                   {"split", r.split},
                   {"metric", r.metric},
                   {"value", r.value}});
  return arr.dump(1) + "\n";
}

// Records are sorted by (run_id, stage, round_or_epoch, depth_k, split, metric)
// before writing, so output is independent of production order.
inline void write_report(std::vector<Record> records, const std::string& path, ReportFormat format) {
  sort_records(records);
  const std::string text = format == ReportFormat::kCsv ? render_csv(records) : render_json(records);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("report: cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw IoError("report: write to '" + path + "' failed");
}

inline std::vector<Record> parse_csv_report(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line) || line != kReportHeader) throw IoError("report: missing or wrong CSV header");
  std::vector<Record> out;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    auto c = detail::split_csv_line(line);
    if (c.size() != 7) throw IoError("report: expected 7 columns in '" + line + "'");
    out.push_back({c[0], c[1], detail::parse_number<std::uint64_t>(c[2]), detail::parse_number<std::uint64_t>(c[3]),
                   c[4], c[5], detail::parse_number<double>(c[6])});
  }
  return out;
}

inline std::vector<Record> parse_json_report(const std::string& text) {
  std::vector<Record> out;
  try {
    for (const auto& o : nlohmann::json::parse(text))
      out.push_back({o.at("run_id").get<std::string>(), o.at("stage").get<std::string>(),
                     o.at("round_or_epoch").get<std::uint64_t>(), o.at("depth_k").get<std::uint64_t>(),
                     o.at("split").get<std::string>(), o.at("metric").get<std::string>(),
                     o.at("value").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("report: bad JSON: ") + e.what());
  }
  return out;
}

inline std::vector<Record> read_report(const std::string& path, ReportFormat format) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("report: cannot open '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return format == ReportFormat::kCsv ? parse_csv_report(ss.str()) : parse_json_report(ss.str());
}

struct CurvePoint {
  std::size_t depth = 0;
  double fraction = 0.0;  // A_k / A
  double accuracy = 0.0;
};

// Accuracy as a function of the deployed fraction of the model.
inline std::vector<CurvePoint> curve_accuracy_vs_fraction(const ResidualNet& net, const Dataset& data,
                                                          std::vector<std::size_t> depths) {
  if (depths.empty()) throw std::invalid_argument("curve_accuracy_vs_fraction: no depths");
  std::sort(depths.begin(), depths.end());
  depths.erase(std::unique(depths.begin(), depths.end()), depths.end());
  const auto total = static_cast<double>(prefix_param_count(net, net.depth()));
  std::vector<CurvePoint> out;
  for (std::size_t k : depths)
    out.push_back({k, static_cast<double>(prefix_param_count(net, k)) / total, evaluate_prefix(net, data, k)});
  return out;
}

}  // namespace flextrain
