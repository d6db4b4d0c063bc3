#include "tandem/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tandem/errors.hpp"

namespace tandem {
namespace {

std::string format_value(double v) {
  char buf[64];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;  // shortest round-trip
  return std::string(buf, end);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_cell(const std::string& text, std::size_t line) {
  if (text.empty() || text == "NA") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw MetricError("line " + std::to_string(line) + ": bad value '" + text + "'");
  }
}

}  // namespace

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size())
    throw MetricError("accuracy over " + std::to_string(predicted.size()) + " predictions and " +
                      std::to_string(truth.size()) + " labels");
  if (truth.empty()) throw MetricError("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double mse(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size())
    throw MetricError("mse over " + std::to_string(predicted.size()) + " predictions and " +
                      std::to_string(truth.size()) + " targets");
  if (truth.empty()) throw MetricError("mse of an empty set");
  double s = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = predicted[i] - truth[i];
    s += d * d;
  }
  return s / static_cast<double>(truth.size());
}

void ResultTable::add_row(const std::string& dataset, std::vector<std::optional<double>> row,
                          std::vector<std::optional<double>> row_std) {
  if (row.size() != methods.size())
    throw MetricError("row '" + dataset + "' has " + std::to_string(row.size()) + " cells for " +
                      std::to_string(methods.size()) + " methods");
  if (!row_std.empty() && row_std.size() != methods.size())
    throw MetricError("row '" + dataset + "' has a malformed std vector");
  if (!row_std.empty() && stds.size() != values.size())
    throw MetricError("std columns must be given for every row or none");
  if (row_std.empty() && !stds.empty())
    row_std.assign(methods.size(), std::nullopt);
  datasets.push_back(dataset);
  values.push_back(std::move(row));
  if (!row_std.empty()) stds.push_back(std::move(row_std));
}

bool ResultTable::complete(std::size_t row) const {
  return std::all_of(values.at(row).begin(), values.at(row).end(),
                     [](const std::optional<double>& v) { return v.has_value(); });
}

std::size_t ResultTable::complete_rows() const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < values.size(); ++r) n += complete(r);
  return n;
}

void write_result_table(std::ostream& out, const ResultTable& table) {
  const bool with_std = !table.stds.empty();
  out << "dataset";
  for (const auto& m : table.methods) out << ',' << m;
  if (with_std)
    for (const auto& m : table.methods) out << ',' << m << "_std";
  out << '\n';
  for (std::size_t r = 0; r < table.values.size(); ++r) {
    out << table.datasets[r];
    for (const auto& v : table.values[r]) out << ',' << (v ? format_value(*v) : "NA");
    if (with_std)
      for (const auto& v : table.stds[r]) out << ',' << (v ? format_value(*v) : "NA");
    out << '\n';
  }
}

ResultTable read_result_table(std::istream& in, Orientation orientation) {
  ResultTable table;
  table.orientation = orientation;
  std::string line;
  if (!std::getline(in, line)) throw MetricError("result table is empty");
  const auto header = split_line(line);
  if (header.empty() || header[0] != "dataset")
    throw MetricError("result table header must start with 'dataset'");
  std::size_t n_methods = header.size() - 1;
  bool with_std = false;
  if (n_methods % 2 == 0 && n_methods > 0) {
    const std::size_t half = n_methods / 2;
    with_std = true;
    for (std::size_t i = 0; i < half; ++i)
      if (header[1 + half + i] != header[1 + i] + "_std") with_std = false;
    if (with_std) n_methods = half;
  }
  for (std::size_t i = 0; i < n_methods; ++i) table.methods.push_back(header[1 + i]);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size())
      throw MetricError("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " cells, got " +
                        std::to_string(cells.size()));
    std::vector<std::optional<double>> row, row_std;
    for (std::size_t i = 0; i < n_methods; ++i) row.push_back(parse_cell(cells[1 + i], line_no));
    if (with_std)
      for (std::size_t i = 0; i < n_methods; ++i)
        row_std.push_back(parse_cell(cells[1 + n_methods + i], line_no));
    table.add_row(cells[0], std::move(row), std::move(row_std));
  }
  return table;
}

std::vector<double> rank_row(std::span<const double> row, Orientation orientation) {
  const std::size_t n = row.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    return orientation == Orientation::kHigherBetter ? row[a] > row[b] : row[a] < row[b];
  };
  std::stable_sort(order.begin(), order.end(), before);
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && row[order[j]] == row[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = avg;
    i = j;
  }
  return ranks;
}

std::vector<double> mean_rank(const ResultTable& table) {
  std::vector<double> sums(table.methods.size(), 0.0);
  std::size_t rows = 0;
  for (std::size_t r = 0; r < table.values.size(); ++r) {
    if (!table.complete(r)) continue;
    std::vector<double> row;
    for (const auto& v : table.values[r]) row.push_back(*v);
    const auto ranks = rank_row(row, table.orientation);
    for (std::size_t m = 0; m < ranks.size(); ++m) sums[m] += ranks[m];
    ++rows;
  }
  if (rows == 0) throw MetricError("no complete row to rank");
  for (double& s : sums) s /= static_cast<double>(rows);
  return sums;
}

std::vector<std::vector<double>> performance_ratios(const ResultTable& table, bool* shifted) {
  const bool lower = table.orientation == Orientation::kLowerBetter;
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < table.values.size(); ++r) {
    if (!table.complete(r)) continue;
    std::vector<double> row;
    for (const auto& v : table.values[r]) {
      double x = *v;
      if (lower) {
        if (x < 0.0) throw MetricError("negative value in a lower-better table: " + table.datasets[r]);
        x += kProfileShift;
      } else if (!(x > 0.0)) {
        throw MetricError("non-positive value in a higher-better table: " + table.datasets[r]);
      }
      row.push_back(x);
    }
    const double best = lower ? *std::min_element(row.begin(), row.end())
                              : *std::max_element(row.begin(), row.end());
    for (double& x : row) x = lower ? x / best : best / x;
    out.push_back(std::move(row));
  }
  if (shifted) *shifted = lower;
  return out;
}

ProfileCurve dolan_more(const ResultTable& table, std::span<const double> taus) {
  if (taus.empty()) throw MetricError("empty tau grid");
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] >= 1.0)) throw MetricError("tau values must be >= 1");
    if (i > 0 && taus[i] < taus[i - 1]) throw MetricError("tau grid must be non-decreasing");
  }
  ProfileCurve curve;
  curve.taus.assign(taus.begin(), taus.end());
  const auto ratios = performance_ratios(table, &curve.shifted);
  if (ratios.empty()) throw MetricError("no complete row for a performance profile");
  const double n = static_cast<double>(ratios.size());
  curve.fractions.assign(table.methods.size(), std::vector<double>(taus.size(), 0.0));
  for (std::size_t m = 0; m < table.methods.size(); ++m)
    for (std::size_t t = 0; t < taus.size(); ++t) {
      std::size_t count = 0;
      for (const auto& row : ratios) count += row[m] <= taus[t];
      curve.fractions[m][t] = static_cast<double>(count) / n;
    }
  return curve;
}

void write_profile_csv(std::ostream& out, const ProfileCurve& curve,
                       const std::vector<std::string>& methods) {
  out << "tau";
  for (const auto& m : methods) out << ',' << m;
  out << '\n';
  for (std::size_t t = 0; t < curve.taus.size(); ++t) {
    out << format_value(curve.taus[t]);
    for (std::size_t m = 0; m < methods.size(); ++m) out << ',' << format_value(curve.fractions[m][t]);
    out << '\n';
  }
}

std::vector<double> tau_grid(double tau_max, std::size_t points) {
  if (!(tau_max >= 1.0) || points == 0) throw MetricError("tau grid needs tau_max >= 1 and points > 0");
  if (points == 1) return {tau_max};
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = 1.0 + (tau_max - 1.0) * static_cast<double>(i) / static_cast<double>(points - 1);
  g.back() = tau_max;
  return g;
}

}  // namespace tandem
