#pragma once

// Downstream metrics, cross-dataset ranking and performance profiles.

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tandem {

// Both throw MetricError on empty input or a length mismatch.
double accuracy(std::span<const int> predicted, std::span<const int> truth);
double mse(std::span<const double> predicted, std::span<const double> truth);

enum class Orientation { kHigherBetter, kLowerBetter };

// Rows are datasets, columns are methods. A missing cell excludes its row
// from ranking and profiles.
struct ResultTable {
  Orientation orientation = Orientation::kHigherBetter;
  std::vector<std::string> methods;
  std::vector<std::string> datasets;
  std::vector<std::vector<std::optional<double>>> values;  // [dataset][method]
  std::vector<std::vector<std::optional<double>>> stds;    // empty or same shape

  void add_row(const std::string& dataset, std::vector<std::optional<double>> row,
               std::vector<std::optional<double>> row_std = {});
  bool complete(std::size_t row) const;
  std::size_t complete_rows() const;
};

// CSV: header "dataset,<m1>,<m2>,...", optional "<m>_std" columns, "NA" for
// missing. The orientation is not stored in the file.
void write_result_table(std::ostream& out, const ResultTable& table);
ResultTable read_result_table(std::istream& in, Orientation orientation);

// Average-tie ranks (1 = best) of one row.
std::vector<double> rank_row(std::span<const double> row, Orientation orientation);

// Mean rank per method over complete rows. Throws MetricError if no row is
// complete.
std::vector<double> mean_rank(const ResultTable& table);

constexpr double kProfileShift = 1e-12;

struct ProfileCurve {
  std::vector<double> taus;
  std::vector<std::vector<double>> fractions;  // [method][tau]
  bool shifted = false;  // lower-better cells received +kProfileShift
};

// ratio = best / value (higher-better) or value / best (lower-better);
// curve(tau) = fraction of complete datasets with ratio <= tau. Lower-better
// tables are shifted by kProfileShift before forming ratios. Throws
// MetricError on a non-positive higher-better cell, a negative lower-better
// cell, or an empty/invalid tau grid.
ProfileCurve dolan_more(const ResultTable& table, std::span<const double> taus);
// Per-dataset ratios [dataset][method] over complete rows.
std::vector<std::vector<double>> performance_ratios(const ResultTable& table, bool* shifted = nullptr);

void write_profile_csv(std::ostream& out, const ProfileCurve& curve,
                       const std::vector<std::string>& methods);

// Evenly spaced grid on [1, tau_max].
std::vector<double> tau_grid(double tau_max, std::size_t points);

}  // namespace tandem
