#pragma once

// Tabular ingestion: CSV parsing, the fixed preprocessing pipeline
// (mean imputation, min-max scaling, one-hot encoding), and seeded
// pretrain/labeled/validation/test splits.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tandem/tensor.hpp"

namespace tandem::data {

enum class Task { kClassification, kRegression };

const char* to_string(Task task);
Task parse_task(const std::string& text);

struct RawColumn {
  std::string name;
  std::vector<std::optional<std::string>> cells;  // nullopt = missing
};

// Columns of equal length with unique names.
class RawTable {
 public:
  RawTable() = default;
  explicit RawTable(std::vector<RawColumn> columns);

  std::size_t rows() const { return columns_.empty() ? 0 : columns_[0].cells.size(); }
  std::size_t cols() const { return columns_.size(); }
  const std::vector<RawColumn>& columns() const { return columns_; }
  const RawColumn* find(const std::string& name) const;

  // Detaches and returns the named column.
  RawColumn take(const std::string& name);

 private:
  std::vector<RawColumn> columns_;
};

// Header row, comma delimiter, optional double quotes. Empty cells and the
// literal NA are missing. Throws ParseError naming the 1-based line.
RawTable read_csv(std::istream& in);
RawTable read_csv_file(const std::string& path);
void write_csv(std::ostream& out, const RawTable& table);

struct Targets {
  Task task = Task::kClassification;
  std::vector<int> labels;           // classification
  std::vector<double> values;        // regression
  std::vector<std::string> classes;  // class tokens in first-appearance order

  std::size_t size() const {
    return task == Task::kClassification ? labels.size() : values.size();
  }
  std::size_t num_classes() const { return classes.size(); }
  Targets subset(std::span<const std::size_t> idx) const;
};

// Removes the target column from `raw`. Missing targets are a ParseError.
Targets extract_targets(RawTable& raw, const std::string& column, Task task);

enum class ColumnKind { kNumeric, kCategorical };

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::kNumeric;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;                    // imputation value
  std::vector<std::string> vocabulary;  // first-appearance order
};

struct FeatureSchema {
  std::vector<ColumnSchema> columns;
  std::size_t width() const;  // expanded (one-hot) feature count
};

// A column is numeric when every non-missing cell in the whole table parses
// as a float; statistics and vocabularies come from `fit_rows` only.
FeatureSchema fit_schema(const RawTable& raw, std::span<const std::size_t> fit_rows);

struct DesignMatrix {
  Tensor values;                           // N x D
  std::vector<std::string> feature_names;  // D
  std::vector<std::size_t> origin;         // D, index into schema columns
  std::optional<Targets> targets;

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
  DesignMatrix subset(std::span<const std::size_t> idx) const;
};

DesignMatrix transform(const RawTable& raw, const FeatureSchema& schema);

struct SplitSpec {
  std::uint64_t seed = 0;
  std::size_t label_budget = 0;
  std::vector<std::size_t> pretrain_idx;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  std::vector<std::size_t> test_idx;
};

// Classification stratifies the pretraining pool (pretrain_per_class per
// class), the labeled subset, and the train/val cut by class. Regression
// treats all rows as one class.
SplitSpec make_splits(std::size_t n, const Targets* targets, std::size_t pretrain_per_class,
                      std::size_t label_budget, double val_frac, std::uint64_t seed);

// ---- serialization ----------------------------------------------------------
std::string schema_to_json(const FeatureSchema& schema, const Targets* targets);
FeatureSchema schema_from_json(const std::string& text);
std::string splits_to_json(const SplitSpec& splits);
SplitSpec splits_from_json(const std::string& text);

// Feature columns followed by a `__target__` column when targets exist.
// Class targets are written as indices; `classes` restores their tokens.
void write_design_csv(std::ostream& out, const DesignMatrix& m);
DesignMatrix read_design_csv(std::istream& in, std::optional<Task> task,
                             std::vector<std::string> classes = {});

// ---- synthetic benchmark -----------------------------------------------------
struct SyntheticSpec {
  std::size_t classes = 2;
  std::size_t per_class = 3000;
  std::size_t informative_numeric = 8;
  std::size_t informative_categorical = 2;
  std::size_t categorical_levels = 3;
  std::size_t noise = 40;
  double separation = 1.0;  // class-mean offset of informative numerics, in noise sd
  std::uint64_t seed = 0;
};

// Class-dependent Gaussian features, class-dependent categorical tokens, and
// pure-noise Gaussian columns, followed by a `target` column of class tokens.
// Columns are named inf_*, cat_*, noise_*.
RawTable make_synthetic(const SyntheticSpec& spec);

}  // namespace tandem::data
