#include "tandem/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "tandem/errors.hpp"
#include "tandem/rng.hpp"

namespace tandem::data {
namespace {

using nlohmann::json;

std::optional<double> parse_double(const std::string& s) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  while (last > first && last[-1] == ' ') --last;
  if (first == last) return std::nullopt;
  if (*first == '+') ++first;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

bool is_missing(const std::string& s) { return s.empty() || s == "NA"; }

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string format_double(double v) {
  char buf[64];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;  // shortest round-trip
  return std::string(buf, end);
}

bool column_is_numeric(const RawColumn& col) {
  for (const auto& cell : col.cells)
    if (cell && !parse_double(*cell)) return false;
  return true;
}

// Splits `total` into parts proportional to `weights` by largest remainder;
// ties go to the lower index.
std::vector<std::size_t> proportional_allocation(std::size_t total,
                                                 const std::vector<std::size_t>& weights) {
  const std::size_t wsum = std::accumulate(weights.begin(), weights.end(), std::size_t{0});
  std::vector<std::size_t> out(weights.size(), 0);
  if (wsum == 0 || total == 0) return out;
  std::vector<std::pair<double, std::size_t>> rema;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * static_cast<double>(weights[i]) /
                         static_cast<double>(wsum);
    out[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += out[i];
    rema.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rema.begin(), rema.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++out[rema[i % rema.size()].second];
  return out;
}

}  // namespace

const char* to_string(Task task) {
  return task == Task::kClassification ? "classification" : "regression";
}

Task parse_task(const std::string& text) {
  if (text == "classification") return Task::kClassification;
  if (text == "regression") return Task::kRegression;
  throw ConfigError("unknown task '" + text + "'");
}

RawTable::RawTable(std::vector<RawColumn> columns) : columns_(std::move(columns)) {
  std::unordered_set<std::string> names;
  for (const auto& c : columns_) {
    if (!names.insert(c.name).second) throw ParseError("duplicate column name '" + c.name + "'");
    if (c.cells.size() != columns_[0].cells.size())
      throw ParseError("column '" + c.name + "' has a different length");
  }
}

const RawColumn* RawTable::find(const std::string& name) const {
  for (const auto& c : columns_)
    if (c.name == name) return &c;
  return nullptr;
}

RawColumn RawTable::take(const std::string& name) {
  auto it = std::find_if(columns_.begin(), columns_.end(),
                         [&](const RawColumn& c) { return c.name == name; });
  if (it == columns_.end()) throw ParseError("no column named '" + name + "'");
  RawColumn col = std::move(*it);
  columns_.erase(it);
  return col;
}

RawTable read_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty input: missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<RawColumn> cols;
  for (auto& name : split_csv_line(line, line_no)) cols.push_back(RawColumn{name, {}});
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line, line_no);
    if (fields.size() != cols.size())
      throw ParseError("line " + std::to_string(line_no) + " (row " + std::to_string(line_no - 1) +
                       "): expected " +
                       std::to_string(cols.size()) + " fields, found " +
                       std::to_string(fields.size()));
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (is_missing(fields[c]))
        cols[c].cells.emplace_back(std::nullopt);
      else
        cols[c].cells.emplace_back(std::move(fields[c]));
    }
  }
  return RawTable(std::move(cols));
}

RawTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return read_csv(in);
}

void write_csv(std::ostream& out, const RawTable& table) {
  const auto& cols = table.columns();
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << csv_escape(cols[c].name);
  out << '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) out << ',';
      const auto& cell = cols[c].cells[r];
      out << (cell ? csv_escape(*cell) : std::string("NA"));
    }
    out << '\n';
  }
}

Targets Targets::subset(std::span<const std::size_t> idx) const {
  Targets out;
  out.task = task;
  out.classes = classes;
  for (std::size_t i : idx) {
    if (task == Task::kClassification)
      out.labels.push_back(labels.at(i));
    else
      out.values.push_back(values.at(i));
  }
  return out;
}

Targets extract_targets(RawTable& raw, const std::string& column, Task task) {
  RawColumn col = raw.take(column);
  Targets t;
  t.task = task;
  std::unordered_map<std::string, int> index;
  for (std::size_t r = 0; r < col.cells.size(); ++r) {
    const auto& cell = col.cells[r];
    if (!cell)
      throw ParseError("target column '" + column + "' is missing at data row " +
                       std::to_string(r + 1));
    if (task == Task::kClassification) {
      auto [it, inserted] = index.emplace(*cell, static_cast<int>(t.classes.size()));
      if (inserted) t.classes.push_back(*cell);
      t.labels.push_back(it->second);
    } else {
      auto v = parse_double(*cell);
      if (!v)
        throw ParseError("target column '" + column + "' is not numeric at data row " +
                         std::to_string(r + 1));
      t.values.push_back(*v);
    }
  }
  return t;
}

std::size_t FeatureSchema::width() const {
  std::size_t w = 0;
  for (const auto& c : columns) w += c.kind == ColumnKind::kNumeric ? 1 : c.vocabulary.size();
  return w;
}

FeatureSchema fit_schema(const RawTable& raw, std::span<const std::size_t> fit_rows) {
  if (fit_rows.empty()) throw SchemaError("no rows to fit the schema on");
  FeatureSchema schema;
  for (const auto& col : raw.columns()) {
    ColumnSchema cs;
    cs.name = col.name;
    cs.kind = column_is_numeric(col) ? ColumnKind::kNumeric : ColumnKind::kCategorical;
    std::size_t seen = 0;
    if (cs.kind == ColumnKind::kNumeric) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      double total = 0.0;
      for (std::size_t r : fit_rows) {
        const auto& cell = col.cells.at(r);
        if (!cell) continue;
        const double v = *parse_double(*cell);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        total += v;
        ++seen;
      }
      if (seen > 0) {
        cs.min = lo;
        cs.max = hi;
        cs.mean = total / static_cast<double>(seen);
      }
    } else {
      std::unordered_set<std::string> known;
      for (std::size_t r : fit_rows) {
        const auto& cell = col.cells.at(r);
        if (!cell) continue;
        ++seen;
        if (known.insert(*cell).second) cs.vocabulary.push_back(*cell);
      }
    }
    if (seen == 0) throw SchemaError("column '" + col.name + "' is entirely missing in the fit rows");
    schema.columns.push_back(std::move(cs));
  }
  return schema;
}

DesignMatrix transform(const RawTable& raw, const FeatureSchema& schema) {
  if (raw.cols() != schema.columns.size())
    throw TransformError("table has " + std::to_string(raw.cols()) + " columns, schema has " +
                         std::to_string(schema.columns.size()));
  DesignMatrix m;
  const std::size_t n = raw.rows();
  m.values = Tensor(n, schema.width());
  std::size_t offset = 0;
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const ColumnSchema& cs = schema.columns[c];
    const RawColumn& col = raw.columns()[c];
    if (col.name != cs.name)
      throw TransformError("column " + std::to_string(c) + " is '" + col.name +
                           "', schema expects '" + cs.name + "'");
    if (cs.kind == ColumnKind::kNumeric) {
      const double range = cs.max - cs.min;
      for (std::size_t r = 0; r < n; ++r) {
        double v = cs.mean;
        if (const auto& cell = col.cells[r]) {
          auto parsed = parse_double(*cell);
          if (!parsed)
            throw TransformError("column '" + cs.name + "' row " + std::to_string(r + 1) +
                                 ": '" + *cell + "' is not numeric");
          v = *parsed;
        }
        m.values(r, offset) = range > 0.0 ? std::clamp((v - cs.min) / range, 0.0, 1.0) : 0.0;
      }
      m.feature_names.push_back(cs.name);
      m.origin.push_back(c);
      ++offset;
    } else {
      std::unordered_map<std::string, std::size_t> slot;
      for (std::size_t k = 0; k < cs.vocabulary.size(); ++k) slot[cs.vocabulary[k]] = k;
      for (std::size_t r = 0; r < n; ++r) {
        const auto& cell = col.cells[r];
        if (!cell) continue;
        if (auto it = slot.find(*cell); it != slot.end()) m.values(r, offset + it->second) = 1.0;
      }
      for (const auto& tok : cs.vocabulary) {
        m.feature_names.push_back(cs.name + "=" + tok);
        m.origin.push_back(c);
      }
      offset += cs.vocabulary.size();
    }
  }
  return m;
}

DesignMatrix DesignMatrix::subset(std::span<const std::size_t> idx) const {
  DesignMatrix out;
  out.values = values.gather_rows(idx);
  out.feature_names = feature_names;
  out.origin = origin;
  if (targets) out.targets = targets->subset(idx);
  return out;
}

SplitSpec make_splits(std::size_t n, const Targets* targets, std::size_t pretrain_per_class,
                      std::size_t label_budget, double val_frac, std::uint64_t seed) {
  if (!(val_frac > 0.0 && val_frac < 1.0)) throw SplitError("val_frac must lie in (0,1)");
  if (targets && targets->size() != n) throw SplitError("target count does not match n");

  const bool stratify = targets && targets->task == Task::kClassification;
  const std::size_t groups = stratify ? targets->num_classes() : 1;
  std::vector<std::vector<std::size_t>> members(groups);
  for (std::size_t i = 0; i < n; ++i)
    members[stratify ? static_cast<std::size_t>(targets->labels[i]) : 0].push_back(i);

  auto group_name = [&](std::size_t g) {
    return stratify ? "class '" + targets->classes[g] + "'" : std::string("all rows");
  };

  Rng rng = stream(seed, "splits");
  SplitSpec spec;
  spec.seed = seed;
  spec.label_budget = label_budget;
  std::vector<std::size_t> remaining(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    std::shuffle(members[g].begin(), members[g].end(), rng);
    if (members[g].size() < pretrain_per_class)
      throw SplitError(group_name(g) + " has " + std::to_string(members[g].size()) +
                       " samples, pretraining needs " + std::to_string(pretrain_per_class));
    remaining[g] = members[g].size() - pretrain_per_class;
    spec.pretrain_idx.insert(spec.pretrain_idx.end(), members[g].begin(),
                             members[g].begin() + static_cast<std::ptrdiff_t>(pretrain_per_class));
  }

  const std::size_t pool = std::accumulate(remaining.begin(), remaining.end(), std::size_t{0});
  if (label_budget > pool)
    throw SplitError("label budget " + std::to_string(label_budget) + " exceeds the " +
                     std::to_string(pool) + " samples left after pretraining");
  const auto labeled = proportional_allocation(label_budget, remaining);
  const auto n_val = proportional_allocation(
      static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(label_budget))), labeled);
  for (std::size_t g = 0; g < groups; ++g) {
    if (labeled[g] > remaining[g])
      throw SplitError(group_name(g) + " cannot supply " + std::to_string(labeled[g]) +
                       " labeled samples");
    auto it = members[g].begin() + static_cast<std::ptrdiff_t>(pretrain_per_class);
    const auto val_end = it + static_cast<std::ptrdiff_t>(n_val[g]);
    const auto lab_end = it + static_cast<std::ptrdiff_t>(labeled[g]);
    spec.val_idx.insert(spec.val_idx.end(), it, val_end);
    spec.train_idx.insert(spec.train_idx.end(), val_end, lab_end);
    spec.test_idx.insert(spec.test_idx.end(), lab_end, members[g].end());
  }
  for (auto* v : {&spec.pretrain_idx, &spec.train_idx, &spec.val_idx, &spec.test_idx})
    std::sort(v->begin(), v->end());
  return spec;
}

std::string schema_to_json(const FeatureSchema& schema, const Targets* targets) {
  json j;
  j["columns"] = json::array();
  for (const auto& c : schema.columns) {
    json col{{"name", c.name}};
    if (c.kind == ColumnKind::kNumeric) {
      col["kind"] = "numeric";
      col["min"] = c.min;
      col["max"] = c.max;
      col["mean"] = c.mean;
    } else {
      col["kind"] = "categorical";
      col["vocabulary"] = c.vocabulary;
    }
    j["columns"].push_back(std::move(col));
  }
  if (targets) j["target"] = {{"task", to_string(targets->task)}, {"classes", targets->classes}};
  return j.dump(2) + "\n";
}

FeatureSchema schema_from_json(const std::string& text) {
  FeatureSchema schema;
  const json j = json::parse(text);
  for (const auto& col : j.at("columns")) {
    ColumnSchema c;
    c.name = col.at("name").get<std::string>();
    if (col.at("kind") == "numeric") {
      c.kind = ColumnKind::kNumeric;
      c.min = col.at("min").get<double>();
      c.max = col.at("max").get<double>();
      c.mean = col.at("mean").get<double>();
    } else {
      c.kind = ColumnKind::kCategorical;
      c.vocabulary = col.at("vocabulary").get<std::vector<std::string>>();
    }
    schema.columns.push_back(std::move(c));
  }
  return schema;
}

std::string splits_to_json(const SplitSpec& s) {
  json j{{"seed", s.seed},          {"label_budget", s.label_budget},
         {"pretrain_idx", s.pretrain_idx}, {"train_idx", s.train_idx},
         {"val_idx", s.val_idx},    {"test_idx", s.test_idx}};
  return j.dump() + "\n";
}

SplitSpec splits_from_json(const std::string& text) {
  const json j = json::parse(text);
  SplitSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.label_budget = j.at("label_budget").get<std::size_t>();
  s.pretrain_idx = j.at("pretrain_idx").get<std::vector<std::size_t>>();
  s.train_idx = j.at("train_idx").get<std::vector<std::size_t>>();
  s.val_idx = j.at("val_idx").get<std::vector<std::size_t>>();
  s.test_idx = j.at("test_idx").get<std::vector<std::size_t>>();
  return s;
}

void write_design_csv(std::ostream& out, const DesignMatrix& m) {
  for (std::size_t c = 0; c < m.feature_names.size(); ++c)
    out << (c ? "," : "") << csv_escape(m.feature_names[c]);
  if (m.targets) out << (m.feature_names.empty() ? "" : ",") << "__target__";
  out << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? "," : "") << format_double(m.values(r, c));
    if (m.targets) {
      out << (m.cols() ? "," : "");
      if (m.targets->task == Task::kClassification)
        out << m.targets->labels[r];
      else
        out << format_double(m.targets->values[r]);
    }
    out << '\n';
  }
}

DesignMatrix read_design_csv(std::istream& in, std::optional<Task> task,
                             std::vector<std::string> classes) {
  RawTable raw = read_csv(in);
  DesignMatrix m;
  if (task) {
    RawColumn col = raw.take("__target__");
    Targets t;
    t.task = *task;
    t.classes = std::move(classes);
    for (std::size_t r = 0; r < col.cells.size(); ++r) {
      auto v = col.cells[r] ? parse_double(*col.cells[r]) : std::nullopt;
      if (!v) throw ParseError("design cache: bad target at row " + std::to_string(r + 1));
      if (*task == Task::kClassification)
        t.labels.push_back(static_cast<int>(*v));
      else
        t.values.push_back(*v);
    }
    if (*task == Task::kClassification && t.classes.empty()) {
      const int top = t.labels.empty() ? -1 : *std::max_element(t.labels.begin(), t.labels.end());
      for (int c = 0; c <= top; ++c) t.classes.push_back(std::to_string(c));
    }
    m.targets = std::move(t);
  }
  m.values = Tensor(raw.rows(), raw.cols());
  for (std::size_t c = 0; c < raw.cols(); ++c) {
    const auto& col = raw.columns()[c];
    m.feature_names.push_back(col.name);
    m.origin.push_back(c);
    for (std::size_t r = 0; r < raw.rows(); ++r) {
      auto v = col.cells[r] ? parse_double(*col.cells[r]) : std::nullopt;
      if (!v)
        throw ParseError("design cache: bad value at row " + std::to_string(r + 1) + ", column '" +
                         col.name + "'");
      m.values(r, c) = *v;
    }
  }
  return m;
}

RawTable make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic data needs at least two classes");
  Rng rng = stream(spec.seed, "synthetic");
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t n = spec.classes * spec.per_class;

  // Informative numeric means are spread evenly over [-sep, +sep] across
  // classes, with a random orientation per feature.
  std::vector<double> orient(spec.informative_numeric);
  for (double& o : orient) o = unif(rng) < 0.5 ? -1.0 : 1.0;

  std::vector<int> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = static_cast<int>(i % spec.classes);

  auto token = [](const char* prefix, std::size_t v) { return prefix + std::to_string(v); };
  std::vector<RawColumn> cols;
  for (std::size_t j = 0; j < spec.informative_numeric; ++j) {
    RawColumn col{token("inf_", j), {}};
    for (std::size_t i = 0; i < n; ++i) {
      const double pos = 2.0 * label[i] / static_cast<double>(spec.classes - 1) - 1.0;
      col.cells.emplace_back(format_double(spec.separation * orient[j] * pos + gauss(rng)));
    }
    cols.push_back(std::move(col));
  }
  for (std::size_t j = 0; j < spec.informative_categorical; ++j) {
    RawColumn col{token("cat_", j), {}};
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t level = (static_cast<std::size_t>(label[i]) + j) % spec.categorical_levels;
      if (unif(rng) >= 0.7)
        level = static_cast<std::size_t>(unif(rng) * static_cast<double>(spec.categorical_levels)) %
                spec.categorical_levels;
      col.cells.emplace_back(token("L", level));
    }
    cols.push_back(std::move(col));
  }
  for (std::size_t j = 0; j < spec.noise; ++j) {
    RawColumn col{token("noise_", j), {}};
    for (std::size_t i = 0; i < n; ++i) col.cells.emplace_back(format_double(gauss(rng)));
    cols.push_back(std::move(col));
  }
  RawColumn target{"target", {}};
  for (std::size_t i = 0; i < n; ++i) target.cells.emplace_back(token("c", label[i]));
  cols.push_back(std::move(target));
  return RawTable(std::move(cols));
}

}  // namespace tandem::data
