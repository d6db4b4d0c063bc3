#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "tandem/data.hpp"
#include "tandem/errors.hpp"

using namespace tandem;
using namespace tandem::data;

namespace {

RawTable parse(const std::string& text) {
  std::istringstream in(text);
  return read_csv(in);
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST_CASE("csv parsing handles quotes and missing markers") {
  const auto t = parse("a,b,c\n1,\"x,y\",NA\n2,\"say \"\"hi\"\"\",\n");
  REQUIRE(t.rows() == 2);
  REQUIRE(t.cols() == 3);
  CHECK(*t.columns()[1].cells[0] == "x,y");
  CHECK(*t.columns()[1].cells[1] == "say \"hi\"");
  CHECK_FALSE(t.columns()[2].cells[0].has_value());
  CHECK_FALSE(t.columns()[2].cells[1].has_value());
}

TEST_CASE("csv errors name the line") {
  try {
    parse("a,b\n1,2\n3\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("a,a\n1,2\n"), ParseError);
  CHECK_THROWS_AS(parse("a,b\n\"1,2\n"), ParseError);
}

TEST_CASE("csv write/read round trip") {
  const auto t = parse("name,v\n\"a,b\",1\nNA,2\n");
  std::ostringstream out;
  write_csv(out, t);
  const auto back = parse(out.str());
  CHECK(back.columns()[0].cells == t.columns()[0].cells);
  CHECK(back.columns()[1].cells == t.columns()[1].cells);
}

TEST_CASE("targets map classes in first-appearance order") {
  auto t = parse("x,y\n1,b\n2,a\n3,b\n");
  const Targets y = extract_targets(t, "y", Task::kClassification);
  CHECK(y.classes == std::vector<std::string>{"b", "a"});
  CHECK(y.labels == std::vector<int>{0, 1, 0});
  CHECK(t.cols() == 1);
  auto r = parse("x,y\n1,0.5\n2,NA\n");
  CHECK_THROWS_AS(extract_targets(r, "y", Task::kRegression), ParseError);
  auto m = parse("x\n1\n");
  CHECK_THROWS_AS(extract_targets(m, "y", Task::kClassification), ParseError);
}

TEST_CASE("schema fit and transform: min-max, imputation, one-hot") {
  const auto t = parse("num,cat\n0,a\n10,b\nNA,a\n5,NA\n20,c\n");
  const std::vector<std::size_t> fit{0, 1, 2, 3};  // row 4 is held out
  const FeatureSchema s = fit_schema(t, fit);
  REQUIRE(s.columns.size() == 2);
  CHECK(s.columns[0].kind == ColumnKind::kNumeric);
  CHECK(s.columns[0].min == 0.0);
  CHECK(s.columns[0].max == 10.0);
  CHECK(s.columns[0].mean == 5.0);
  CHECK(s.columns[1].vocabulary == std::vector<std::string>{"a", "b"});
  CHECK(s.width() == 3);

  const DesignMatrix m = transform(t, s);
  CHECK(m.feature_names == std::vector<std::string>{"num", "cat=a", "cat=b"});
  const double want[5][3] = {{0, 1, 0}, {1, 0, 1}, {0.5, 1, 0}, {0.5, 0, 0}, {1, 0, 0}};
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(m.values(r, c) == want[r][c]);
}

TEST_CASE("transform outputs stay in [0,1] and constant columns map to 0") {
  const auto t = parse("k,v\n3,-4\n3,100\n3,7\n");
  const auto s = fit_schema(t, std::vector<std::size_t>{0, 2});
  const auto m = transform(t, s);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(m.values(r, 0) == 0.0);
    CHECK(m.values(r, 1) >= 0.0);
    CHECK(m.values(r, 1) <= 1.0);
  }
  CHECK(m.values(1, 1) == 1.0);  // clamped
}

TEST_CASE("a column with any non-numeric cell is categorical") {
  const auto t = parse("c\n1\n2\nx\n");
  const auto s = fit_schema(t, std::vector<std::size_t>{0, 1});
  CHECK(s.columns[0].kind == ColumnKind::kCategorical);
  CHECK(s.columns[0].vocabulary == std::vector<std::string>{"1", "2"});
}

TEST_CASE("schema errors") {
  const auto t = parse("a,b\n1,NA\n2,NA\n");
  CHECK_THROWS_AS(fit_schema(t, std::vector<std::size_t>{}), SchemaError);
  CHECK_THROWS_AS(fit_schema(t, std::vector<std::size_t>{0, 1}), SchemaError);
  const auto ok = parse("a\n1\n");
  const auto s = fit_schema(ok, std::vector<std::size_t>{0});
  CHECK_THROWS_AS(transform(parse("b\n1\n"), s), TransformError);
}

TEST_CASE("schema and split JSON round trip") {
  auto t = parse("n,c,y\n1,a,p\n2,b,q\n3,a,p\n4,b,q\n");
  const Targets y = extract_targets(t, "y", Task::kClassification);
  const auto s = fit_schema(t, all_rows(4));
  const auto back = schema_from_json(schema_to_json(s, &y));
  REQUIRE(back.columns.size() == s.columns.size());
  for (std::size_t i = 0; i < s.columns.size(); ++i) {
    CHECK(back.columns[i].name == s.columns[i].name);
    CHECK(back.columns[i].kind == s.columns[i].kind);
    CHECK(back.columns[i].min == s.columns[i].min);
    CHECK(back.columns[i].max == s.columns[i].max);
    CHECK(back.columns[i].mean == s.columns[i].mean);
    CHECK(back.columns[i].vocabulary == s.columns[i].vocabulary);
  }
  const SplitSpec sp = make_splits(4, &y, 1, 2, 0.5, 3);
  const SplitSpec sb = splits_from_json(splits_to_json(sp));
  CHECK(sb.seed == sp.seed);
  CHECK(sb.pretrain_idx == sp.pretrain_idx);
  CHECK(sb.train_idx == sp.train_idx);
  CHECK(sb.val_idx == sp.val_idx);
  CHECK(sb.test_idx == sp.test_idx);
}

TEST_CASE("design cache round trip is exact") {
  auto t = parse("n,c,y\n0.1,a,p\n0.7,b,q\n0.3333333333333333,a,q\n");
  Targets y = extract_targets(t, "y", Task::kClassification);
  DesignMatrix m = transform(t, fit_schema(t, all_rows(3)));
  m.targets = y;
  std::ostringstream out;
  write_design_csv(out, m);
  std::istringstream in(out.str());
  const DesignMatrix back = read_design_csv(in, Task::kClassification, y.classes);
  CHECK(back.values == m.values);
  CHECK(back.feature_names == m.feature_names);
  CHECK(back.targets->labels == y.labels);
  CHECK(back.targets->classes == y.classes);
}

TEST_CASE("splits are stratified, disjoint, exhaustive and seeded") {
  const SyntheticSpec spec{.classes = 3, .per_class = 50, .noise = 2, .seed = 1};
  auto raw = make_synthetic(spec);
  const Targets y = extract_targets(raw, "target", Task::kClassification);
  const SplitSpec s = make_splits(y.size(), &y, 20, 30, 0.25, 9);
  CHECK(s.pretrain_idx.size() == 60);
  CHECK(s.train_idx.size() + s.val_idx.size() == 30);
  CHECK(s.val_idx.size() == 8);  // llround(0.25 * 30) = 8 (7.5 rounds away from zero)
  CHECK(s.test_idx.size() == 150 - 60 - 30);
  std::set<std::size_t> seen;
  for (const auto* v : {&s.pretrain_idx, &s.train_idx, &s.val_idx, &s.test_idx}) {
    CHECK(std::is_sorted(v->begin(), v->end()));
    for (std::size_t i : *v) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == 150);
  std::vector<int> per_class(3, 0);
  for (std::size_t i : s.pretrain_idx) ++per_class[y.labels[i]];
  CHECK(per_class == std::vector<int>{20, 20, 20});
  std::vector<int> labeled(3, 0);
  for (const auto* v : {&s.train_idx, &s.val_idx})
    for (std::size_t i : *v) ++labeled[y.labels[i]];
  CHECK(labeled == std::vector<int>{10, 10, 10});

  const SplitSpec again = make_splits(y.size(), &y, 20, 30, 0.25, 9);
  CHECK(again.train_idx == s.train_idx);
  const SplitSpec other = make_splits(y.size(), &y, 20, 30, 0.25, 10);
  CHECK(other.pretrain_idx != s.pretrain_idx);
}

TEST_CASE("split errors name the class") {
  auto t = parse("x,y\n1,a\n2,a\n3,a\n4,b\n");
  const Targets y = extract_targets(t, "y", Task::kClassification);
  try {
    make_splits(4, &y, 2, 0, 0.25, 0);
    FAIL("expected SplitError");
  } catch (const SplitError& e) {
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }
  CHECK_THROWS_AS(make_splits(4, &y, 1, 5, 0.25, 0), SplitError);
  CHECK_THROWS_AS(make_splits(4, &y, 1, 1, 1.0, 0), SplitError);
}

TEST_CASE("regression splits treat all rows as one group") {
  auto t = parse("x,y\n1,0.1\n2,0.2\n3,0.3\n4,0.4\n5,0.5\n6,0.6\n");
  const Targets y = extract_targets(t, "y", Task::kRegression);
  const SplitSpec s = make_splits(6, &y, 2, 2, 0.5, 4);
  CHECK(s.pretrain_idx.size() == 2);
  CHECK(s.train_idx.size() == 1);
  CHECK(s.val_idx.size() == 1);
  CHECK(s.test_idx.size() == 2);
}

TEST_CASE("synthetic generator layout") {
  const SyntheticSpec spec{.classes = 2, .per_class = 10, .seed = 5};
  const auto raw = make_synthetic(spec);
  CHECK(raw.rows() == 20);
  CHECK(raw.cols() == 8 + 2 + 40 + 1);
  CHECK(raw.find("inf_0"));
  CHECK(raw.find("cat_1"));
  CHECK(raw.find("noise_39"));
  CHECK(raw.columns().back().name == "target");
  const auto again = make_synthetic(spec);
  for (std::size_t c = 0; c < raw.cols(); ++c) CHECK(raw.columns()[c].cells == again.columns()[c].cells);
}
