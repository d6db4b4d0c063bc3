#include "tandem/app.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "tandem/errors.hpp"
#include "tandem/eval.hpp"

namespace tandem::app {
namespace fs = std::filesystem;
namespace {

using json = nlohmann::ordered_json;

std::string fmt(double v) {
  char buf[64];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;  // shortest round-trip
  return std::string(buf, end);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is out of range");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not a finite number");
  }
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingArtifact(p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + p.string());
}

fs::path run_dir(const fs::path& root, Variant v) { return root / to_string(v); }

std::vector<std::size_t> categorical_columns(const data::FeatureSchema& schema) {
  std::vector<std::size_t> out;
  std::size_t offset = 0;
  for (const auto& c : schema.columns) {
    if (c.kind == data::ColumnKind::kNumeric) {
      ++offset;
    } else {
      for (std::size_t k = 0; k < c.vocabulary.size(); ++k) out.push_back(offset + k);
      offset += c.vocabulary.size();
    }
  }
  return out;
}

struct Labeled {
  Tensor x;
  data::Targets y;
};

Labeled labeled_rows(const Prepared& p, const std::vector<std::size_t>& idx) {
  if (!p.design.targets) throw FinetuneError("design matrix has no targets");
  return {p.design.values.gather_rows(idx), p.design.targets->subset(idx)};
}

std::string metric_name(data::Task task) {
  return task == data::Task::kClassification ? "accuracy" : "mse";
}

TandemModel load_model(const fs::path& path) { return load_checkpoint(read_file(path)).model; }

void do_pretrain(TandemModel& model, const Prepared& p, const TrainConfig& train,
                 PretrainResult& result, ParamList& opt_params) {
  result = pretrain(model, p.design.values.gather_rows(p.splits.pretrain_idx), train);
  if (result.error) throw OptimizerError(*result.error);
  opt_params = model.pretrain_parameters();
}

}  // namespace

ModelDims ExperimentConfig::dims(std::size_t input_dim) const {
  ModelDims d;
  d.input_dim = input_dim;
  d.trees = trees;
  d.depth = depth;
  d.gate_hidden = gate_hidden;
  d.noise_sigma = noise_sigma;
  return d;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

std::vector<std::string> config_keys() {
  return {"data",
          "target",
          "task",
          "variant",
          "out_dir",
          "seed",
          "pretrain_per_class",
          "label_budget",
          "val_frac",
          "repeats",
          "trees",
          "depth",
          "gate_hidden",
          "noise_sigma",
          "spectral_k",
          "pretrain_epochs",
          "batch_size",
          "lr",
          "weight_decay",
          "finetune_epochs_frozen",
          "finetune_epochs_tuned",
          "finetune_lr_factor",
          "patience",
          "lambda_align",
          "lambda_lrs",
          "rmsprop_decay",
          "rmsprop_eps"};
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  TrainConfig& t = c.train;
  if (key == "data") c.data = value;
  else if (key == "target") c.target = value;
  else if (key == "task") c.task = data::parse_task(value);
  else if (key == "variant") c.variant = parse_variant(value);
  else if (key == "out_dir") c.out_dir = value;
  else if (key == "seed") c.seed = t.seed = to_size(key, value);
  else if (key == "pretrain_per_class") c.pretrain_per_class = to_size(key, value);
  else if (key == "label_budget") c.label_budget = to_size(key, value);
  else if (key == "val_frac") c.val_frac = to_double(key, value);
  else if (key == "repeats") c.repeats = to_size(key, value);
  else if (key == "trees") c.trees = to_size(key, value);
  else if (key == "depth") c.depth = to_size(key, value);
  else if (key == "gate_hidden") c.gate_hidden = to_size(key, value);
  else if (key == "noise_sigma") c.noise_sigma = to_double(key, value);
  else if (key == "spectral_k") c.spectral_k = to_size(key, value);
  else if (key == "pretrain_epochs") t.pretrain_epochs = to_size(key, value);
  else if (key == "batch_size") t.batch_size = to_size(key, value);
  else if (key == "lr") t.lr = to_double(key, value);
  else if (key == "weight_decay") t.weight_decay = to_double(key, value);
  else if (key == "finetune_epochs_frozen") t.finetune_epochs_frozen = to_size(key, value);
  else if (key == "finetune_epochs_tuned") t.finetune_epochs_tuned = to_size(key, value);
  else if (key == "finetune_lr_factor") t.finetune_lr_factor = to_double(key, value);
  else if (key == "patience") t.patience = to_size(key, value);
  else if (key == "lambda_align") t.lambda_align = to_double(key, value);
  else if (key == "lambda_lrs") t.lambda_lrs = to_double(key, value);
  else if (key == "rmsprop_decay") t.rmsprop_decay = to_double(key, value);
  else if (key == "rmsprop_eps") t.rmsprop_eps = to_double(key, value);
  else throw ConfigError("unknown key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    try {
      set_config_value(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      const std::string prefix = std::string(e.kind()) + ": ";
      throw ConfigError("line " + std::to_string(line_no) + ": " +
                        (what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what));
    }
  }
  return c;
}

ExperimentConfig load_config_file(const std::string& path) { return parse_config(read_file(path)); }

std::string serialize_config(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  std::ostringstream o;
  o << "data = " << c.data << '\n'
    << "target = " << c.target << '\n'
    << "task = " << data::to_string(c.task) << '\n'
    << "variant = " << to_string(c.variant) << '\n'
    << "out_dir = " << c.out_dir << '\n'
    << "seed = " << c.seed << '\n'
    << "pretrain_per_class = " << c.pretrain_per_class << '\n'
    << "label_budget = " << c.label_budget << '\n'
    << "val_frac = " << fmt(c.val_frac) << '\n'
    << "repeats = " << c.repeats << '\n'
    << "trees = " << c.trees << '\n'
    << "depth = " << c.depth << '\n'
    << "gate_hidden = " << c.gate_hidden << '\n'
    << "noise_sigma = " << fmt(c.noise_sigma) << '\n'
    << "spectral_k = " << c.spectral_k << '\n'
    << "pretrain_epochs = " << t.pretrain_epochs << '\n'
    << "batch_size = " << t.batch_size << '\n'
    << "lr = " << fmt(t.lr) << '\n'
    << "weight_decay = " << fmt(t.weight_decay) << '\n'
    << "finetune_epochs_frozen = " << t.finetune_epochs_frozen << '\n'
    << "finetune_epochs_tuned = " << t.finetune_epochs_tuned << '\n'
    << "finetune_lr_factor = " << fmt(t.finetune_lr_factor) << '\n'
    << "patience = " << t.patience << '\n'
    << "lambda_align = " << fmt(t.lambda_align) << '\n'
    << "lambda_lrs = " << fmt(t.lambda_lrs) << '\n'
    << "rmsprop_decay = " << fmt(t.rmsprop_decay) << '\n'
    << "rmsprop_eps = " << fmt(t.rmsprop_eps) << '\n';
  return o.str();
}

int exit_code_for(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return 3;
  const std::string kind = err->kind();
  if (kind == "ConfigError") return 1;
  if (kind == "ParseError" || kind == "SchemaError" || kind == "TransformError" ||
      kind == "SplitError" || kind == "MissingArtifact")
    return 2;
  return 3;
}

fs::path output_root(const ExperimentConfig& config) {
  fs::path p(config.out_dir);
  if (p.is_relative())
    if (const char* root = std::getenv("TANDEM_OUT_ROOT"); root && *root) p = fs::path(root) / p;
  return p;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  std::ostringstream o;
  for (unsigned int i = 0; i < len; ++i)
    o << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return o.str();
}

Prepared prepare(const ExperimentConfig& config) {
  if (config.data.empty()) throw ConfigError("no data file given");
  data::RawTable raw = data::read_csv_file(config.data);
  data::Targets targets = data::extract_targets(raw, config.target, config.task);
  Prepared p;
  p.dataset = fs::path(config.data).stem().string();
  p.splits = data::make_splits(raw.rows(), &targets, config.pretrain_per_class, config.label_budget,
                               config.val_frac, config.seed);
  p.schema = data::fit_schema(raw, p.splits.pretrain_idx);
  p.design = data::transform(raw, p.schema);
  p.design.targets = std::move(targets);
  p.categorical_features = categorical_columns(p.schema);
  return p;
}

Prepared load_prepared(const fs::path& root) {
  const std::string manifest_text = read_file(root / "manifest.json");
  const std::string schema_text = read_file(root / "schema.json");
  const std::string splits_text = read_file(root / "splits.json");
  std::ifstream design_in(root / "design.csv", std::ios::binary);
  if (!design_in) throw MissingArtifact((root / "design.csv").string());
  Prepared p;
  try {
    const json manifest = json::parse(manifest_text);
    p.dataset = manifest.at("dataset").get<std::string>();
    const json schema = json::parse(schema_text);
    p.schema = data::schema_from_json(schema_text);
    std::optional<data::Task> task;
    std::vector<std::string> classes;
    if (schema.contains("target")) {
      task = data::parse_task(schema.at("target").at("task").get<std::string>());
      classes = schema.at("target").at("classes").get<std::vector<std::string>>();
    }
    p.splits = data::splits_from_json(splits_text);
    p.design = data::read_design_csv(design_in, task, classes);
  } catch (const json::exception& e) {
    throw ParseError(std::string("preprocessed artifacts: ") + e.what());
  }
  if (p.design.cols() != p.schema.width())
    throw SchemaError("design has " + std::to_string(p.design.cols()) + " columns, schema expects " +
                      std::to_string(p.schema.width()));
  p.categorical_features = categorical_columns(p.schema);
  return p;
}

double score(TandemModel& model, const Tensor& x, const data::Targets& y) {
  return validation_metric(model, x, y);
}

RunOutcome run_variant(const ExperimentConfig& config, const Prepared& p, Variant variant,
                       std::uint64_t seed) {
  ExperimentConfig c = config;
  c.seed = seed;
  const TrainConfig train = c.train_config();
  RunOutcome out{TandemModel(variant, c.dims(p.design.cols()),
                             LossWeights{train.lambda_align, train.lambda_lrs}, seed),
                 {}, {}, metric_name(p.design.targets->task), 0.0};
  ParamList unused;
  do_pretrain(out.model, p, train, out.pretrain, unused);
  const Labeled tr = labeled_rows(p, p.splits.train_idx);
  const Labeled va = labeled_rows(p, p.splits.val_idx);
  out.finetune = finetune(out.model, tr.x, tr.y, va.x, va.y, train);
  const Labeled te = labeled_rows(p, p.splits.test_idx);
  out.test_value = score(out.model, te.x, te.y);
  return out;
}

void cmd_synth(const std::string& path, const data::SyntheticSpec& spec) {
  std::ostringstream o;
  data::write_csv(o, data::make_synthetic(spec));
  write_file(path, o.str());
}

void cmd_preprocess(const ExperimentConfig& config, std::ostream& log) {
  const fs::path root = output_root(config);
  const Prepared p = prepare(config);
  std::ostringstream design, schema, splits;
  data::write_design_csv(design, p.design);
  const std::vector<std::pair<std::string, std::string>> artifacts{
      {"design.csv", design.str()},
      {"schema.json", data::schema_to_json(p.schema, &*p.design.targets)},
      {"splits.json", data::splits_to_json(p.splits)}};
  json manifest;
  manifest["dataset"] = p.dataset;
  manifest["source_sha256"] = sha256_hex(read_file(config.data));
  manifest["seed"] = config.seed;
  manifest["rows"] = p.design.rows();
  manifest["features"] = p.design.cols();
  manifest["artifacts"] = json::array();
  for (const auto& [name, content] : artifacts) {
    write_file(root / name, content);
    manifest["artifacts"].push_back(
        {{"file", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
  }
  write_file(root / "manifest.json", manifest.dump(2) + "\n");
  write_file(root / "config.txt", serialize_config(config));
  log << "preprocessed " << p.design.rows() << " rows x " << p.design.cols() << " features into "
      << root.string() << " (pretrain " << p.splits.pretrain_idx.size() << ", train "
      << p.splits.train_idx.size() << ", val " << p.splits.val_idx.size() << ", test "
      << p.splits.test_idx.size() << ")\n";
}

void cmd_pretrain(const ExperimentConfig& config, std::ostream& log) {
  const fs::path root = output_root(config);
  const Prepared p = load_prepared(root);
  const TrainConfig train = config.train_config();
  TandemModel model(config.variant, config.dims(p.design.cols()),
                    LossWeights{train.lambda_align, train.lambda_lrs}, config.seed);
  PretrainResult result;
  ParamList opt_params;
  do_pretrain(model, p, train, result, opt_params);
  const fs::path dir = run_dir(root, config.variant);
  write_file(dir / "pretrain.ckpt.json",
             save_checkpoint(model, {"pretrain", train}, &result.optimizer, &opt_params));
  std::ostringstream hist;
  write_pretrain_history(hist, result.history);
  write_file(dir / "pretrain_loss.csv", hist.str());
  if (!result.history.empty())
    log << to_string(config.variant) << ": pretrained " << result.history.size()
        << " epochs, total loss " << result.history.front().total << " -> "
        << result.history.back().total << '\n';
  else
    log << to_string(config.variant) << ": wrote initial checkpoint (0 epochs)\n";
}

void cmd_finetune(const ExperimentConfig& config, std::ostream& log) {
  const fs::path root = output_root(config);
  const Prepared p = load_prepared(root);
  const fs::path dir = run_dir(root, config.variant);
  TandemModel model = load_model(dir / "pretrain.ckpt.json");
  const TrainConfig train = config.train_config();
  const Labeled tr = labeled_rows(p, p.splits.train_idx);
  const Labeled va = labeled_rows(p, p.splits.val_idx);
  const FinetuneResult result = finetune(model, tr.x, tr.y, va.x, va.y, train);
  write_file(dir / "finetune.ckpt.json", save_checkpoint(model, {"finetune", train}));
  std::ostringstream hist;
  write_finetune_history(hist, result.history);
  write_file(dir / "finetune_history.csv", hist.str());
  log << to_string(config.variant) << ": fine-tuned " << result.history.size()
      << " epochs, best validation " << metric_name(tr.y.task) << " " << result.best_metric
      << " at epoch " << result.best_epoch << '\n';
}

void cmd_evaluate(const ExperimentConfig& config, std::ostream& log) {
  const fs::path root = output_root(config);
  const Prepared p = load_prepared(root);
  const fs::path dir = run_dir(root, config.variant);
  TandemModel model = load_model(dir / "finetune.ckpt.json");
  const Labeled te = labeled_rows(p, p.splits.test_idx);
  const double value = score(model, te.x, te.y);
  json m;
  m["dataset"] = p.dataset;
  m["variant"] = to_string(config.variant);
  m["seed"] = config.seed;
  m["metric"] = metric_name(te.y.task);
  m["value"] = value;
  m["n_test"] = te.x.rows();
  write_file(dir / "metrics.json", m.dump(2) + "\n");
  log << to_string(config.variant) << ": test " << metric_name(te.y.task) << " = " << value << '\n';

  // One row per dataset, one column per variant with a metrics file.
  ResultTable table;
  table.orientation =
      te.y.task == data::Task::kClassification ? Orientation::kHigherBetter : Orientation::kLowerBetter;
  std::vector<std::optional<double>> row;
  for (Variant v : kAllVariants) {
    const fs::path mp = run_dir(root, v) / "metrics.json";
    if (!fs::exists(mp)) continue;
    table.methods.push_back(to_string(v));
    row.push_back(json::parse(read_file(mp)).at("value").get<double>());
  }
  table.add_row(p.dataset, row);
  std::ostringstream rt;
  write_result_table(rt, table);
  write_file(root / "results.csv", rt.str());
  if (table.methods.size() >= 2) {
    double tau_max = 1.0;
    for (const auto& r : performance_ratios(table))
      for (double x : r) tau_max = std::max(tau_max, x);
    const auto taus = tau_grid(tau_max, 21);
    std::ostringstream pc;
    write_profile_csv(pc, dolan_more(table, taus), table.methods);
    write_file(root / "profile.csv", pc.str());
  }
}

void cmd_spectral(const ExperimentConfig& config, std::ostream& log) {
  const fs::path root = output_root(config);
  const Prepared p = load_prepared(root);
  const fs::path dir = run_dir(root, config.variant);
  TandemModel model = load_model(dir / "finetune.ckpt.json");
  const Labeled te = labeled_rows(p, p.splits.test_idx);
  Tensor x_class = te.x;
  int class_id = -1;
  if (te.y.task == data::Task::kClassification) {
    const Labeled va = labeled_rows(p, p.splits.val_idx);
    class_id = best_class(predict_labels(model, va.x), va.y.labels, va.y.num_classes());
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < te.y.labels.size(); ++i)
      if (te.y.labels[i] == class_id) rows.push_back(i);
    x_class = te.x.gather_rows(rows);
  }
  const SpectralReport rep = spectral_report(model, x_class, config.spectral_k, class_id);
  std::ostringstream csv;
  write_spectrum_csv(csv, rep);
  write_file(dir / "spectrum.csv", csv.str());
  write_file(dir / "spectral.json", report_to_json(rep));

  std::vector<std::size_t> all(te.x.cols());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  write_file(dir / "gating_all.json", diagnostics_to_json(gating_diagnostics(model, te.x, all)));
  if (!p.categorical_features.empty())
    write_file(dir / "gating_categorical.json",
               diagnostics_to_json(gating_diagnostics(model, te.x, p.categorical_features)));
  log << to_string(config.variant) << ": spectra over " << rep.features.size() << " features, "
      << rep.samples << " samples of class " << class_id << "; high-frequency mass original "
      << high_frequency_mass(rep.original) << ", nn " << high_frequency_mass(rep.nn) << ", osdt "
      << high_frequency_mass(rep.osdt) << '\n';
}

void cmd_ablate(const ExperimentConfig& config, std::ostream& log) {
  const fs::path root = output_root(config);
  const Prepared p = load_prepared(root);
  const std::size_t repeats = std::max<std::size_t>(config.repeats, 1);
  std::ostringstream out;
  out << "variant,metric,mean,std,repeats\n";
  for (Variant v : kAllVariants) {
    std::vector<double> values;
    for (std::size_t r = 0; r < repeats; ++r) {
      RunOutcome run = run_variant(config, p, v, config.seed + r);
      values.push_back(run.test_value);
      log << to_string(v) << " seed " << config.seed + r << ": " << run.metric << " "
          << run.test_value << '\n';
    }
    double mean = 0.0;
    for (double x : values) mean += x;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double x : values) var += (x - mean) * (x - mean);
    const double sd = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    out << to_string(v) << ',' << metric_name(p.design.targets->task) << ',' << fmt(mean) << ','
        << fmt(sd) << ',' << values.size() << '\n';
  }
  write_file(root / "ablation.csv", out.str());
}

}  // namespace tandem::app
