#pragma once

// Experiment configuration and the pipeline commands behind the CLI.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tandem/checkpoint.hpp"
#include "tandem/data.hpp"
#include "tandem/errors.hpp"
#include "tandem/spectral.hpp"

namespace tandem::app {

struct ExperimentConfig {
  std::string data;  // raw CSV
  std::string target = "target";
  data::Task task = data::Task::kClassification;
  Variant variant = Variant::kTandem;
  std::string out_dir = "runs";
  std::uint64_t seed = 0;
  std::size_t pretrain_per_class = 2000;
  std::size_t label_budget = 400;
  double val_frac = 0.25;
  std::size_t repeats = 1;
  std::size_t trees = 8;
  std::size_t depth = 5;
  std::size_t gate_hidden = 0;
  double noise_sigma = kDefaultGateNoise;
  std::size_t spectral_k = kSpectralFeatures;
  TrainConfig train;  // train.seed mirrors seed

  ModelDims dims(std::size_t input_dim) const;
  TrainConfig train_config() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// Line-oriented key=value; '#' starts a comment. Unknown keys and malformed
// values throw ConfigError naming the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);
std::string serialize_config(const ExperimentConfig& config);
std::vector<std::string> config_keys();

// A required input file is absent.
class MissingArtifact : public Error {
 public:
  explicit MissingArtifact(const std::string& path) : Error("MissingArtifact", "missing file " + path) {}
};

// 0 success, 1 usage, 2 data, 3 runtime.
int exit_code_for(const std::exception& e);

// Output directory, resolved against TANDEM_OUT_ROOT when relative.
std::filesystem::path output_root(const ExperimentConfig& config);

std::string sha256_hex(const std::string& bytes);

// In-memory result of preprocessing.
struct Prepared {
  std::string dataset;
  data::DesignMatrix design;
  data::FeatureSchema schema;
  data::SplitSpec splits;
  std::vector<std::size_t> categorical_features;  // design columns from categorical inputs
};

Prepared prepare(const ExperimentConfig& config);
// Reads the cached artifacts written by cmd_preprocess.
Prepared load_prepared(const std::filesystem::path& root);

struct RunOutcome {
  TandemModel model;
  PretrainResult pretrain;
  FinetuneResult finetune;
  std::string metric;  // "accuracy" or "mse"
  double test_value = 0.0;
};

// Pretrain, fine-tune and score one variant under one seed.
RunOutcome run_variant(const ExperimentConfig& config, const Prepared& prepared, Variant variant,
                       std::uint64_t seed);

double score(TandemModel& model, const Tensor& x, const data::Targets& y);

void cmd_synth(const std::string& path, const data::SyntheticSpec& spec);
void cmd_preprocess(const ExperimentConfig& config, std::ostream& log);
void cmd_pretrain(const ExperimentConfig& config, std::ostream& log);
void cmd_finetune(const ExperimentConfig& config, std::ostream& log);
void cmd_evaluate(const ExperimentConfig& config, std::ostream& log);
void cmd_spectral(const ExperimentConfig& config, std::ostream& log);
void cmd_ablate(const ExperimentConfig& config, std::ostream& log);

}  // namespace tandem::app
