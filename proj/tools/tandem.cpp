// Command-line driver: synth, preprocess, pretrain, finetune, evaluate,
// spectral, ablate, run (all stages) and config (print the effective config).

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tandem/app.hpp"

namespace {

using tandem::app::ExperimentConfig;

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("-c,--config", common.config_file, "key=value config file");
  cmd->add_option("--set", common.sets, "override as key=value (repeatable)");
  for (const auto& key : tandem::app::config_keys())
    cmd->add_option("--" + key, common.flags[key], "config key " + key);
}

ExperimentConfig resolve(const Common& common) {
  ExperimentConfig cfg;
  if (!common.config_file.empty()) cfg = tandem::app::load_config_file(common.config_file);
  for (const auto& [key, value] : common.flags)
    if (!value.empty()) tandem::app::set_config_value(cfg, key, value);
  for (const auto& kv : common.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw tandem::ConfigError("--set expects key=value, got '" + kv + "'");
    tandem::app::set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid tree/neural self-supervised tabular autoencoder"};
  app.require_subcommand(1);

  Common common;
  std::string synth_out;
  tandem::data::SyntheticSpec synth;
  auto* synth_cmd = app.add_subcommand("synth", "write the bundled synthetic benchmark as CSV");
  synth_cmd->add_option("-o,--out", synth_out, "output CSV")->required();
  synth_cmd->add_option("--classes", synth.classes);
  synth_cmd->add_option("--per-class", synth.per_class);
  synth_cmd->add_option("--informative", synth.informative_numeric);
  synth_cmd->add_option("--categorical", synth.informative_categorical);
  synth_cmd->add_option("--levels", synth.categorical_levels);
  synth_cmd->add_option("--noise", synth.noise);
  synth_cmd->add_option("--separation", synth.separation);
  synth_cmd->add_option("--seed", synth.seed);

  const std::vector<std::pair<std::string, std::string>> stages{
      {"preprocess", "fit the preprocessing pipeline and write splits"},
      {"pretrain", "self-supervised pretraining"},
      {"finetune", "freeze-then-tune on the labeled split"},
      {"evaluate", "score the test split and update the result table"},
      {"spectral", "spectra of gated inputs and gate diagnostics"},
      {"ablate", "train and score every variant"},
      {"run", "preprocess, pretrain, finetune and evaluate"},
      {"config", "print the effective configuration"}};
  std::map<std::string, CLI::App*> cmds;
  for (const auto& [name, help] : stages) {
    cmds[name] = app.add_subcommand(name, help);
    add_common(cmds[name], common);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) {
      tandem::app::cmd_synth(synth_out, synth);
      return 0;
    }
    const ExperimentConfig cfg = resolve(common);
    auto& log = std::cerr;
    if (*cmds["config"]) std::cout << tandem::app::serialize_config(cfg);
    if (*cmds["preprocess"] || *cmds["run"]) tandem::app::cmd_preprocess(cfg, log);
    if (*cmds["pretrain"] || *cmds["run"]) tandem::app::cmd_pretrain(cfg, log);
    if (*cmds["finetune"] || *cmds["run"]) tandem::app::cmd_finetune(cfg, log);
    if (*cmds["evaluate"] || *cmds["run"]) tandem::app::cmd_evaluate(cfg, log);
    if (*cmds["spectral"]) tandem::app::cmd_spectral(cfg, log);
    if (*cmds["ablate"]) tandem::app::cmd_ablate(cfg, log);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return tandem::app::exit_code_for(e);
  }
}
