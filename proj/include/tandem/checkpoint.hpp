#pragma once

// JSON checkpoints and loss-history CSVs. Output is a pure function of the
// model state, so identical runs give byte-identical files.

#include <iosfwd>
#include <string>
#include <vector>

#include "tandem/training.hpp"

namespace tandem {

struct CheckpointMeta {
  std::string stage;  // "init", "pretrain" or "finetune"
  TrainConfig config;
};

// Every parameter, batchnorm buffer and (optionally) optimizer accumulator by
// name, plus variant, dims, loss weights, seed and the training config.
std::string save_checkpoint(TandemModel& model, const CheckpointMeta& meta,
                            const OptimizerState* optimizer = nullptr,
                            const ParamList* optimizer_params = nullptr);

struct LoadedCheckpoint {
  TandemModel model;
  CheckpointMeta meta;
  OptimizerState optimizer;                // empty when none was saved
  std::vector<std::string> optimizer_for;  // parameter names, same order
};

// Rebuilds the architecture and restores every tensor. Throws
// CheckpointError on malformed input or a name/shape mismatch.
LoadedCheckpoint load_checkpoint(const std::string& text);

void write_pretrain_history(std::ostream& out, const std::vector<EpochLosses>& history);
void write_finetune_history(std::ostream& out, const std::vector<FinetuneEpoch>& history);

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& text);

}  // namespace tandem
