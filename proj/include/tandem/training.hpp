#pragma once

// Optimizer, self-supervised pretraining and the freeze-then-tune protocol.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tandem/data.hpp"
#include "tandem/model.hpp"

namespace tandem {

struct TrainConfig {
  std::size_t pretrain_epochs = 100;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t finetune_epochs_frozen = 25;
  std::size_t finetune_epochs_tuned = 25;
  double finetune_lr_factor = 0.1;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double lambda_align = 1.0;
  double lambda_lrs = 1.0;
  double rmsprop_decay = 0.9;
  double rmsprop_eps = 1e-8;

  // Throws ConfigError on non-positive batch/lr or factors outside (0,1].
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct OptimizerConfig {
  double lr = 1e-3;
  double decay = 0.9;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Running mean of squared gradients, one tensor per parameter (same order).
struct OptimizerState {
  std::vector<Tensor> sq_avg;
};

// v <- decay*v + (1-decay)*g^2;  p <- p - lr*g/(sqrt(v)+eps) - lr*wd*p.
// Reads each parameter's grad buffer. Non-finite gradients throw
// OptimizerError before anything is modified.
void rmsprop_step(std::span<ad::Var> params, OptimizerState& state, const OptimizerConfig& config);

struct EpochLosses {
  std::size_t epoch = 0;  // 1-based
  double recon = 0.0;
  double align = 0.0;
  double lrs = 0.0;
  double total = 0.0;
};

struct PretrainResult {
  std::vector<EpochLosses> history;
  OptimizerState optimizer;
  std::optional<std::string> error;  // set when an optimizer step aborted the run
};

// Shuffled mini-batches per epoch; drops a trailing batch only when it has a
// single row.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng);

PretrainResult pretrain(TandemModel& model, const Tensor& pool, const TrainConfig& config);

struct FinetuneEpoch {
  std::size_t epoch = 0;  // 1-based, across both phases
  int phase = 1;
  double train_loss = 0.0;
  double val_metric = 0.0;  // accuracy or MSE; NaN without a validation set
};

struct FinetuneResult {
  std::vector<FinetuneEpoch> history;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  bool stopped_early = false;
};

// Phase 1: head only, encoder and gates frozen, eval-mode encoder.
// Phase 2: head + downstream encoder at lr * finetune_lr_factor, early
// stopping on the validation metric. Gates never change. The best
// validation checkpoint (head, encoder, batchnorm stats) is restored.
FinetuneResult finetune(TandemModel& model, const Tensor& x_train, const data::Targets& y_train,
                        const Tensor& x_val, const data::Targets& y_val, const TrainConfig& config);

// Validation metric of the current model: accuracy or MSE.
double validation_metric(TandemModel& model, const Tensor& x, const data::Targets& y);

}  // namespace tandem
