#include "tandem/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tandem/errors.hpp"
#include "tandem/eval.hpp"

namespace tandem {
namespace {

// Marks `trainable` as the only parameters needing gradients for the guard's
// lifetime.
class TrainableScope {
 public:
  TrainableScope(TandemModel& model, const ParamList& trainable) : all_(model.parameters()) {
    for (auto& p : all_) {
      saved_.push_back(p.var.requires_grad());
      p.var.set_requires_grad(false);
    }
    for (const auto& p : trainable) const_cast<ad::Var&>(p.var).set_requires_grad(true);
  }
  ~TrainableScope() {
    for (std::size_t i = 0; i < all_.size(); ++i) all_[i].var.set_requires_grad(saved_[i]);
  }
  TrainableScope(const TrainableScope&) = delete;
  TrainableScope& operator=(const TrainableScope&) = delete;

 private:
  ParamList all_;
  std::vector<bool> saved_;
};

struct Snapshot {
  std::vector<Tensor> params;
  std::vector<Tensor> buffers;
};

Snapshot take_snapshot(const ParamList& params, const BufferList& buffers) {
  Snapshot s;
  for (const auto& p : params) s.params.push_back(p.var.value());
  for (const auto& b : buffers) s.buffers.push_back(*b.second);
  return s;
}

void restore_snapshot(const Snapshot& s, ParamList& params, BufferList& buffers) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i].var.mutable_value() = s.params[i];
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].second = s.buffers[i];
}

bool better(data::Task task, double candidate, double incumbent) {
  return task == data::Task::kClassification ? candidate > incumbent : candidate < incumbent;
}

ad::Var supervised_loss(const ad::Var& out, const data::Targets& y) {
  if (y.task == data::Task::kClassification) return ad::softmax_cross_entropy(out, y.labels);
  Tensor t(y.values.size(), 1, y.values);
  return ad::mean(ad::square(ad::sub(out, ad::constant(std::move(t)))));
}

void check_targets(const data::Targets& y, const Tensor& x, data::Task task, std::size_t classes,
                   const char* what) {
  if (y.task != task) throw FinetuneError(std::string(what) + " targets have a different task");
  if (y.size() != x.rows())
    throw FinetuneError(std::string(what) + " has " + std::to_string(x.rows()) + " rows but " +
                        std::to_string(y.size()) + " targets");
  if (task == data::Task::kClassification)
    for (int l : y.labels)
      if (l < 0 || static_cast<std::size_t>(l) >= classes)
        throw FinetuneError(std::string(what) + " label " + std::to_string(l) +
                            " outside the class range");
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(finetune_lr_factor > 0.0 && finetune_lr_factor <= 1.0))
    throw ConfigError("finetune_lr_factor must lie in (0,1]");
  if (!(rmsprop_decay > 0.0 && rmsprop_decay < 1.0)) throw ConfigError("rmsprop_decay must lie in (0,1)");
  if (!(rmsprop_eps > 0.0)) throw ConfigError("rmsprop_eps must be positive");
  if (lambda_align < 0.0 || lambda_lrs < 0.0) throw ConfigError("loss weights must be non-negative");
}

void rmsprop_step(std::span<ad::Var> params, OptimizerState& state, const OptimizerConfig& cfg) {
  const bool fresh = state.sq_avg.empty();
  if (!fresh && state.sq_avg.size() != params.size())
    throw OptimizerError("optimizer state tracks " + std::to_string(state.sq_avg.size()) +
                         " tensors, step got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& g = params[i].grad();
    if (!g.empty() && !g.same_shape(params[i].value()))
      throw OptimizerError("gradient shape mismatch for parameter " + std::to_string(i));
    if (!fresh && !state.sq_avg[i].same_shape(params[i].value()))
      throw OptimizerError("optimizer state shape mismatch for parameter " + std::to_string(i));
    for (double v : g.values())
      if (!std::isfinite(v))
        throw OptimizerError("non-finite gradient in parameter " + std::to_string(i));
  }
  if (fresh)
    for (const ad::Var& p : params) state.sq_avg.emplace_back(p.rows(), p.cols());
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].mutable_value();
    const Tensor& g = params[i].grad();
    Tensor& v = state.sq_avg[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      v[j] = cfg.decay * v[j] + (1.0 - cfg.decay) * gj * gj;
      p[j] = p[j] - cfg.lr * gj / (std::sqrt(v[j]) + cfg.eps) - cfg.lr * cfg.weight_decay * p[j];
    }
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (end - start == 1 && !batches.empty()) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() == 1 && batches[0].size() == 1) batches.clear();
  return batches;
}

PretrainResult pretrain(TandemModel& model, const Tensor& pool, const TrainConfig& config) {
  config.validate();
  if (model.head) throw ConfigError("pretraining expects a model without a downstream head");
  PretrainResult result;
  if (config.pretrain_epochs == 0) return result;
  if (pool.rows() < 2) throw LossError("pretraining pool needs at least two rows");

  ParamList named = model.pretrain_parameters();
  std::vector<ad::Var> params = vars_of(named);
  const OptimizerConfig opt{config.lr, config.rmsprop_decay, config.rmsprop_eps,
                            config.weight_decay};
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.pretrain_epochs; ++epoch) {
    Rng order = stream(config.seed, "pretrain_shuffle", epoch);
    EpochLosses rec;
    rec.epoch = epoch;
    std::size_t seen = 0;
    for (const auto& batch_idx : make_batches(pool.rows(), config.batch_size, order)) {
      const Tensor batch = pool.gather_rows(batch_idx);
      Rng noise = stream(config.seed, "gate_noise", step++);
      LossTerms terms = total_loss(model, batch, GateMode::kStochastic, &noise, true);
      ad::zero_grad(params);
      ad::backward(terms.total);
      try {
        rmsprop_step(params, result.optimizer, opt);
      } catch (const OptimizerError& e) {
        result.error = "epoch " + std::to_string(epoch) + ": " + e.what();
        return result;
      }
      const double w = static_cast<double>(batch.rows());
      rec.recon += w * terms.recon.value().item();
      rec.align += w * terms.align.value().item();
      rec.lrs += w * terms.lrs.value().item();
      rec.total += w * terms.total.value().item();
      seen += batch.rows();
    }
    const double inv = 1.0 / static_cast<double>(seen);
    rec.recon *= inv;
    rec.align *= inv;
    rec.lrs *= inv;
    rec.total *= inv;
    result.history.push_back(rec);
  }
  return result;
}

double validation_metric(TandemModel& model, const Tensor& x, const data::Targets& y) {
  if (y.task == data::Task::kClassification) return accuracy(predict_labels(model, x), y.labels);
  const Tensor out = predict(model, x);
  return mse(std::vector<double>(out.values()), y.values);
}

FinetuneResult finetune(TandemModel& model, const Tensor& x_train, const data::Targets& y_train,
                        const Tensor& x_val, const data::Targets& y_val,
                        const TrainConfig& config) {
  config.validate();
  if (x_train.rows() < 2) throw FinetuneError("fine-tuning needs at least two labeled rows");
  if (x_train.cols() != model.dims().input_dim)
    throw FinetuneError("labeled data has " + std::to_string(x_train.cols()) +
                        " features, model expects " + std::to_string(model.dims().input_dim));
  const data::Task task = y_train.task;
  const std::size_t classes = y_train.num_classes();
  if (task == data::Task::kClassification && classes < 2)
    throw FinetuneError("classification needs at least two classes");
  check_targets(y_train, x_train, task, classes, "training set");
  const bool has_val = x_val.rows() > 0;
  if (has_val) check_targets(y_val, x_val, task, classes, "validation set");

  {
    Rng init = stream(config.seed, "head");
    model.head.emplace(task, model.latent_dim(), classes, init);
  }
  ParamList head = model.head_parameters();
  ParamList encoder = model.downstream_encoder_parameters();
  ParamList tunable = head;
  tunable.insert(tunable.end(), encoder.begin(), encoder.end());
  BufferList buffers = model.buffers();

  FinetuneResult result;
  Snapshot best;
  bool have_best = false;
  std::size_t since_best = 0;
  const std::size_t total_epochs = config.finetune_epochs_frozen + config.finetune_epochs_tuned;

  for (int phase = 1; phase <= 2; ++phase) {
    const ParamList& trainable = phase == 1 ? head : tunable;
    const std::size_t epochs =
        phase == 1 ? config.finetune_epochs_frozen : config.finetune_epochs_tuned;
    TrainableScope scope(model, trainable);
    std::vector<ad::Var> params = vars_of(trainable);
    OptimizerState state;
    const OptimizerConfig opt{phase == 1 ? config.lr : config.lr * config.finetune_lr_factor,
                              config.rmsprop_decay, config.rmsprop_eps, config.weight_decay};
    const bool train_encoder = phase == 2;
    since_best = 0;
    for (std::size_t e = 0; e < epochs; ++e) {
      const std::size_t epoch = result.history.size() + 1;
      Rng order = stream(config.seed, "finetune_shuffle", epoch);
      double loss_sum = 0.0;
      std::size_t seen = 0;
      for (const auto& idx : make_batches(x_train.rows(), config.batch_size, order)) {
        const Tensor xb = x_train.gather_rows(idx);
        const data::Targets yb = y_train.subset(idx);
        ad::Var out = model.head->forward(embed(model, ad::constant(xb), train_encoder));
        ad::Var loss = supervised_loss(out, yb);
        ad::zero_grad(params);
        ad::backward(loss);
        rmsprop_step(params, state, opt);
        loss_sum += loss.value().item() * static_cast<double>(xb.rows());
        seen += xb.rows();
      }
      FinetuneEpoch rec;
      rec.epoch = epoch;
      rec.phase = phase;
      rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
      rec.val_metric = has_val ? validation_metric(model, x_val, y_val)
                               : std::numeric_limits<double>::quiet_NaN();
      result.history.push_back(rec);
      if (!has_val) continue;
      if (!have_best || better(task, rec.val_metric, result.best_metric)) {
        best = take_snapshot(tunable, buffers);
        have_best = true;
        result.best_metric = rec.val_metric;
        result.best_epoch = epoch;
        since_best = 0;
      } else if (phase == 2 && ++since_best >= config.patience) {
        result.stopped_early = epoch < total_epochs;
        break;
      }
    }
  }
  if (have_best) {
    restore_snapshot(best, tunable, buffers);
  } else {
    result.best_epoch = result.history.size();
    result.best_metric = result.history.empty() ? 0.0 : result.history.back().val_metric;
  }
  return result;
}

}  // namespace tandem
