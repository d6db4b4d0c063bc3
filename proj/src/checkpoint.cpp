#include "tandem/checkpoint.hpp"

#include <charconv>
#include <ostream>

#include <json.hpp>

#include "tandem/errors.hpp"

namespace tandem {
namespace {

using json = nlohmann::ordered_json;

json tensor_json(const Tensor& t) {
  return json{{"rows", t.rows()}, {"cols", t.cols()}, {"data", t.values()}};
}

Tensor tensor_from(const json& j, const std::string& name) {
  try {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    return Tensor(rows, cols, j.at("data").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw CheckpointError("tensor '" + name + "': " + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError("tensor '" + name + "': " + e.what());
  }
}

json config_json(const TrainConfig& c) {
  return json{{"pretrain_epochs", c.pretrain_epochs},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"finetune_epochs_frozen", c.finetune_epochs_frozen},
              {"finetune_epochs_tuned", c.finetune_epochs_tuned},
              {"finetune_lr_factor", c.finetune_lr_factor},
              {"patience", c.patience},
              {"seed", c.seed},
              {"lambda_align", c.lambda_align},
              {"lambda_lrs", c.lambda_lrs},
              {"rmsprop_decay", c.rmsprop_decay},
              {"rmsprop_eps", c.rmsprop_eps}};
}

TrainConfig config_from(const json& j) {
  TrainConfig c;
  c.pretrain_epochs = j.at("pretrain_epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.finetune_epochs_frozen = j.at("finetune_epochs_frozen").get<std::size_t>();
  c.finetune_epochs_tuned = j.at("finetune_epochs_tuned").get<std::size_t>();
  c.finetune_lr_factor = j.at("finetune_lr_factor").get<double>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.lambda_align = j.at("lambda_align").get<double>();
  c.lambda_lrs = j.at("lambda_lrs").get<double>();
  c.rmsprop_decay = j.at("rmsprop_decay").get<double>();
  c.rmsprop_eps = j.at("rmsprop_eps").get<double>();
  return c;
}

std::string fmt(double v) {
  char buf[64];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;  // shortest round-trip
  return std::string(buf, end);
}

template <typename Entries, typename Get>
void restore_named(const json& block, Entries& entries, const char* what, Get get) {
  if (block.size() != entries.size())
    throw CheckpointError(std::string(what) + ": checkpoint has " + std::to_string(block.size()) +
                          " entries, model has " + std::to_string(entries.size()));
  for (auto& entry : entries) {
    const std::string& name = entry.first;
    if (!block.contains(name)) throw CheckpointError(std::string(what) + " '" + name + "' missing");
    Tensor t = tensor_from(block.at(name), name);
    Tensor& dst = get(entry);
    if (!t.same_shape(dst))
      throw CheckpointError(std::string(what) + " '" + name + "' has shape " + t.shape_str() +
                            ", model expects " + dst.shape_str());
    dst = std::move(t);
  }
}

}  // namespace

std::string train_config_to_json(const TrainConfig& config) { return config_json(config).dump(2); }

TrainConfig train_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("config: ") + e.what());
  }
}

std::string save_checkpoint(TandemModel& model, const CheckpointMeta& meta,
                            const OptimizerState* optimizer, const ParamList* optimizer_params) {
  json j;
  j["format"] = "tandem-checkpoint-1";
  j["stage"] = meta.stage;
  j["variant"] = to_string(model.variant());
  j["seed"] = model.seed();
  const ModelDims& d = model.dims();
  j["dims"] = {{"input_dim", d.input_dim},     {"trees", d.trees},
               {"depth", d.depth},             {"gate_hidden", d.gate_hidden},
               {"noise_sigma", d.noise_sigma}};
  j["loss_weights"] = {{"align", model.weights().align}, {"lrs", model.weights().lrs}};
  j["config"] = config_json(meta.config);
  if (model.head)
    j["head"] = {{"task", data::to_string(model.head->task())},
                 {"num_classes", model.head->num_classes()}};
  else
    j["head"] = nullptr;

  json params = json::object();
  for (const auto& p : model.parameters()) params[p.name] = tensor_json(p.var.value());
  j["parameters"] = std::move(params);
  json buffers = json::object();
  for (const auto& b : model.buffers()) buffers[b.first] = tensor_json(*b.second);
  j["buffers"] = std::move(buffers);

  if (optimizer && !optimizer->sq_avg.empty()) {
    if (!optimizer_params || optimizer_params->size() != optimizer->sq_avg.size())
      throw CheckpointError("optimizer state needs the matching parameter names");
    json opt = json::array();
    for (std::size_t i = 0; i < optimizer->sq_avg.size(); ++i)
      opt.push_back({{"name", (*optimizer_params)[i].name}, {"sq_avg", tensor_json(optimizer->sq_avg[i])}});
    j["optimizer"] = std::move(opt);
  } else {
    j["optimizer"] = nullptr;
  }
  return j.dump(1) + "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "tandem-checkpoint-1")
      throw CheckpointError("unsupported checkpoint format");
    ModelDims dims;
    const json& jd = j.at("dims");
    dims.input_dim = jd.at("input_dim").get<std::size_t>();
    dims.trees = jd.at("trees").get<std::size_t>();
    dims.depth = jd.at("depth").get<std::size_t>();
    dims.gate_hidden = jd.at("gate_hidden").get<std::size_t>();
    dims.noise_sigma = jd.at("noise_sigma").get<double>();
    const LossWeights weights{j.at("loss_weights").at("align").get<double>(),
                              j.at("loss_weights").at("lrs").get<double>()};
    const Variant variant = parse_variant(j.at("variant").get<std::string>());
    const auto seed = j.at("seed").get<std::uint64_t>();
    CheckpointMeta meta{j.at("stage").get<std::string>(), config_from(j.at("config"))};

    LoadedCheckpoint out{TandemModel(variant, dims, weights, seed), std::move(meta), {}, {}};
    if (!j.at("head").is_null()) {
      const auto task = data::parse_task(j.at("head").at("task").get<std::string>());
      const auto classes = j.at("head").at("num_classes").get<std::size_t>();
      Rng init = stream(seed, "head");
      out.model.head.emplace(task, out.model.latent_dim(), classes, init);
    }

    ParamList params = out.model.parameters();
    std::vector<std::pair<std::string, ad::Var>> pentries;
    for (auto& p : params) pentries.emplace_back(p.name, p.var);
    restore_named(j.at("parameters"), pentries, "parameter",
                  [](auto& e) -> Tensor& { return e.second.mutable_value(); });
    BufferList buffers = out.model.buffers();
    restore_named(j.at("buffers"), buffers, "buffer", [](auto& e) -> Tensor& { return *e.second; });

    if (!j.at("optimizer").is_null()) {
      for (const auto& entry : j.at("optimizer")) {
        const auto name = entry.at("name").get<std::string>();
        out.optimizer_for.push_back(name);
        out.optimizer.sq_avg.push_back(tensor_from(entry.at("sq_avg"), name));
      }
    }
    return out;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  } catch (const ParseError& e) {
    throw CheckpointError(e.what());
  }
}

void write_pretrain_history(std::ostream& out, const std::vector<EpochLosses>& history) {
  out << "epoch,recon,align,lrs,total\n";
  for (const auto& e : history)
    out << e.epoch << ',' << fmt(e.recon) << ',' << fmt(e.align) << ',' << fmt(e.lrs) << ','
        << fmt(e.total) << '\n';
}

void write_finetune_history(std::ostream& out, const std::vector<FinetuneEpoch>& history) {
  out << "epoch,phase,train_loss,val_metric\n";
  for (const auto& e : history)
    out << e.epoch << ',' << e.phase << ',' << fmt(e.train_loss) << ',' << fmt(e.val_metric) << '\n';
}

}  // namespace tandem
