#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tandem/app.hpp"
#include "tandem/errors.hpp"

using namespace tandem;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("tandem_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

app::ExperimentConfig small_config(const fs::path& data, const fs::path& out) {
  app::ExperimentConfig c;
  c.data = data.string();
  c.out_dir = out.string();
  c.seed = 3;
  c.pretrain_per_class = 20;
  c.label_budget = 24;
  c.trees = 2;
  c.depth = 2;
  c.train.pretrain_epochs = 2;
  c.train.batch_size = 16;
  c.train.finetune_epochs_frozen = 2;
  c.train.finetune_epochs_tuned = 2;
  return c;
}

void write_synthetic(const fs::path& p) {
  data::SyntheticSpec spec;
  spec.per_class = 40;
  spec.noise = 4;
  spec.seed = 1;
  app::cmd_synth(p.string(), spec);
}

void pipeline(const app::ExperimentConfig& c) {
  std::ostringstream log;
  app::cmd_preprocess(c, log);
  app::cmd_pretrain(c, log);
  app::cmd_finetune(c, log);
  app::cmd_evaluate(c, log);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TANDEM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config text round trip") {
  app::ExperimentConfig c;
  c.data = "x.csv";
  c.variant = Variant::kSsAeGated;
  c.task = data::Task::kRegression;
  c.val_frac = 0.1;
  c.train.lr = 3.3e-4;
  c.train.lambda_lrs = 0.25;
  c.noise_sigma = 0.1;
  const auto back = app::parse_config(app::serialize_config(c));
  CHECK(back == c);
  CHECK(app::config_keys().size() == 27);
}

TEST_CASE("config parsing errors name the line") {
  try {
    app::parse_config("# comment\nseed = 1\nbogus = 2\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("bogus") != std::string::npos);
  }
  CHECK_THROWS_AS(app::parse_config("seed = abc\n"), ConfigError);
  CHECK_THROWS_AS(app::parse_config("variant = nope\n"), ConfigError);
  CHECK_THROWS_AS(app::parse_config("no equals sign\n"), ConfigError);
  CHECK(app::parse_config("  lr = 0.5  # trailing\n").train.lr == 0.5);
}

TEST_CASE("exit codes by error class") {
  CHECK(app::exit_code_for(ConfigError("x")) == 1);
  CHECK(app::exit_code_for(ParseError("x")) == 2);
  CHECK(app::exit_code_for(SplitError("x")) == 2);
  CHECK(app::exit_code_for(app::MissingArtifact("f")) == 2);
  CHECK(app::exit_code_for(OptimizerError("x")) == 3);
  CHECK(app::exit_code_for(std::runtime_error("x")) == 3);
}

TEST_CASE("sha256 known answers") {
  CHECK(app::sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(app::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("preprocess writes a manifest that hashes every artifact") {
  TempDir tmp("manifest");
  const fs::path csv = tmp.path / "six.csv";
  spit(csv, "a,b,target\n0.1,x,p\n0.4,y,q\nNA,x,p\n0.9,y,q\n0.3,x,p\n0.2,NA,q\n");
  auto c = small_config(csv, tmp.path / "out");
  c.pretrain_per_class = 1;
  c.label_budget = 2;
  c.val_frac = 0.5;
  std::ostringstream log;
  app::cmd_preprocess(c, log);
  const auto m = nlohmann::json::parse(slurp(tmp.path / "out" / "manifest.json"));
  CHECK(m["dataset"] == "six");
  CHECK(m["rows"] == 6);
  CHECK(m["source_sha256"] == app::sha256_hex(slurp(csv)));
  REQUIRE(m["artifacts"].size() == 3);
  for (const auto& a : m["artifacts"]) {
    const std::string body = slurp(tmp.path / "out" / a["file"].get<std::string>());
    CHECK(a["bytes"] == body.size());
    CHECK(a["sha256"] == app::sha256_hex(body));
  }
  const auto loaded = app::load_prepared(tmp.path / "out");
  // One numeric column plus the levels seen in the pretraining rows.
  CHECK(m["features"] == loaded.design.cols());
  CHECK(loaded.design.cols() == 1 + loaded.schema.columns[1].vocabulary.size());
  CHECK(loaded.splits.pretrain_idx.size() == 2);
  CHECK(loaded.splits.train_idx.size() + loaded.splits.val_idx.size() == 2);
  CHECK(loaded.design.values == app::prepare(c).design.values);
}

TEST_CASE("two pipeline runs with one seed are byte-identical") {
  TempDir tmp("determinism");
  const fs::path csv = tmp.path / "syn.csv";
  write_synthetic(csv);
  pipeline(small_config(csv, tmp.path / "a"));
  pipeline(small_config(csv, tmp.path / "b"));
  for (const char* f : {"manifest.json", "design.csv", "splits.json", "schema.json", "results.csv",
                        "tandem/pretrain.ckpt.json", "tandem/finetune.ckpt.json",
                        "tandem/metrics.json", "tandem/pretrain_loss.csv",
                        "tandem/finetune_history.csv"}) {
    CAPTURE(f);
    const std::string a = slurp(tmp.path / "a" / f);
    CHECK_FALSE(a.empty());
    CHECK(a == slurp(tmp.path / "b" / f));
  }
  auto other = small_config(csv, tmp.path / "c");
  other.seed = 4;
  pipeline(other);
  CHECK(slurp(tmp.path / "a" / "tandem/pretrain.ckpt.json") !=
        slurp(tmp.path / "c" / "tandem/pretrain.ckpt.json"));
}

TEST_CASE("zero pretraining epochs checkpoint the initialization exactly") {
  TempDir tmp("epochs0");
  const fs::path csv = tmp.path / "syn.csv";
  write_synthetic(csv);
  auto c = small_config(csv, tmp.path / "out");
  c.train.pretrain_epochs = 0;
  std::ostringstream log;
  app::cmd_preprocess(c, log);
  app::cmd_pretrain(c, log);
  const std::string first = slurp(tmp.path / "out/tandem/pretrain.ckpt.json");
  app::cmd_pretrain(c, log);
  CHECK(app::sha256_hex(first) == app::sha256_hex(slurp(tmp.path / "out/tandem/pretrain.ckpt.json")));

  auto loaded = load_checkpoint(first);
  auto fresh = build_variant(Variant::kTandem, c.dims(loaded.model.dims().input_dim),
                             {c.train.lambda_align, c.train.lambda_lrs}, c.seed);
  auto a = loaded.model.parameters(), b = fresh.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CAPTURE(a[i].name);
    CHECK(a[i].var.value() == b[i].var.value());
  }
}

TEST_CASE("checkpoint save/load/save is byte-stable") {
  auto model = build_variant(Variant::kTandem, ModelDims{5, 2, 2, 0, 0.5}, {}, 9);
  CheckpointMeta meta;
  meta.stage = "pretrain";
  const std::string a = save_checkpoint(model, meta, nullptr, nullptr);
  auto loaded = load_checkpoint(a);
  CHECK(save_checkpoint(loaded.model, loaded.meta, nullptr, nullptr) == a);
  CHECK_THROWS_AS(load_checkpoint("{\"format\": \"other\"}"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("not json"), CheckpointError);
}

TEST_CASE("later stages report missing artifacts") {
  TempDir tmp("missing");
  auto c = small_config(tmp.path / "none.csv", tmp.path / "out");
  std::ostringstream log;
  CHECK_THROWS_AS(app::cmd_pretrain(c, log), app::MissingArtifact);
}

TEST_CASE("CLI exit codes") {
  TempDir tmp("cli");
  const fs::path bad = tmp.path / "bad.csv";
  spit(bad, "a,b,target\n1,2,p\n3,q\n");
  const std::string out = (tmp.path / "out").string();
  CHECK(run_cli("preprocess --data " + bad.string() + " --out_dir " + out) == 2);
  CHECK(run_cli("preprocess --data " + (tmp.path / "absent.csv").string() + " --out_dir " + out) == 2);
  CHECK(run_cli("preprocess --set nonsense=1") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("config --seed 5") == 0);
  const fs::path syn = tmp.path / "syn.csv";
  CHECK(run_cli("synth -o " + syn.string() + " --per-class 10 --noise 3") == 0);
  CHECK(fs::exists(syn));
}
