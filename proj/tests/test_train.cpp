#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "mmnet/ablation.hpp"
#include "mmnet/checkpoint.hpp"
#include "mmnet/errors.hpp"
#include "mmnet/manifest.hpp"
#include "mmnet/trainer.hpp"
#include "oracles.hpp"

using namespace mmnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("mmnet_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A very small training setup: tiny model, few samples, a handful of steps.
TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.model = testing_util::tiny_config();
  cfg.model.image_size = 96;  // the 3x3 scene grid needs cells divisible by the raster lattice
  cfg.data.train_size = 6;
  cfg.data.val_size = 3;
  cfg.batch_size = 2;
  cfg.steps = 4;
  cfg.seed = 7;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MMNET_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("poly_lr endpoints and shape") {
  CHECK(poly_lr(1e-3, 0, 100, 0.9) == 1e-3);
  CHECK(poly_lr(1e-3, 100, 100, 0.9) == 0.0);
  CHECK(poly_lr(1e-3, 150, 100, 0.9) == 0.0);
  CHECK(poly_lr(1e-3, 50, 100, 0.9) == doctest::Approx(1e-3 * std::pow(0.5, 0.9)));
  double prev = 1.0;
  for (int t = 0; t <= 100; ++t) {
    const double lr = poly_lr(1.0, t, 100, 0.9);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("steps per epoch") {
  CHECK(steps_per_epoch(16, 8) == 2);
  CHECK(steps_per_epoch(17, 8) == 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  CHECK(total_steps(cfg, 17) == 9);
  cfg.steps = 5;
  CHECK(total_steps(cfg, 17) == 5);
}

TEST_CASE("Adam first step moves each coordinate by lr against the gradient sign") {
  ParamStore<double> ps;
  Param<double>& p = ps.add("w", {3});
  p.value.data = {1.0, -2.0, 0.5};
  p.zero_grad();
  p.grad = {4.0, -0.001, 0.0};
  Adam<double> adam(ps, 0.9, 0.999, 1e-8);
  adam.step(0.1);
  CHECK(p.value.data[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p.value.data[1] == doctest::Approx(-1.9).epsilon(1e-4));
  CHECK(p.value.data[2] == 0.5);
  CHECK(adam.steps() == 1);

  p.grad = {NAN, 0.0, 0.0};
  try {
    adam.step(0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("'w'") != std::string::npos);
  }
}

TEST_CASE("Adam minimises a quadratic") {
  ParamStore<double> ps;
  Param<double>& p = ps.add("x", {2});
  p.value.data = {3.0, -4.0};
  Adam<double> adam(ps, 0.9, 0.999, 1e-8);
  for (int i = 0; i < 2000; ++i) {
    p.zero_grad();
    p.grad = {2 * (p.value.data[0] - 1.0), 2 * (p.value.data[1] + 2.0)};
    adam.step(poly_lr(0.05, i, 2000, 0.9));
  }
  CHECK(p.value.data[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(p.value.data[1] == doctest::Approx(-2.0).epsilon(1e-3));
}

TEST_CASE("training is bit-identical for a fixed seed") {
  TrainConfig cfg = tiny_train_config();
  auto data = make_dataset(cfg, Split::train);
  auto val = make_dataset(cfg, Split::val);
  auto run = [&](uint64_t seed) {
    TrainConfig c = cfg;
    c.seed = seed;
    Model<float> m(c.model, c.seed);
    TrainResult r = train(m, c, *data, val.get());
    std::string log;
    for (const auto& e : r.epochs) log += e.to_json().dump() + "\n";
    return std::make_pair(r.step_losses, log);
  };
  auto a = run(7), b = run(7), c = run(8);
  CHECK(a.first.size() == 4);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first != c.first);
}

TEST_CASE("epoch metrics are logged at epoch ends and at the final step") {
  TrainConfig cfg = tiny_train_config();
  cfg.steps = 0;
  cfg.epochs = 2;
  auto data = make_dataset(cfg, Split::train);
  Model<float> m(cfg.model, 1);
  std::vector<int64_t> steps;
  TrainHooks hooks;
  hooks.on_step = [&](int64_t step, double loss, double lr) {
    steps.push_back(step);
    CHECK(std::isfinite(loss));
    CHECK(lr > 0.0);
  };
  TrainResult r = train(m, cfg, *data, nullptr, hooks);
  CHECK(steps.size() == 6);
  REQUIRE(r.epochs.size() == 2);
  CHECK(r.epochs[0].step == 3);
  CHECK(r.epochs[1].step == 6);
  CHECK_FALSE(r.epochs[1].has_eval);
  auto j = r.epochs[0].to_json();
  for (const char* k : {"epoch", "step", "loss", "lr"}) CHECK(j.contains(k));
}

TEST_CASE("a non-finite parameter is reported as a numeric error") {
  TrainConfig cfg = tiny_train_config();
  auto data = make_dataset(cfg, Split::train);
  Model<float> m(cfg.model, 1);
  m.params().find("mask.estimator.w_s.bias")->value.data[0] = NAN;
  try {
    train(m, cfg, *data, nullptr);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("non-finite loss") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip") {
  TrainConfig cfg = tiny_train_config();
  cfg.model.num_queries = 2;
  Model<float> a(cfg.model, 3);
  testing_util::randomize(a.params(), 4);
  fs::path dir = scratch("ckpt");
  const std::string path = (dir / "model.mmnk").string();
  save_checkpoint(path, cfg, a.params());
  CHECK_FALSE(fs::exists(path + ".tmp"));

  Checkpoint ck = read_checkpoint(path);
  CHECK(ck.train_config().model.num_queries == 2);
  Model<float> b(ck.train_config().model, 99);
  load_params(ck, b.params());
  for (size_t i = 0; i < a.params().all().size(); ++i) {
    CHECK(a.params().all()[i]->value.data == b.params().all()[i]->value.data);
  }
  auto img = testing_util::random_image<float>(cfg.model.image_size, 5);
  auto toks = testing_util::tokens("red circle");
  CHECK(a.predict(img, toks).data == b.predict(img, toks).data);

  // Loading into a double model converts values.
  Model<double> d(ck.train_config().model, 1);
  load_params(ck, d.params());
  CHECK(d.params().all()[0]->value.data[0] == double(a.params().all()[0]->value.data[0]));

  // A model with a different query count has mismatched shapes.
  ModelConfig other = cfg.model;
  other.num_queries = 3;
  Model<float> c(other, 1);
  CHECK_THROWS_AS(load_params(ck, c.params()), InputError);

  std::string bytes = slurp(path);
  write_file_atomic((dir / "trunc.mmnk").string(), bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_checkpoint((dir / "trunc.mmnk").string()), InputError);
  write_file_atomic((dir / "bad.mmnk").string(), "NOPE!" + bytes.substr(5));
  CHECK_THROWS_AS(read_checkpoint((dir / "bad.mmnk").string()), InputError);
  CHECK_THROWS_AS(read_checkpoint((dir / "missing.mmnk").string()), InputError);
  fs::remove_all(dir);
}

TEST_CASE("configuration parsing") {
  TrainConfig cfg;
  nlohmann::json j = cfg;
  TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);

  j["model"]["num_queries"] = 4;
  CHECK(j.get<TrainConfig>().model.num_queries == 4);
  j["model"]["num_querys"] = 4;
  CHECK_THROWS_AS(j.get<TrainConfig>(), ConfigError);

  TrainConfig bad;
  bad.model.image_size = 100;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.precision = "f16";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.data.raster_cell = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("large-scale preset carries the published settings") {
  TrainConfig p = paper_dims_preset();
  CHECK(p.model.image_size == 480);
  CHECK(p.model.max_tokens == 17);
  CHECK(p.model.width == 512);
  CHECK(p.model.text_heads == 8);
  CHECK(p.model.decoder_heads == 8);
  CHECK(p.model.decoder_ff == 2048);
  CHECK(p.model.num_queries == 24);
  CHECK(p.epochs == 100);
  CHECK(p.batch_size == 64);
  CHECK(p.lr == 1e-5);
  CHECK(p.poly_power == 0.9);
  CHECK_NOTHROW(p.validate());
}

TEST_CASE("shipped configuration files parse") {
  const fs::path dir = fs::path(MMNET_SOURCE_DIR) / "configs";
  REQUIRE(fs::exists(dir));
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    CHECK_NOTHROW(load_train_config(e.path().string()).validate());
    ++n;
  }
  CHECK(n >= 2);
}

TEST_CASE("manifest round trip") {
  RunManifest m;
  m.command = "train";
  m.config = TrainConfig{};
  m.options = {{"out", "runs/x"}};
  m.seed = 9;
  m.started = utc_timestamp();
  m.artifacts["checkpoint"] = "runs/x/checkpoint.mmnk";
  fs::path dir = scratch("manifest");
  write_manifest((dir / "m.json").string(), m);
  RunManifest r = read_manifest((dir / "m.json").string());
  CHECK(r.to_json() == m.to_json());
  CHECK(m.started.size() == 20);  // YYYY-MM-DDTHH:MM:SSZ
  CHECK_THROWS_AS(read_manifest((dir / "none.json").string()), ConfigError);
  fs::remove_all(dir);
}

// ---------------------------------------------------------------- ablation

TEST_CASE("ablation rows use the published table layout") {
  const std::array<double, 6> row = {68.14, 80.51, 76.89, 70.22, 52.99, 15.46};
  CHECK(format_row({"24"}, {3}, row) == " 24 |  68.14 |  80.51 |  76.89 |  70.22 |  52.99 |  15.46");
  CHECK(format_row({"24", "✓"}, {3, 3}, row) == " 24 |   ✓ |  68.14 |  80.51 |  76.89 |  70.22 |  52.99 |  15.46");
  CHECK(format_row({"1"}, {3}, std::nullopt) == "  1 | FAILED |      - |      - |      - |      - |      -");
  CHECK(display_width("✓") == 1);
  CHECK_THROWS_AS(format_row({"1"}, {}, row), ContractError);
}

TEST_CASE("ablation studies cover the published configurations") {
  TrainConfig base;
  auto nq = plan_study("nq", base);
  REQUIRE(nq.cells.size() == 7);
  std::vector<int> counts;
  for (const auto& c : nq.cells) counts.push_back(c.num_queries);
  CHECK(counts == std::vector<int>{32, 24, 16, 8, 4, 2, 1});
  CHECK(nq.key_columns == std::vector<std::string>{"N_q"});

  auto mmp = plan_study("mmp", base);
  REQUIRE(mmp.cells.size() == 6);
  CHECK(mmp.cells[0].num_queries == 24);
  CHECK(mmp.cells[0].use_mmp);
  CHECK_FALSE(mmp.cells[1].use_mmp);
  CHECK(mmp.cells[5].num_queries == 8);

  auto mqe = plan_study("mqe", base);
  REQUIRE(mqe.cells.size() == 4);
  CHECK((mqe.cells[0].use_fvg && mqe.cells[0].use_mqe));
  CHECK((!mqe.cells[3].use_fvg && !mqe.cells[3].use_mqe));
  for (const auto& c : mqe.cells) CHECK(c.num_queries == base.model.num_queries);

  TrainConfig applied = mqe.cells[2].apply(base);
  CHECK(applied.model.use_fvg == mqe.cells[2].use_fvg);
  CHECK(applied.model.use_mqe == mqe.cells[2].use_mqe);
  CHECK_THROWS_AS(plan_study("bogus", base), ConfigError);

  // Rendering a table with one failed cell.
  nq.cells.resize(2);
  SeedResult good;
  good.ok = true;
  good.iou = 0.5;
  good.prec = {0.5, 0.4, 0.3, 0.2, 0.1};
  SeedResult bad;
  bad.error = "boom";
  nq.cells[0].runs = {good, good};
  nq.cells[1].runs = {good, bad};
  const std::string text = render_table(nq);
  CHECK(text.find("N_q |    IoU |  Pr@50 |  Pr@60 |  Pr@70 |  Pr@80 |  Pr@90") != std::string::npos);
  CHECK(text.find(" 32 |  50.00 |  50.00 |  40.00 |  30.00 |  20.00 |  10.00") != std::string::npos);
  CHECK(text.find(" 24 | FAILED") != std::string::npos);
  CHECK(text.find("FAILED N_q=24") != std::string::npos);
  CHECK(text.find("boom") != std::string::npos);
}

TEST_CASE("ablation cell statistics") {
  AblationCell c;
  for (double v : {0.3, 0.9, 0.4}) {
    SeedResult r;
    r.ok = true;
    r.iou = v;
    c.runs.push_back(r);
  }
  CHECK(c.ok());
  CHECK(c.mean_iou() == doctest::Approx(1.6 / 3));
  CHECK(c.median_iou() == 0.4);
  auto j = c.runs[0].to_json();
  CHECK(SeedResult::from_json(j).to_json() == j);
}

TEST_CASE("run_single reports configuration errors instead of throwing") {
  TrainConfig cfg = tiny_train_config();
  cfg.model.num_queries = 0;
  SeedResult r = run_single(cfg);
  CHECK_FALSE(r.ok);
  CHECK_FALSE(r.error.empty());
}

// ---------------------------------------------------------------- cli

TEST_CASE("command line exit codes and reproducible logs") {
  fs::path dir = scratch("cli");
  const std::string d = dir.string();
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("train --nq") == 1);

  {
    std::ofstream(dir / "bad.json") << R"({"model": {"queries": 3}})";
  }
  CHECK(run_cli("train --config " + d + "/bad.json --out " + d + "/x") == 2);
  CHECK(run_cli("eval --checkpoint " + d + "/missing.mmnk") == 3);

  const std::string common =
      " --image-size 96 --train-size 4 --val-size 2 --steps 2 --batch-size 2 --nq 2 --seed 3";
  REQUIRE(run_cli("train" + common + " --out " + d + "/a") == 0);
  REQUIRE(run_cli("train" + common + " --out " + d + "/b") == 0);
  for (const char* f : {"metrics.jsonl", "steps.jsonl", "config.json", "checkpoint.mmnk", "manifest.json"}) {
    CHECK(fs::exists(dir / "a" / f));
  }
  CHECK(slurp(dir / "a" / "metrics.jsonl") == slurp(dir / "b" / "metrics.jsonl"));
  CHECK(slurp(dir / "a" / "checkpoint.mmnk") == slurp(dir / "b" / "checkpoint.mmnk"));

  // Replaying the manifest reproduces the run.
  REQUIRE(run_cli("train --manifest " + d + "/a/manifest.json --out " + d + "/c") == 0);
  CHECK(slurp(dir / "a" / "metrics.jsonl") == slurp(dir / "c" / "metrics.jsonl"));

  REQUIRE(run_cli("eval --checkpoint " + d + "/a/checkpoint.mmnk") == 0);
  CHECK(fs::exists(dir / "a" / "eval_val.json"));
  REQUIRE(run_cli("export-masks --checkpoint " + d + "/a/checkpoint.mmnk --count 1 --out " + d + "/m") == 0);
  CHECK(!fs::is_empty(dir / "m"));
  fs::remove_all(dir);
}
