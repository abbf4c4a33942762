// Command-line entry point: gen-data, train, eval, ablate, export-masks.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mmnet/ablation.hpp"
#include "mmnet/checkpoint.hpp"
#include "mmnet/errors.hpp"
#include "mmnet/manifest.hpp"
#include "mmnet/png_io.hpp"
#include "mmnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmnet;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kRuntime = 3 };

/// Flags that map onto TrainConfig keys. Only flags given on the command line
/// override the file configuration.
struct ConfigFlags {
  std::string config_path;
  std::string manifest_path;
  std::string preset;
  uint64_t seed = 0;
  int epochs = 0, steps = 0, batch_size = 0, nq = 0, train_size = 0, val_size = 0, image_size = 0;
  double lr = 0.0;
  uint64_t data_seed = 0;
  std::string precision, iou_agg;
  bool no_mmp = false, no_mqe = false, no_fvg = false, val_is_train = false, aggregate_probs = false;
  std::map<std::string, CLI::Option*> opts;

  void add(CLI::App& app, bool with_training = true) {
    app.add_option("--config", config_path, "JSON config file (TrainConfig layout)")->check(CLI::ExistingFile);
    app.add_option("--manifest", manifest_path, "replay the run recorded in a manifest")->check(CLI::ExistingFile);
    app.add_option("--preset", preset, "base configuration")->check(CLI::IsMember({"desk", "paper-dims"}));
    opts["seed"] = app.add_option("--seed", seed, "training seed (initialisation and shuffling)");
    opts["data_seed"] = app.add_option("--data-seed", data_seed, "synthetic data seed");
    opts["train_size"] = app.add_option("--train-size", train_size, "training samples")->check(CLI::PositiveNumber);
    opts["val_size"] = app.add_option("--val-size", val_size, "validation samples")->check(CLI::PositiveNumber);
    opts["image_size"] = app.add_option("--image-size", image_size, "image side in pixels")->check(CLI::PositiveNumber);
    opts["val_is_train"] = app.add_flag("--val-is-train", val_is_train, "evaluate on the training split");
    opts["nq"] = app.add_option("--nq", nq, "number of queries")->check(CLI::PositiveNumber);
    opts["no_mmp"] = app.add_flag("--no-mmp", no_mmp, "merge queries into one mask (no multi-mask projector)");
    opts["no_mqe"] = app.add_flag("--no-mqe", no_mqe, "uniform mask averaging (no estimator)");
    opts["no_fvg"] = app.add_flag("--no-fvg", no_fvg, "do not fuse the global visual feature into text");
    opts["aggregate_probs"] = app.add_flag("--aggregate-probs", aggregate_probs, "blend sigmoid masks");
    if (!with_training) return;
    opts["epochs"] = app.add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
    opts["steps"] = app.add_option("--steps", steps, "exact step count (overrides epochs)")->check(CLI::NonNegativeNumber);
    opts["batch_size"] = app.add_option("--batch-size", batch_size, "mini-batch size")->check(CLI::PositiveNumber);
    opts["lr"] = app.add_option("--lr", lr, "base learning rate");
    opts["precision"] = app.add_option("--precision", precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    opts["iou_agg"] = app.add_option("--iou-agg", iou_agg, "mean or overall")->check(CLI::IsMember({"mean", "overall"}));
  }

  bool given(const std::string& key) const {
    auto it = opts.find(key);
    return it != opts.end() && it->second->count() > 0;
  }

  /// defaults or preset, then manifest, then --config, then flags.
  TrainConfig resolve(const RunManifest* manifest) const {
    TrainConfig cfg = preset == "paper-dims" ? paper_dims_preset() : TrainConfig{};
    if (manifest) from_json(manifest->config, cfg);
    if (!config_path.empty()) from_json(read_json(config_path), cfg);
    if (given("seed")) cfg.seed = seed;
    if (given("data_seed")) cfg.data.seed = data_seed;
    if (given("train_size")) cfg.data.train_size = train_size;
    if (given("val_size")) cfg.data.val_size = val_size;
    if (given("image_size")) cfg.model.image_size = image_size;
    if (given("val_is_train")) cfg.data.val_is_train = val_is_train;
    if (given("nq")) cfg.model.num_queries = nq;
    if (given("no_mmp")) cfg.model.use_mmp = !no_mmp;
    if (given("no_mqe")) cfg.model.use_mqe = !no_mqe;
    if (given("no_fvg")) cfg.model.use_fvg = !no_fvg;
    if (given("aggregate_probs")) cfg.model.aggregate_probs = aggregate_probs;
    if (given("epochs")) cfg.epochs = epochs;
    if (given("steps")) cfg.steps = steps;
    if (given("batch_size")) cfg.batch_size = batch_size;
    if (given("lr")) cfg.lr = lr;
    if (given("precision")) cfg.precision = precision;
    if (given("iou_agg")) cfg.iou_agg = iou_agg;
    cfg.validate();
    cfg.data.validate(cfg.model);
    return cfg;
  }

  static json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    try {
      return json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
  }
};

/// Reads a command option from the manifest unless it was given explicitly.
template <typename V>
void from_manifest(const RunManifest* m, const CLI::Option* opt, const char* key, V& value) {
  if (m && opt->count() == 0 && m->options.contains(key)) value = m->options.at(key).get<V>();
}

std::unique_ptr<RunManifest> load_manifest(const ConfigFlags& flags, const std::string& command) {
  if (flags.manifest_path.empty()) return nullptr;
  auto m = std::make_unique<RunManifest>(read_manifest(flags.manifest_path));
  if (m->command != command) {
    throw ConfigError("manifest records a '" + m->command + "' run, not '" + command + "'");
  }
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

std::string summary_line(const EvalReport& r) {
  std::string s = "IoU " + percent(r.iou);
  for (size_t k = 0; k < kPrecisionThresholds.size(); ++k) {
    s += " | Pr@" + std::to_string(kPrecisionThresholds[k]) + " " + percent(r.prec[k]);
  }
  return s;
}

std::unique_ptr<Dataset> open_split(const TrainConfig& cfg, Split split, const std::string& data_dir) {
  if (data_dir.empty()) return make_dataset(cfg, split);
  const Split source = split == Split::val && cfg.data.val_is_train ? Split::train : split;
  Vocabulary vocab = fs::exists(fs::path(data_dir) / "vocab.txt")
                         ? Vocabulary::load((fs::path(data_dir) / "vocab.txt").string())
                         : Vocabulary::builtin();
  return std::make_unique<LoadedDataset>(load_split(data_dir, source, vocab, cfg.model.max_tokens));
}

// ---- gen-data --------------------------------------------------------------

struct GenData {
  ConfigFlags flags;
  std::string out;
  CLI::Option* out_opt = nullptr;

  void add(CLI::App& app) {
    flags.add(app, false);
    out_opt = app.add_option("--out", out, "output dataset directory");
  }

  int run() {
    auto manifest = load_manifest(flags, "gen-data");
    from_manifest(manifest.get(), out_opt, "out", out);
    if (out.empty()) throw ConfigError("gen-data needs --out");
    RunManifest m;
    m.command = "gen-data";
    m.started = utc_timestamp();
    TrainConfig cfg = flags.resolve(manifest.get());
    const Vocabulary vocab = Vocabulary::builtin();
    fs::create_directories(out);
    vocab.save((fs::path(out) / "vocab.txt").string());
    for (Split split : {Split::train, Split::val}) {
      SyntheticDataset ds(cfg.data, cfg.model, split, vocab);
      export_split(out, ds, split);
      std::cerr << "wrote " << ds.size() << " " << to_string(split) << " samples\n";
    }
    write_text(fs::path(out) / "config.json", json(cfg).dump(2) + "\n");
    m.config = cfg;
    m.seed = cfg.data.seed;
    m.options = {{"out", out}};
    m.artifacts = {{"train", (fs::path(out) / "train").string()},
                   {"val", (fs::path(out) / "val").string()},
                   {"vocab", (fs::path(out) / "vocab.txt").string()}};
    m.finished = utc_timestamp();
    write_manifest((fs::path(out) / "manifest.json").string(), m);
    return kOk;
  }
};

// ---- train -----------------------------------------------------------------

struct Train {
  ConfigFlags flags;
  std::string out = "runs/train";
  std::string data_dir;
  CLI::Option* out_opt = nullptr;
  CLI::Option* data_opt = nullptr;

  void add(CLI::App& app) {
    flags.add(app);
    out_opt = app.add_option("--out", out, "run directory")->capture_default_str();
    data_opt = app.add_option("--data", data_dir, "dataset written by gen-data (default: generate on the fly)");
  }

  template <typename T>
  void fit(const TrainConfig& cfg, const fs::path& dir) {
    auto train_set = open_split(cfg, Split::train, data_dir);
    auto val_set = open_split(cfg, Split::val, data_dir);
    Model<T> model(cfg.model, cfg.seed);
    std::ofstream metrics(dir / "metrics.jsonl"), steps(dir / "steps.jsonl");
    if (!metrics || !steps) throw InputError("cannot write logs in " + dir.string());
    TrainHooks hooks;
    hooks.on_step = [&](int64_t step, double loss, double lr) {
      steps << json{{"step", step}, {"loss", loss}, {"lr", lr}}.dump() << '\n';
    };
    hooks.on_epoch = [&](const EpochMetrics& e) {
      metrics << e.to_json().dump() << '\n';
      metrics.flush();
      std::cerr << "epoch " << e.epoch << " step " << e.step << " loss " << e.loss << " | " << summary_line(e.report)
                << '\n';
    };
    train(model, cfg, *train_set, val_set.get(), hooks);
    save_checkpoint((dir / "checkpoint.mmnk").string(), cfg, model.params());
  }

  int run() {
    auto manifest = load_manifest(flags, "train");
    from_manifest(manifest.get(), out_opt, "out", out);
    from_manifest(manifest.get(), data_opt, "data", data_dir);
    RunManifest m;
    m.command = "train";
    m.started = utc_timestamp();
    TrainConfig cfg = flags.resolve(manifest.get());
    const fs::path dir(out);
    fs::create_directories(dir);
    write_text(dir / "config.json", json(cfg).dump(2) + "\n");
    if (cfg.precision == "f64") {
      fit<double>(cfg, dir);
    } else {
      fit<float>(cfg, dir);
    }
    m.config = cfg;
    m.seed = cfg.seed;
    m.options = {{"out", out}, {"data", data_dir}};
    m.artifacts = {{"checkpoint", (dir / "checkpoint.mmnk").string()},
                   {"metrics", (dir / "metrics.jsonl").string()},
                   {"steps", (dir / "steps.jsonl").string()},
                   {"config", (dir / "config.json").string()}};
    m.finished = utc_timestamp();
    write_manifest((dir / "manifest.json").string(), m);
    return kOk;
  }
};

// ---- eval ------------------------------------------------------------------

struct CheckpointFlags {
  std::string checkpoint;
  std::string split = "val";
  std::string data_dir;
  std::string manifest_path;
  std::string iou_agg;
  bool no_mmp = false, no_mqe = false;
  CLI::Option *ck_opt = nullptr, *split_opt = nullptr, *data_opt = nullptr, *agg_opt = nullptr;
  CLI::Option *no_mmp_opt = nullptr, *no_mqe_opt = nullptr;

  void add(CLI::App& app) {
    ck_opt = app.add_option("--checkpoint", checkpoint, "checkpoint written by train");
    split_opt = app.add_option("--split", split, "train or val")->capture_default_str()->check(CLI::IsMember({"train", "val"}));
    data_opt = app.add_option("--data", data_dir, "dataset written by gen-data (default: regenerate)");
    agg_opt = app.add_option("--iou-agg", iou_agg, "mean or overall")->check(CLI::IsMember({"mean", "overall"}));
    no_mmp_opt = app.add_flag("--no-mmp", no_mmp, "run the merged-query head");
    no_mqe_opt = app.add_flag("--no-mqe", no_mqe, "uniform mask averaging");
    app.add_option("--manifest", manifest_path, "replay the run recorded in a manifest")->check(CLI::ExistingFile);
  }

  std::unique_ptr<RunManifest> load(const std::string& command) {
    if (manifest_path.empty()) return nullptr;
    auto m = std::make_unique<RunManifest>(read_manifest(manifest_path));
    if (m->command != command) throw ConfigError("manifest records a '" + m->command + "' run");
    from_manifest(m.get(), ck_opt, "checkpoint", checkpoint);
    from_manifest(m.get(), split_opt, "split", split);
    from_manifest(m.get(), data_opt, "data", data_dir);
    return m;
  }

  TrainConfig config(const Checkpoint& ck, const RunManifest* m) const {
    TrainConfig cfg = ck.train_config();
    if (m) from_json(m->config, cfg);
    if (agg_opt->count()) cfg.iou_agg = iou_agg;
    if (no_mmp_opt->count()) cfg.model.use_mmp = !no_mmp;
    if (no_mqe_opt->count()) cfg.model.use_mqe = !no_mqe;
    cfg.validate();
    return cfg;
  }

  json options() const {
    return {{"checkpoint", checkpoint}, {"split", split}, {"data", data_dir}};
  }
};

struct Eval {
  CheckpointFlags ck;
  std::string out;
  CLI::Option* out_opt = nullptr;

  void add(CLI::App& app) {
    ck.add(app);
    out_opt = app.add_option("--out", out, "directory for the report (default: next to the checkpoint)");
  }

  template <typename T>
  EvalReport score(const Checkpoint& checkpoint, const TrainConfig& cfg) {
    Model<T> model(cfg.model, cfg.seed);
    load_params(checkpoint, model.params());
    auto data = open_split(cfg, parse_split(ck.split), ck.data_dir);
    return evaluate(model, *data, cfg.iou_agg);
  }

  int run() {
    auto manifest = ck.load("eval");
    from_manifest(manifest.get(), out_opt, "out", out);
    if (ck.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    RunManifest m;
    m.command = "eval";
    m.started = utc_timestamp();
    const Checkpoint checkpoint = read_checkpoint(ck.checkpoint);
    const TrainConfig cfg = ck.config(checkpoint, manifest.get());
    const EvalReport report = cfg.precision == "f64" ? score<double>(checkpoint, cfg) : score<float>(checkpoint, cfg);
    std::cout << ck.split << ": " << summary_line(report) << std::endl;

    const fs::path dir = out.empty() ? fs::path(ck.checkpoint).parent_path() : fs::path(out);
    const fs::path report_path = dir / ("eval_" + ck.split + ".json");
    write_text(report_path, report.to_json().dump(2) + "\n");
    m.config = cfg;
    m.seed = cfg.seed;
    m.options = ck.options();
    m.options["out"] = out;
    m.artifacts = {{"report", report_path.string()}};
    m.finished = utc_timestamp();
    write_manifest((dir / ("eval_" + ck.split + "_manifest.json")).string(), m);
    return kOk;
  }
};

// ---- ablate ----------------------------------------------------------------

struct Ablate {
  ConfigFlags flags;
  std::string study = "all";
  std::string out = "runs/ablate";
  std::vector<uint64_t> seeds = {1, 2, 3};
  int jobs = 1;
  CLI::Option *study_opt = nullptr, *out_opt = nullptr, *seeds_opt = nullptr, *jobs_opt = nullptr;

  void add(CLI::App& app) {
    flags.add(app);
    study_opt = app.add_option("--study", study, "nq, mmp, mqe or all")->capture_default_str()
                    ->check(CLI::IsMember({"nq", "mmp", "mqe", "all"}));
    out_opt = app.add_option("--out", out, "report directory")->capture_default_str();
    seeds_opt = app.add_option("--seeds", seeds, "training seeds per cell")->capture_default_str()->delimiter(',');
    jobs_opt = app.add_option("--jobs", jobs, "parallel worker processes")->capture_default_str()->check(CLI::PositiveNumber);
  }

  int run() {
    auto manifest = load_manifest(flags, "ablate");
    from_manifest(manifest.get(), study_opt, "study", study);
    from_manifest(manifest.get(), out_opt, "out", out);
    from_manifest(manifest.get(), seeds_opt, "seeds", seeds);
    RunManifest m;
    m.command = "ablate";
    m.started = utc_timestamp();
    const TrainConfig base = flags.resolve(manifest.get());
    const fs::path dir(out);
    fs::create_directories(dir);
    const std::vector<std::string> studies = study == "all" ? ablation_studies() : std::vector<std::string>{study};
    bool all_ok = true;
    for (const std::string& s : studies) {
      AblationTable table = plan_study(s, base);
      run_table(table, base, seeds, jobs, (dir / "work").string(), &std::cerr);
      const std::string text = render_table(table);
      std::cout << text << std::endl;
      write_text(dir / (s + ".txt"), text);
      write_text(dir / (s + ".json"), table.to_json().dump(2) + "\n");
      m.artifacts[s + "_table"] = (dir / (s + ".txt")).string();
      m.artifacts[s + "_json"] = (dir / (s + ".json")).string();
      for (const AblationCell& c : table.cells) all_ok = all_ok && c.ok();
    }
    fs::remove_all(dir / "work");
    m.config = base;
    m.seed = base.seed;
    m.options = {{"study", study}, {"out", out}, {"seeds", seeds}, {"jobs", jobs}};
    m.finished = utc_timestamp();
    write_manifest((dir / "manifest.json").string(), m);
    if (!all_ok) {
      std::cerr << "some ablation cells failed; see the FAILED rows\n";
      return kRuntime;
    }
    return kOk;
  }
};

// ---- export-masks ----------------------------------------------------------

struct ExportMasks {
  CheckpointFlags ck;
  std::string out = "runs/masks";
  int64_t start = 0;
  int64_t count = 4;
  CLI::Option *out_opt = nullptr, *start_opt = nullptr, *count_opt = nullptr;

  void add(CLI::App& app) {
    ck.add(app);
    out_opt = app.add_option("--out", out, "output directory")->capture_default_str();
    start_opt = app.add_option("--start", start, "first sample index")->capture_default_str()->check(CLI::NonNegativeNumber);
    count_opt = app.add_option("--count", count, "number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  }

  static Image8 gray_upsampled(const std::vector<double>& values, int h, int w, int factor) {
    Image8 img{w * factor, h * factor, 1, std::vector<uint8_t>(static_cast<size_t>(w) * h * factor * factor)};
    for (int y = 0; y < h * factor; ++y) {
      for (int x = 0; x < w * factor; ++x) {
        const double v = std::clamp(values[static_cast<size_t>(y / factor) * w + x / factor], 0.0, 1.0);
        img.pixels[static_cast<size_t>(y) * w * factor + x] = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    }
    return img;
  }

  static double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

  template <typename T>
  void dump(const Checkpoint& checkpoint, const TrainConfig& cfg, RunManifest& m) {
    Model<T> model(cfg.model, cfg.seed);
    load_params(checkpoint, model.params());
    auto data = open_split(cfg, parse_split(ck.split), ck.data_dir);
    const int64_t end = std::min<int64_t>(data->size(), start + count);
    if (start >= end) throw InputError("no samples in the requested range");
    for (int64_t i = start; i < end; ++i) {
      const Sample s = data->get(i);
      Tape<T> tape(false);
      const ForwardResult<T> fr = model.forward(tape, s.image.cast<T>(), s.tokens);
      const Tensor<T>& masks = fr.masks.masks.value();
      const Tensor<T>& y = fr.masks.y.value();
      const int lh = y.dim(0), lw = y.dim(1), factor = s.height / lh;
      char name[32];
      std::snprintf(name, sizeof(name), "%06lld", static_cast<long long>(s.id));
      const fs::path dir = fs::path(out) / name;
      fs::create_directories(dir);

      Image8 rgb{s.width, s.height, 3, std::vector<uint8_t>(s.image.data.size())};
      for (size_t k = 0; k < s.image.data.size(); ++k) {
        rgb.pixels[k] = static_cast<uint8_t>(std::lround(std::clamp(s.image.data[k], 0.0f, 1.0f) * 255.0f));
      }
      write_png((dir / "image.png").string(), rgb);
      Image8 gt{s.width, s.height, 1, std::vector<uint8_t>(s.gt_mask.size())};
      for (size_t k = 0; k < s.gt_mask.size(); ++k) gt.pixels[k] = s.gt_mask[k] ? 255 : 0;
      write_png((dir / "gt.png").string(), gt);

      const int nm = masks.dim(0);
      const size_t px = static_cast<size_t>(lh) * lw;
      for (int q = 0; q < nm; ++q) {
        std::vector<double> prob(px);
        for (size_t k = 0; k < px; ++k) prob[k] = sigmoid(static_cast<double>(masks.data[q * px + k]));
        char qname[32];
        std::snprintf(qname, sizeof(qname), "query_%02d.png", q);
        write_png((dir / qname).string(), gray_upsampled(prob, lh, lw, factor));
      }
      std::vector<double> scores;
      for (T v : fr.masks.scores.value().data) scores.push_back(static_cast<double>(v));
      const double top = *std::max_element(scores.begin(), scores.end());
      std::vector<double> strip;
      for (double v : scores) strip.push_back(top > 0 ? v / top : 0.0);
      write_png((dir / "scores.png").string(), gray_upsampled(strip, 1, static_cast<int>(strip.size()), 16));

      std::vector<double> agg(px);
      for (size_t k = 0; k < px; ++k) {
        const double v = static_cast<double>(y.data[k]);
        agg[k] = cfg.model.aggregate_probs ? v : sigmoid(v);
      }
      write_png((dir / "prediction.png").string(), gray_upsampled(agg, lh, lw, factor));
      const std::vector<uint8_t> pred =
          upsample_mask(binarize_prediction(y, cfg.model.aggregate_probs), lh, lw, factor);
      Image8 bin{s.width, s.height, 1, std::vector<uint8_t>(pred.size())};
      for (size_t k = 0; k < pred.size(); ++k) bin.pixels[k] = pred[k] ? 255 : 0;
      write_png((dir / "prediction_binary.png").string(), bin);

      const json side = {{"id", s.id},
                         {"text", s.text},
                         {"tokens", s.tokens},
                         {"num_queries", cfg.model.num_queries},
                         {"use_mmp", cfg.model.use_mmp},
                         {"use_mqe", cfg.model.use_mqe},
                         {"masks", nm},
                         {"scores", scores},
                         {"iou", compare_masks(pred, s.gt_mask).iou()}};
      write_text(dir / "sample.json", side.dump(2) + "\n");
      m.artifacts[name] = dir.string();
    }
  }

  int run() {
    auto manifest = ck.load("export-masks");
    from_manifest(manifest.get(), out_opt, "out", out);
    from_manifest(manifest.get(), start_opt, "start", start);
    from_manifest(manifest.get(), count_opt, "count", count);
    if (ck.checkpoint.empty()) throw ConfigError("export-masks needs --checkpoint");
    RunManifest m;
    m.command = "export-masks";
    m.started = utc_timestamp();
    const Checkpoint checkpoint = read_checkpoint(ck.checkpoint);
    const TrainConfig cfg = ck.config(checkpoint, manifest.get());
    if (cfg.precision == "f64") {
      dump<double>(checkpoint, cfg, m);
    } else {
      dump<float>(checkpoint, cfg, m);
    }
    m.config = cfg;
    m.seed = cfg.seed;
    m.options = ck.options();
    m.options["out"] = out;
    m.options["start"] = start;
    m.options["count"] = count;
    m.finished = utc_timestamp();
    write_manifest((fs::path(out) / "manifest.json").string(), m);
    return kOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-query referring segmentation: data, training, evaluation and ablations"};
  app.require_subcommand(1);
  GenData gen;
  Train tr;
  Eval ev;
  Ablate ab;
  ExportMasks ex;
  gen.add(*app.add_subcommand("gen-data", "write a synthetic dataset as PNG + JSON lines"));
  tr.add(*app.add_subcommand("train", "train a model and write checkpoint and logs"));
  ev.add(*app.add_subcommand("eval", "evaluate a checkpoint on a split"));
  ab.add(*app.add_subcommand("ablate", "run ablation studies and write report tables"));
  ex.add(*app.add_subcommand("export-masks", "write per-query masks, scores and predictions as PNG"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-data") return gen.run();
    if (cmd == "train") return tr.run();
    if (cmd == "eval") return ev.run();
    if (cmd == "ablate") return ab.run();
    return ex.run();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
