#include "mmnet/ablation.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "mmnet/errors.hpp"
#include "mmnet/trainer.hpp"

namespace mmnet {

namespace {

constexpr const char* kCheck = "✓";
constexpr int kMetricWidth = 6;
const std::array<const char*, 6> kMetricHeaders = {"IoU", "Pr@50", "Pr@60", "Pr@70", "Pr@80", "Pr@90"};

std::string pad_left(const std::string& s, int width) {
  const int w = display_width(s);
  return w >= width ? s : std::string(static_cast<size_t>(width - w), ' ') + s;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

AblationCell make_cell(const std::string& study, std::vector<std::string> keys, int nq, bool mmp, bool fvg, bool mqe) {
  AblationCell c;
  c.study = study;
  c.keys = std::move(keys);
  c.num_queries = nq;
  c.use_mmp = mmp;
  c.use_fvg = fvg;
  c.use_mqe = mqe;
  return c;
}

template <typename T>
SeedResult run_typed(const TrainConfig& cfg) {
  SeedResult r;
  r.seed = cfg.seed;
  auto train_set = make_dataset(cfg, Split::train);
  auto val_set = make_dataset(cfg, Split::val);
  Model<T> model(cfg.model, cfg.seed);
  TrainResult tr = train(model, cfg, *train_set, nullptr);
  EvalReport rep = evaluate(model, *val_set, cfg.iou_agg);
  r.ok = true;
  r.iou = rep.iou;
  r.prec = rep.prec;
  r.final_loss = tr.step_losses.empty() ? 0.0 : tr.step_losses.back();
  return r;
}

}  // namespace

nlohmann::json SeedResult::to_json() const {
  nlohmann::json j = {{"seed", seed}, {"ok", ok}};
  if (ok) {
    j["iou"] = iou;
    for (size_t k = 0; k < kPrecisionThresholds.size(); ++k) j["pr" + std::to_string(kPrecisionThresholds[k])] = prec[k];
    j["final_loss"] = final_loss;
  } else {
    j["error"] = error;
  }
  return j;
}

SeedResult SeedResult::from_json(const nlohmann::json& j) {
  SeedResult r;
  r.seed = j.at("seed").get<uint64_t>();
  r.ok = j.at("ok").get<bool>();
  if (r.ok) {
    r.iou = j.at("iou").get<double>();
    for (size_t k = 0; k < kPrecisionThresholds.size(); ++k) {
      r.prec[k] = j.at("pr" + std::to_string(kPrecisionThresholds[k])).get<double>();
    }
    r.final_loss = j.at("final_loss").get<double>();
  } else {
    r.error = j.at("error").get<std::string>();
  }
  return r;
}

bool AblationCell::ok() const {
  return !runs.empty() && std::all_of(runs.begin(), runs.end(), [](const SeedResult& r) { return r.ok; });
}

std::string AblationCell::error() const {
  if (runs.empty()) return "not run";
  for (const SeedResult& r : runs) {
    if (!r.ok) return "seed " + std::to_string(r.seed) + ": " + r.error;
  }
  return "";
}

double AblationCell::mean_iou() const {
  double s = 0.0;
  for (const SeedResult& r : runs) s += r.iou;
  return runs.empty() ? 0.0 : s / static_cast<double>(runs.size());
}

std::array<double, 5> AblationCell::mean_prec() const {
  std::array<double, 5> out{};
  for (const SeedResult& r : runs) {
    for (size_t k = 0; k < out.size(); ++k) out[k] += r.prec[k];
  }
  for (double& v : out) v = runs.empty() ? 0.0 : v / static_cast<double>(runs.size());
  return out;
}

double AblationCell::median_iou() const {
  if (runs.empty()) throw ContractError("median of an empty cell");
  std::vector<double> v;
  for (const SeedResult& r : runs) v.push_back(r.iou);
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

TrainConfig AblationCell::apply(const TrainConfig& base) const {
  TrainConfig cfg = base;
  cfg.model.num_queries = num_queries;
  cfg.model.use_mmp = use_mmp;
  cfg.model.use_fvg = use_fvg;
  cfg.model.use_mqe = use_mqe;
  return cfg;
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const AblationCell& c : cells) {
    nlohmann::json row = {{"keys", c.keys},       {"num_queries", c.num_queries}, {"use_mmp", c.use_mmp},
                          {"use_fvg", c.use_fvg}, {"use_mqe", c.use_mqe},         {"ok", c.ok()}};
    nlohmann::json runs = nlohmann::json::array();
    for (const SeedResult& r : c.runs) runs.push_back(r.to_json());
    row["runs"] = runs;
    if (c.ok()) {
      row["iou"] = c.mean_iou();
      row["median_iou"] = c.median_iou();
      const auto prec = c.mean_prec();
      for (size_t k = 0; k < kPrecisionThresholds.size(); ++k) row["pr" + std::to_string(kPrecisionThresholds[k])] = prec[k];
    } else {
      row["error"] = c.error();
    }
    rows.push_back(row);
  }
  return {{"study", study}, {"title", title}, {"key_columns", key_columns}, {"rows", rows}};
}

std::vector<std::string> ablation_studies() { return {"nq", "mmp", "mqe"}; }

AblationTable plan_study(const std::string& study, const TrainConfig& base) {
  AblationTable t;
  t.study = study;
  const int nq = base.model.num_queries;
  if (study == "nq") {
    t.title = "Influence of query number";
    t.key_columns = {"N_q"};
    for (int q : {32, 24, 16, 8, 4, 2, 1}) t.cells.push_back(make_cell(study, {std::to_string(q)}, q, true, true, true));
  } else if (study == "mmp") {
    t.title = "Multi-mask projector vs. a single merged query";
    t.key_columns = {"N_q", "MMP"};
    for (int q : {24, 16, 8}) {
      t.cells.push_back(make_cell(study, {std::to_string(q), kCheck}, q, true, true, true));
      t.cells.push_back(make_cell(study, {"", ""}, q, false, true, true));
    }
  } else if (study == "mqe") {
    t.title = "Global visual feature and multi-query estimator (N_q = " + std::to_string(nq) + ")";
    t.key_columns = {"f_vg", "MQE"};
    for (auto [fvg, mqe] : {std::pair{true, true}, {false, true}, {true, false}, {false, false}}) {
      t.cells.push_back(make_cell(study, {fvg ? kCheck : "", mqe ? kCheck : ""}, nq, true, fvg, mqe));
    }
  } else {
    throw ConfigError("unknown ablation study '" + study + "' (expected nq, mmp, mqe or all)");
  }
  return t;
}

SeedResult run_single(const TrainConfig& cfg) {
  try {
    return cfg.precision == "f64" ? run_typed<double>(cfg) : run_typed<float>(cfg);
  } catch (const std::exception& e) {
    SeedResult r;
    r.seed = cfg.seed;
    r.error = e.what();
    return r;
  }
}

void run_table(AblationTable& table, const TrainConfig& base, const std::vector<uint64_t>& seeds, int jobs,
               const std::string& scratch_dir, std::ostream* progress) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  struct Unit {
    size_t cell;
    uint64_t seed;
  };
  std::vector<Unit> units;
  for (size_t c = 0; c < table.cells.size(); ++c) {
    table.cells[c].runs.assign(seeds.size(), SeedResult{});
    for (uint64_t s : seeds) units.push_back({c, s});
  }
  auto config_of = [&](const Unit& u) {
    TrainConfig cfg = table.cells[u.cell].apply(base);
    cfg.seed = u.seed;
    return cfg;
  };
  auto store = [&](size_t k, SeedResult r) {
    const Unit& u = units[k];
    const size_t slot = static_cast<size_t>(std::find(seeds.begin(), seeds.end(), u.seed) - seeds.begin());
    if (progress) {
      *progress << "[" << table.study << "] cell " << u.cell + 1 << "/" << table.cells.size() << " seed " << u.seed
                << ": " << (r.ok ? "IoU " + fixed2(100.0 * r.iou) : "FAILED " + r.error) << std::endl;
    }
    table.cells[u.cell].runs[slot] = std::move(r);
  };

  if (jobs <= 1) {
    for (size_t k = 0; k < units.size(); ++k) store(k, run_single(config_of(units[k])));
    return;
  }

  namespace fs = std::filesystem;
  fs::create_directories(scratch_dir);
  auto result_path = [&](size_t k) {
    return (fs::path(scratch_dir) / (table.study + "_" + std::to_string(k) + ".json")).string();
  };
  std::map<pid_t, size_t> active;
  size_t next = 0;
  while (next < units.size() || !active.empty()) {
    while (static_cast<int>(active.size()) < jobs && next < units.size()) {
      if (progress) progress->flush();
      const pid_t pid = fork();
      if (pid < 0) throw InternalError("fork failed while starting an ablation worker");
      if (pid == 0) {
        int code = 0;
        try {
          SeedResult r = run_single(config_of(units[next]));
          std::ofstream out(result_path(next));
          out << r.to_json().dump();
          code = out ? 0 : 1;
        } catch (...) {
          code = 1;
        }
        _exit(code);
      }
      active[pid] = next++;
    }
    int status = 0;
    const pid_t done = waitpid(-1, &status, 0);
    if (done < 0) throw InternalError("waitpid failed while collecting ablation workers");
    auto it = active.find(done);
    if (it == active.end()) continue;
    const size_t k = it->second;
    active.erase(it);
    SeedResult r;
    r.seed = units[k].seed;
    std::ifstream in(result_path(k));
    if (in && WIFEXITED(status) && WEXITSTATUS(status) == 0) {
      try {
        r = SeedResult::from_json(nlohmann::json::parse(in));
      } catch (const nlohmann::json::exception& e) {
        r.error = std::string("unreadable worker result: ") + e.what();
      }
    } else {
      r.error = "worker exited abnormally (status " + std::to_string(status) + ")";
    }
    store(k, std::move(r));
  }
}

int display_width(const std::string& s) {
  int n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string format_row(const std::vector<std::string>& keys, const std::vector<int>& key_widths,
                       const std::optional<std::array<double, 6>>& values_percent) {
  if (keys.size() != key_widths.size()) throw ContractError("format_row: one width per key column");
  std::string row;
  for (size_t i = 0; i < keys.size(); ++i) {
    if (i) row += " | ";
    row += pad_left(keys[i], key_widths[i]);
  }
  for (size_t k = 0; k < 6; ++k) {
    row += " | ";
    if (values_percent) {
      row += pad_left(fixed2((*values_percent)[k]), kMetricWidth);
    } else {
      row += pad_left(k == 0 ? "FAILED" : "-", kMetricWidth);
    }
  }
  return row;
}

std::string render_table(const AblationTable& table) {
  std::vector<int> widths;
  for (const std::string& h : table.key_columns) widths.push_back(display_width(h));
  for (const AblationCell& c : table.cells) {
    for (size_t i = 0; i < widths.size(); ++i) widths[i] = std::max(widths[i], display_width(c.keys.at(i)));
  }
  std::string header;
  for (size_t i = 0; i < widths.size(); ++i) {
    if (i) header += " | ";
    header += pad_left(table.key_columns[i], widths[i]);
  }
  for (const char* h : kMetricHeaders) header += std::string(" | ") + pad_left(h, kMetricWidth);

  std::ostringstream os;
  os << table.title << '\n' << header << '\n' << std::string(static_cast<size_t>(display_width(header)), '-') << '\n';
  for (const AblationCell& c : table.cells) {
    std::optional<std::array<double, 6>> values;
    if (c.ok()) {
      const auto prec = c.mean_prec();
      values = std::array<double, 6>{100.0 * c.mean_iou(), 100.0 * prec[0], 100.0 * prec[1],
                                     100.0 * prec[2],      100.0 * prec[3], 100.0 * prec[4]};
    }
    os << format_row(c.keys, widths, values) << '\n';
  }
  for (const AblationCell& c : table.cells) {
    if (!c.ok()) {
      os << "FAILED N_q=" << c.num_queries << " mmp=" << c.use_mmp << " fvg=" << c.use_fvg << " mqe=" << c.use_mqe
         << ": " << c.error() << '\n';
    }
  }
  return os.str();
}

}  // namespace mmnet
