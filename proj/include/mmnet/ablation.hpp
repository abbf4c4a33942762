#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmnet/config.hpp"

namespace mmnet {

/// One training/evaluation run of an ablation cell.
struct SeedResult {
  uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double iou = 0.0;
  std::array<double, 5> prec{};
  double final_loss = 0.0;

  nlohmann::json to_json() const;
  static SeedResult from_json(const nlohmann::json& j);
};

struct AblationCell {
  std::string study;                 // "nq", "mmp" or "mqe"
  std::vector<std::string> keys;     // key column values as displayed
  int num_queries = 8;
  bool use_mmp = true;
  bool use_fvg = true;
  bool use_mqe = true;
  std::vector<SeedResult> runs;

  bool ok() const;
  /// First error among the runs, if any.
  std::string error() const;
  /// Metric means over seeds.
  double mean_iou() const;
  std::array<double, 5> mean_prec() const;
  /// Median IoU over seeds.
  double median_iou() const;
  /// The base configuration with this cell's overrides applied.
  TrainConfig apply(const TrainConfig& base) const;
};

struct AblationTable {
  std::string study;
  std::string title;
  std::vector<std::string> key_columns;
  std::vector<AblationCell> cells;

  nlohmann::json to_json() const;
};

/// Studies: "nq" (query count), "mmp" (multi-mask projector vs merged
/// query), "mqe" (global visual feature x estimator).
std::vector<std::string> ablation_studies();
AblationTable plan_study(const std::string& study, const TrainConfig& base);

/// Trains on the train split and evaluates on val for one configuration.
SeedResult run_single(const TrainConfig& cfg);

/// Runs every (cell, seed) pair. With jobs > 1 the pairs run in forked worker
/// processes, at most `jobs` at a time; results do not depend on `jobs`.
/// `scratch_dir` holds per-run result files.
void run_table(AblationTable& table, const TrainConfig& base, const std::vector<uint64_t>& seeds, int jobs,
               const std::string& scratch_dir, std::ostream* progress = nullptr);

/// Aligned text row: key cells, then IoU and Pr@50..Pr@90 in percent.
std::string format_row(const std::vector<std::string>& keys, const std::vector<int>& key_widths,
                       const std::optional<std::array<double, 6>>& values_percent);
/// Whole table as aligned UTF-8 text. Failed cells show FAILED.
std::string render_table(const AblationTable& table);

/// Display width in terminal columns (counts UTF-8 code points).
int display_width(const std::string& s);

}  // namespace mmnet
