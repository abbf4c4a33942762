#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace mmnet {

/// Precision@X thresholds in percent.
inline constexpr std::array<int, 5> kPrecisionThresholds = {50, 60, 70, 80, 90};

struct MaskStats {
  int64_t intersection = 0;
  int64_t union_ = 0;
  /// |A ∩ B| / |A ∪ B|; an empty union counts as a perfect match.
  double iou() const { return union_ == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(union_); }
  /// IoU strictly above `percent` / 100, decided in integer arithmetic.
  bool above(int percent) const { return union_ == 0 || 100 * intersection > percent * union_; }
};

MaskStats compare_masks(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt);
/// Nearest-neighbour upsampling of an h x w mask by an integer factor.
std::vector<uint8_t> upsample_mask(const std::vector<uint8_t>& mask, int h, int w, int factor);

struct SampleRecord {
  int64_t id = 0;
  MaskStats stats;
};

struct EvalReport {
  std::string iou_agg = "mean";
  double iou = 0.0;
  std::array<double, 5> prec{};  // aligned with kPrecisionThresholds
  std::vector<SampleRecord> samples;

  double precision_at(int percent) const;
  nlohmann::json to_json(bool with_samples = true) const;
};

/// Aggregates per-sample records. `iou_agg` is "mean" (mean of per-sample IoU)
/// or "overall" (total intersection over total union).
EvalReport summarize(std::vector<SampleRecord> samples, const std::string& iou_agg);

}  // namespace mmnet
