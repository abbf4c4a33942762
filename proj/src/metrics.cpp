#include "mmnet/metrics.hpp"

#include "mmnet/errors.hpp"

namespace mmnet {

MaskStats compare_masks(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size()) {
    throw ShapeError("compare_masks: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) +
                     " pixels");
  }
  MaskStats s;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    s.intersection += a && b;
    s.union_ += a || b;
  }
  return s;
}

std::vector<uint8_t> upsample_mask(const std::vector<uint8_t>& mask, int h, int w, int factor) {
  if (mask.size() != static_cast<size_t>(h) * w) throw ShapeError("upsample_mask: size mismatch");
  if (factor < 1) throw ContractError("upsample_mask: factor must be >= 1");
  const int oh = h * factor, ow = w * factor;
  std::vector<uint8_t> out(static_cast<size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) out[static_cast<size_t>(y) * ow + x] = mask[static_cast<size_t>(y / factor) * w + x / factor];
  }
  return out;
}

double EvalReport::precision_at(int percent) const {
  for (size_t k = 0; k < kPrecisionThresholds.size(); ++k) {
    if (kPrecisionThresholds[k] == percent) return prec[k];
  }
  throw ContractError("no Precision@" + std::to_string(percent) + " in report");
}

nlohmann::json EvalReport::to_json(bool with_samples) const {
  nlohmann::json j = {{"iou_agg", iou_agg}, {"iou", iou}, {"count", samples.size()}};
  for (size_t k = 0; k < kPrecisionThresholds.size(); ++k) j["pr" + std::to_string(kPrecisionThresholds[k])] = prec[k];
  if (with_samples) {
    nlohmann::json rows = nlohmann::json::array();
    for (const SampleRecord& r : samples) {
      rows.push_back({{"id", r.id},
                      {"iou", r.stats.iou()},
                      {"intersection", r.stats.intersection},
                      {"union", r.stats.union_}});
    }
    j["samples"] = rows;
  }
  return j;
}

EvalReport summarize(std::vector<SampleRecord> samples, const std::string& iou_agg) {
  if (samples.empty()) throw InputError("cannot evaluate an empty split");
  if (iou_agg != "mean" && iou_agg != "overall") throw ConfigError("iou_agg must be mean or overall");
  EvalReport r;
  r.iou_agg = iou_agg;
  const double n = static_cast<double>(samples.size());
  double sum = 0.0;
  int64_t inter = 0, uni = 0;
  std::array<int64_t, 5> hits{};
  for (const SampleRecord& s : samples) {
    sum += s.stats.iou();
    inter += s.stats.intersection;
    uni += s.stats.union_;
    for (size_t k = 0; k < hits.size(); ++k) hits[k] += s.stats.above(kPrecisionThresholds[k]);
  }
  r.iou = iou_agg == "mean" ? sum / n : MaskStats{inter, uni}.iou();
  for (size_t k = 0; k < hits.size(); ++k) r.prec[k] = static_cast<double>(hits[k]) / n;
  r.samples = std::move(samples);
  return r;
}

}  // namespace mmnet
