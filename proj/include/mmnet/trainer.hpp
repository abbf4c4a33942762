#pragma once

#include <functional>
#include <vector>

#include "mmnet/config.hpp"
#include "mmnet/metrics.hpp"
#include "mmnet/model.hpp"
#include "mmnet/synth_data.hpp"

namespace mmnet {

/// lr * (1 - t / total)^power, clamped to 0 at and beyond `total`.
double poly_lr(double lr, int64_t t, int64_t total, double power);

template <typename T>
class Adam {
 public:
  Adam(ParamStore<T>& params, double beta1, double beta2, double eps);
  /// One update from the accumulated gradients multiplied by `grad_scale`.
  void step(double lr, double grad_scale = 1.0);
  int64_t steps() const { return t_; }

 private:
  ParamStore<T>& params_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochMetrics {
  int epoch = 0;
  int64_t step = 0;  // steps completed
  double loss = 0.0;  // mean step loss over the epoch
  double lr = 0.0;    // rate used by the epoch's last step
  bool has_eval = false;
  EvalReport report;

  nlohmann::json to_json() const;
};

struct TrainHooks {
  std::function<void(int64_t step, double loss, double lr)> on_step;
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
  std::vector<double> step_losses;
  std::vector<EpochMetrics> epochs;
};

/// Steps per pass over `n` samples.
int64_t steps_per_epoch(int64_t n, int batch_size);
int64_t total_steps(const TrainConfig& cfg, int64_t n);

/// Mini-batch Adam with polynomial decay. Each sample is run on its own tape;
/// gradients are summed then averaged over the batch. When `val` is given it
/// is evaluated at the end of every epoch.
template <typename T>
TrainResult train(Model<T>& model, const TrainConfig& cfg, const Dataset& data, const Dataset* val,
                  const TrainHooks& hooks = {});

/// Binarized prediction at H/4 resolution (sigmoid(y) >= 0.5).
template <typename T>
std::vector<uint8_t> binarize_prediction(const Tensor<T>& y, bool is_probability);

/// IoU / Precision@X of the model over a split. Read-only and deterministic.
template <typename T>
EvalReport evaluate(const Model<T>& model, const Dataset& data, const std::string& iou_agg);

}  // namespace mmnet
