#include "mmnet/trainer.hpp"

#include <cmath>
#include <numeric>

#include "mmnet/errors.hpp"

namespace mmnet {

double poly_lr(double lr, int64_t t, int64_t total, double power) {
  if (total <= 0) throw ContractError("poly_lr: total steps must be positive");
  if (t >= total) return 0.0;
  if (t <= 0) return lr;
  return lr * std::pow(1.0 - static_cast<double>(t) / static_cast<double>(total), power);
}

template <typename T>
Adam<T>::Adam(ParamStore<T>& params, double beta1, double beta2, double eps)
    : params_(params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Param<T>* p : params_.all()) {
    m_.emplace_back(p->value.data.size(), 0.0);
    v_.emplace_back(p->value.data.size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(double lr, double grad_scale) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto& all = params_.all();
  for (size_t k = 0; k < all.size(); ++k) {
    Param<T>& p = *all[k];
    if (p.grad.empty()) continue;
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    for (size_t i = 0; i < p.value.data.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]) * grad_scale;
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      p.value.data[i] = static_cast<T>(static_cast<double>(p.value.data[i]) - update);
    }
  }
}

nlohmann::json EpochMetrics::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"step", step}, {"loss", loss}};
  if (has_eval) {
    j["iou"] = report.iou;
    for (size_t k = 0; k < kPrecisionThresholds.size(); ++k) {
      j["pr" + std::to_string(kPrecisionThresholds[k])] = report.prec[k];
    }
  }
  j["lr"] = lr;
  return j;
}

int64_t steps_per_epoch(int64_t n, int batch_size) {
  if (n < 1) throw InputError("training split is empty");
  return (n + batch_size - 1) / batch_size;
}

int64_t total_steps(const TrainConfig& cfg, int64_t n) {
  return cfg.steps > 0 ? cfg.steps : cfg.epochs * steps_per_epoch(n, cfg.batch_size);
}

template <typename T>
TrainResult train(Model<T>& model, const TrainConfig& cfg, const Dataset& data, const Dataset* val,
                  const TrainHooks& hooks) {
  cfg.validate();
  const int64_t n = data.size();
  const int64_t spe = steps_per_epoch(n, cfg.batch_size);
  const int64_t total = total_steps(cfg, n);

  // Samples are generated once; targets are fixed per sample.
  std::vector<Tensor<T>> images, targets;
  std::vector<std::vector<int>> tokens;
  std::vector<int64_t> ids;
  for (int64_t i = 0; i < n; ++i) {
    Sample s = data.get(i);
    images.push_back(s.image.cast<T>());
    targets.push_back(target_tensor(s).cast<T>());
    tokens.push_back(std::move(s.tokens));
    ids.push_back(s.id);
  }

  Adam<T> adam(model.params(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  TrainResult result;
  std::vector<int64_t> order(static_cast<size_t>(n));
  double epoch_loss = 0.0;
  int64_t epoch_steps = 0;
  for (int64_t t = 0; t < total; ++t) {
    const int64_t pos = t % spe;
    const int epoch = static_cast<int>(t / spe);
    if (pos == 0) {
      std::iota(order.begin(), order.end(), int64_t{0});
      Rng rng(mix_seed(cfg.seed ^ 0x73687566666c65ULL) + static_cast<uint64_t>(epoch));
      for (int64_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, static_cast<int>(i))]);
    }
    const int64_t begin = pos * cfg.batch_size;
    const int64_t end = std::min(n, begin + cfg.batch_size);

    model.params().zero_grad();
    double batch_loss = 0.0;
    for (int64_t b = begin; b < end; ++b) {
      const int64_t idx = order[b];
      Tape<T> tape;
      ForwardResult<T> out = model.forward(tape, images[idx], tokens[idx]);
      Var<T> loss = model.loss(out, targets[idx]);
      const double value = static_cast<double>(loss.value().data[0]);
      if (!std::isfinite(value)) {
        const int bad = tape.first_non_finite();
        throw NumericError("non-finite loss at step " + std::to_string(t) + " (sample " + std::to_string(ids[idx]) +
                           "); first non-finite tensor: node " + std::to_string(bad) + " (op '" +
                           (bad >= 0 ? tape.op_name(bad) : "?") + "')");
      }
      tape.backward(loss);
      batch_loss += value;
    }
    const double count = static_cast<double>(end - begin);
    const double lr = poly_lr(cfg.lr, t, total, cfg.poly_power);
    adam.step(lr, 1.0 / count);

    batch_loss /= count;
    result.step_losses.push_back(batch_loss);
    if (hooks.on_step) hooks.on_step(t, batch_loss, lr);
    epoch_loss += batch_loss;
    ++epoch_steps;

    if (pos == spe - 1 || t == total - 1) {
      EpochMetrics m;
      m.epoch = epoch;
      m.step = t + 1;
      m.loss = epoch_loss / static_cast<double>(epoch_steps);
      m.lr = lr;
      if (val) {
        m.report = evaluate(model, *val, cfg.iou_agg);
        m.has_eval = true;
      }
      if (hooks.on_epoch) hooks.on_epoch(m);
      result.epochs.push_back(std::move(m));
      epoch_loss = 0.0;
      epoch_steps = 0;
    }
  }
  return result;
}

template <typename T>
std::vector<uint8_t> binarize_prediction(const Tensor<T>& y, bool is_probability) {
  std::vector<uint8_t> out(y.data.size());
  // sigmoid(y) >= 0.5 exactly when y >= 0.
  const T cut = is_probability ? T(0.5) : T(0);
  for (size_t i = 0; i < y.data.size(); ++i) out[i] = y.data[i] >= cut ? 1 : 0;
  return out;
}

template <typename T>
EvalReport evaluate(const Model<T>& model, const Dataset& data, const std::string& iou_agg) {
  if (data.size() < 1) throw InputError("cannot evaluate an empty split");
  std::vector<SampleRecord> records;
  records.reserve(static_cast<size_t>(data.size()));
  for (int64_t i = 0; i < data.size(); ++i) {
    Sample s = data.get(i);
    Tensor<T> y = model.predict(s.image.cast<T>(), s.tokens);
    const int lh = y.dim(0), lw = y.dim(1);
    if (s.height % lh != 0 || s.height / lh != s.width / lw) {
      throw ShapeError("prediction " + shape_str(y.shape) + " does not tile a " + std::to_string(s.height) + "x" +
                       std::to_string(s.width) + " image");
    }
    std::vector<uint8_t> pred =
        upsample_mask(binarize_prediction(y, model.config().aggregate_probs), lh, lw, s.height / lh);
    records.push_back({s.id, compare_masks(pred, s.gt_mask)});
  }
  return summarize(std::move(records), iou_agg);
}

template class Adam<float>;
template class Adam<double>;
template TrainResult train(Model<float>&, const TrainConfig&, const Dataset&, const Dataset*, const TrainHooks&);
template TrainResult train(Model<double>&, const TrainConfig&, const Dataset&, const Dataset*, const TrainHooks&);
template std::vector<uint8_t> binarize_prediction(const Tensor<float>&, bool);
template std::vector<uint8_t> binarize_prediction(const Tensor<double>&, bool);
template EvalReport evaluate(const Model<float>&, const Dataset&, const std::string&);
template EvalReport evaluate(const Model<double>&, const Dataset&, const std::string&);

}  // namespace mmnet
