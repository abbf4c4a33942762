#include "mmnet/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "mmnet/errors.hpp"

namespace mmnet {
namespace {

using json = nlohmann::json;

/// Applies known keys from `j` through the setters; unknown keys are errors.
void apply_strict(const json& j, const char* section,
                  const std::map<std::string, std::function<void(const json&)>>& setters) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError(std::string("unknown key '") + key + "' in " + section + " config");
    }
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "' in " + section + " config: " + e.what());
    }
  }
}

template <typename V>
std::function<void(const json&)> set(V& field) {
  return [&field](const json& v) { field = v.get<V>(); };
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

}  // namespace

void ModelConfig::validate() const {
  require(image_size > 0 && image_size % 32 == 0, "image_size must be a positive multiple of 32");
  require(max_tokens >= 3, "max_tokens must leave room for SOS, one word and EOS");
  require(vocab_size >= 5, "vocab_size too small");
  require(width >= 2 && width % 2 == 0, "width must be even");
  require(text_global_width >= 1, "text_global_width must be positive");
  require(text_layers >= 1 && text_heads >= 1 && width % text_heads == 0,
          "text_heads must divide width");
  require(text_ff >= 1, "text_ff must be positive");
  for (int c : backbone_channels) require(c >= 1, "backbone channels must be positive");
  require(backbone_channels[3] % attnpool_heads == 0, "attnpool_heads must divide the last backbone width");
  require(v2_width >= 1 && v3_width >= 1 && v4_width >= 1, "projection widths must be positive");
  require(num_queries >= 1, "num_queries must be at least 1");
  require(query_attn_width >= 1, "query_attn_width must be positive");
  require(decoder_layers >= 1, "decoder_layers must be at least 1");
  require(decoder_heads >= 1 && width % decoder_heads == 0, "decoder_heads must divide width");
  require(decoder_ff >= 1, "decoder_ff must be positive");
  require(estimator_heads >= 1 && width % estimator_heads == 0, "estimator_heads must divide width");
  require(width % 4 == 0, "width must be divisible by 4 for 2-D sine encodings");
  require(upsample == "nearest", "upsample: only 'nearest' is implemented");
  require(layer_norm_eps > 0, "layer_norm_eps must be positive");
}

void DataConfig::validate(const ModelConfig& model) const {
  require(train_size >= 1, "train_size must be at least 1");
  require(val_size >= 1 || val_is_train, "val_size must be at least 1");
  require(min_distractors >= 0 && max_distractors >= min_distractors,
          "distractor range must satisfy 0 <= min <= max");
  require(max_distractors + 1 <= 9, "a 3x3 grid cannot host " + std::to_string(max_distractors) +
                                        " distractors plus the target");
  require(raster_cell >= 1 && model.image_size % (3 * raster_cell) == 0 && 4 % raster_cell == 0,
          "raster_cell must divide 4 and the grid cell size");
}

void TrainConfig::validate() const {
  model.validate();
  data.validate(model);
  require(epochs >= 1 || steps >= 1, "epochs or steps must be positive");
  require(steps >= 0, "steps must be non-negative");
  require(batch_size >= 1, "batch_size must be positive");
  require(lr > 0, "learning rate must be positive");
  require(poly_power >= 0, "poly_power must be non-negative");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam betas must lie in [0, 1)");
  require(adam_eps > 0, "adam_eps must be positive");
  require(precision == "f32" || precision == "f64", "precision must be 'f32' or 'f64'");
  require(iou_agg == "mean" || iou_agg == "overall", "iou_agg must be 'mean' or 'overall'");
}

TrainConfig paper_dims_preset() {
  TrainConfig c;
  c.model.image_size = 480;
  c.model.max_tokens = 17;
  c.model.width = 512;
  c.model.text_global_width = 512;
  c.model.text_heads = 8;
  c.model.text_ff = 2048;
  c.model.backbone_channels = {64, 128, 256, 512};
  c.model.v2_width = 512;
  c.model.v3_width = 512;
  c.model.v4_width = 512;
  c.model.attnpool_heads = 8;
  c.model.query_attn_width = 512;
  c.model.num_queries = 24;
  c.model.decoder_heads = 8;
  c.model.decoder_ff = 2048;
  c.model.estimator_heads = 8;
  c.epochs = 100;
  c.batch_size = 64;
  c.lr = 1e-5;
  return c;
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"image_size", c.image_size},
           {"max_tokens", c.max_tokens},
           {"vocab_size", c.vocab_size},
           {"width", c.width},
           {"text_global_width", c.text_global_width},
           {"text_layers", c.text_layers},
           {"text_heads", c.text_heads},
           {"text_ff", c.text_ff},
           {"causal_text", c.causal_text},
           {"backbone_channels", c.backbone_channels},
           {"v2_width", c.v2_width},
           {"v3_width", c.v3_width},
           {"v4_width", c.v4_width},
           {"attnpool_heads", c.attnpool_heads},
           {"num_queries", c.num_queries},
           {"query_attn_width", c.query_attn_width},
           {"scale_query_attn", c.scale_query_attn},
           {"use_fvg", c.use_fvg},
           {"decoder_layers", c.decoder_layers},
           {"decoder_heads", c.decoder_heads},
           {"decoder_ff", c.decoder_ff},
           {"estimator_heads", c.estimator_heads},
           {"use_mmp", c.use_mmp},
           {"use_mqe", c.use_mqe},
           {"relu_kernel_params", c.relu_kernel_params},
           {"aggregate_probs", c.aggregate_probs},
           {"upsample", c.upsample},
           {"layer_norm_eps", c.layer_norm_eps}};
}

void from_json(const json& j, ModelConfig& c) {
  apply_strict(j, "model",
               {{"image_size", set(c.image_size)},
                {"max_tokens", set(c.max_tokens)},
                {"vocab_size", set(c.vocab_size)},
                {"width", set(c.width)},
                {"text_global_width", set(c.text_global_width)},
                {"text_layers", set(c.text_layers)},
                {"text_heads", set(c.text_heads)},
                {"text_ff", set(c.text_ff)},
                {"causal_text", set(c.causal_text)},
                {"backbone_channels", set(c.backbone_channels)},
                {"v2_width", set(c.v2_width)},
                {"v3_width", set(c.v3_width)},
                {"v4_width", set(c.v4_width)},
                {"attnpool_heads", set(c.attnpool_heads)},
                {"num_queries", set(c.num_queries)},
                {"query_attn_width", set(c.query_attn_width)},
                {"scale_query_attn", set(c.scale_query_attn)},
                {"use_fvg", set(c.use_fvg)},
                {"decoder_layers", set(c.decoder_layers)},
                {"decoder_heads", set(c.decoder_heads)},
                {"decoder_ff", set(c.decoder_ff)},
                {"estimator_heads", set(c.estimator_heads)},
                {"use_mmp", set(c.use_mmp)},
                {"use_mqe", set(c.use_mqe)},
                {"relu_kernel_params", set(c.relu_kernel_params)},
                {"aggregate_probs", set(c.aggregate_probs)},
                {"upsample", set(c.upsample)},
                {"layer_norm_eps", set(c.layer_norm_eps)}});
}

void to_json(json& j, const DataConfig& c) {
  j = json{{"seed", c.seed},
           {"train_size", c.train_size},
           {"val_size", c.val_size},
           {"min_distractors", c.min_distractors},
           {"max_distractors", c.max_distractors},
           {"raster_cell", c.raster_cell},
           {"val_is_train", c.val_is_train}};
}

void from_json(const json& j, DataConfig& c) {
  apply_strict(j, "data",
               {{"seed", set(c.seed)},
                {"train_size", set(c.train_size)},
                {"val_size", set(c.val_size)},
                {"min_distractors", set(c.min_distractors)},
                {"max_distractors", set(c.max_distractors)},
                {"raster_cell", set(c.raster_cell)},
                {"val_is_train", set(c.val_is_train)}});
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"steps", c.steps},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"poly_power", c.poly_power},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_eps", c.adam_eps},
           {"seed", c.seed},
           {"precision", c.precision},
           {"iou_agg", c.iou_agg},
           {"model", c.model},
           {"data", c.data}};
}

void from_json(const json& j, TrainConfig& c) {
  apply_strict(j, "train",
               {{"epochs", set(c.epochs)},
                {"steps", set(c.steps)},
                {"batch_size", set(c.batch_size)},
                {"lr", set(c.lr)},
                {"poly_power", set(c.poly_power)},
                {"beta1", set(c.beta1)},
                {"beta2", set(c.beta2)},
                {"adam_eps", set(c.adam_eps)},
                {"seed", set(c.seed)},
                {"precision", set(c.precision)},
                {"iou_agg", set(c.iou_agg)},
                {"model", [&c](const json& v) { from_json(v, c.model); }},
                {"data", [&c](const json& v) { from_json(v, c.data); }}});
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  TrainConfig c;
  from_json(j, c);
  return c;
}

}  // namespace mmnet
