#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "json.hpp"

namespace mmnet {

/// Architecture hyperparameters and ablation switches.
struct ModelConfig {
  int image_size = 96;
  int max_tokens = 8;
  int vocab_size = 20;

  int width = 64;               // C: text width and fused multimodal width
  int text_global_width = 64;   // C': width of the global text feature
  int text_layers = 2;
  int text_heads = 4;
  int text_ff = 256;
  bool causal_text = false;

  std::array<int, 4> backbone_channels{16, 32, 64, 64};
  int v2_width = 64;  // C2
  int v3_width = 64;  // C3
  int v4_width = 64;  // C4
  int attnpool_heads = 4;

  int num_queries = 8;  // N_q
  int query_attn_width = 64;
  bool scale_query_attn = false;
  bool use_fvg = true;

  int decoder_layers = 2;
  int decoder_heads = 4;
  int decoder_ff = 256;

  int estimator_heads = 4;
  bool use_mmp = true;
  bool use_mqe = true;
  bool relu_kernel_params = false;
  bool aggregate_probs = false;

  std::string upsample = "nearest";
  double layer_norm_eps = 1e-5;

  /// Derived sizes.
  int grid3() const { return image_size / 16; }      // H3 (= W3)
  int tokens3() const { return grid3() * grid3(); }  // N
  int mask_size() const { return 4 * grid3(); }      // 4*H3
  int mask_channels() const { return width / 2; }    // C_p

  void validate() const;
};

/// Synthetic dataset generation parameters.
struct DataConfig {
  uint64_t seed = 1234;
  int train_size = 2000;
  int val_size = 200;
  int min_distractors = 1;
  int max_distractors = 3;
  int raster_cell = 4;
  /// Memorization runs: the "val" split is the training split.
  bool val_is_train = false;

  void validate(const ModelConfig& model) const;
};

struct TrainConfig {
  int epochs = 16;
  int steps = 0;  // >0 overrides epochs with an exact step count
  int batch_size = 8;
  double lr = 1e-3;
  double poly_power = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  std::string precision = "f32";
  std::string iou_agg = "mean";
  ModelConfig model;
  DataConfig data;

  void validate() const;
};

/// Large-scale preset carrying the original experimental widths.
TrainConfig paper_dims_preset();

void to_json(nlohmann::json& j, const ModelConfig& c);
void to_json(nlohmann::json& j, const DataConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
/// Strict parsing: unknown keys raise ConfigError; missing keys keep defaults.
void from_json(const nlohmann::json& j, ModelConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

TrainConfig load_train_config(const std::string& path);

}  // namespace mmnet
