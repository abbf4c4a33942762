#pragma once

#include <memory>
#include <span>

#include "mmnet/encoders.hpp"
#include "mmnet/fusion_neck.hpp"
#include "mmnet/mask_decoder.hpp"
#include "mmnet/query_generator.hpp"
#include "mmnet/vl_decoder.hpp"

namespace mmnet {

template <typename T>
struct ForwardResult {
  TextFeatures<T> text;
  VisualFeatures<T> visual;
  FusedVisual<T> fused;
  QuerySet<T> queries;
  DecoderState<T> decoder;
  MaskBundle<T> masks;
};

/// The full referring-segmentation network: encoders, fusion neck, query
/// generator, vision-language decoder and multi-mask head.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// `image` is H x W x 3 in [0, 1]; `tokens` as produced by Vocabulary::encode.
  ForwardResult<T> forward(Tape<T>& tape, const Tensor<T>& image, std::span<const int> tokens) const;
  /// Binary cross-entropy of the aggregated prediction against a
  /// 4H/16 x 4W/16 {0,1} target.
  Var<T> loss(const ForwardResult<T>& out, const Tensor<T>& target) const;
  /// Aggregated prediction without recording gradients.
  Tensor<T> predict(const Tensor<T>& image, std::span<const int> tokens) const;

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

  TextEncoder<T>& text_encoder() { return *text_; }
  ImageEncoder<T>& image_encoder() { return *image_; }
  FusionNeck<T>& fusion_neck() { return *neck_; }
  QueryGenerator<T>& query_generator() { return *query_; }
  VLDecoder<T>& decoder() { return *decoder_; }
  MaskDecoder<T>& mask_decoder() { return *mask_; }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  std::unique_ptr<TextEncoder<T>> text_;
  std::unique_ptr<ImageEncoder<T>> image_;
  std::unique_ptr<FusionNeck<T>> neck_;
  std::unique_ptr<QueryGenerator<T>> query_;
  std::unique_ptr<VLDecoder<T>> decoder_;
  std::unique_ptr<MaskDecoder<T>> mask_;
};

}  // namespace mmnet
