#include "mmnet/model.hpp"

namespace mmnet {

template <typename T>
Model<T>::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(seed));
  text_ = std::make_unique<TextEncoder<T>>(params_, cfg_, rng);
  image_ = std::make_unique<ImageEncoder<T>>(params_, cfg_, rng);
  neck_ = std::make_unique<FusionNeck<T>>(params_, "neck", cfg_, rng, /*text_gate=*/true);
  query_ = std::make_unique<QueryGenerator<T>>(params_, cfg_, rng);
  decoder_ = std::make_unique<VLDecoder<T>>(params_, cfg_, rng);
  mask_ = std::make_unique<MaskDecoder<T>>(params_, cfg_, rng);
}

template <typename T>
ForwardResult<T> Model<T>::forward(Tape<T>& tape, const Tensor<T>& image, std::span<const int> tokens) const {
  if (image.rank() != 3 || image.dim(0) != cfg_.image_size || image.dim(1) != cfg_.image_size) {
    throw ShapeError("model expects a " + std::to_string(cfg_.image_size) + "x" +
                     std::to_string(cfg_.image_size) + "x3 image, got " + shape_str(image.shape));
  }
  ForwardResult<T> out;
  out.text = (*text_)(tape, tokens);
  out.visual = (*image_)(tape, tape.constant(image));
  out.fused = (*neck_)(tape, out.visual, out.text.global);
  out.queries = (*query_)(tape, out.text, out.visual);
  out.decoder = (*decoder_)(tape, out.fused.features, out.queries.queries, out.fused.grid_h, out.fused.grid_w);
  out.masks = (*mask_)(tape, out.decoder.features, out.queries.queries, out.fused.grid_h, out.fused.grid_w);
  return out;
}

template <typename T>
Var<T> Model<T>::loss(const ForwardResult<T>& out, const Tensor<T>& target) const {
  if (target.numel() != out.masks.y.value().numel()) {
    throw ShapeError("loss: target " + shape_str(target.shape) + " vs prediction " +
                     shape_str(out.masks.y.shape()));
  }
  return cfg_.aggregate_probs ? bce_probs(out.masks.y, target) : bce_with_logits(out.masks.y, target);
}

template <typename T>
Tensor<T> Model<T>::predict(const Tensor<T>& image, std::span<const int> tokens) const {
  Tape<T> tape(/*grad_enabled=*/false);
  return forward(tape, image, tokens).masks.y.value();
}

template class Model<float>;
template class Model<double>;

}  // namespace mmnet
