#include "mmnet/mask_decoder.hpp"

namespace mmnet {

template <typename T>
MaskDecoder<T>::MaskDecoder(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  const int c = cfg.width, cp = cfg.mask_channels();
  conv_ = Conv2d<T>(ps, "mask.conv", 3, c, cp, 1, 1, 1, rng);
  w_p_ = Linear<T>(ps, "mask.w_p", c, 9 * cp + 1, rng);
  estimator_attn_ = MultiHeadAttention<T>(ps, "mask.estimator.attn", c, cfg.estimator_heads, rng);
  w_s_ = Linear<T>(ps, "mask.estimator.w_s", c, 1, rng);
}

template <typename T>
Var<T> MaskDecoder<T>::shared_features(Tape<T>& tape, Var<T> decoded, int grid_h, int grid_w) const {
  const Shape& s = decoded.shape();
  if (s.size() != 2 || s[0] != grid_h * grid_w) {
    throw ShapeError("mask decoder: " + shape_str(s) + " is not a " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " token grid");
  }
  Var<T> grid = reshape(decoded, {grid_h, grid_w, s[1]});
  return upsample2x(conv_(tape, upsample2x(grid)));
}

template <typename T>
Var<T> MaskDecoder<T>::kernel_params(Tape<T>& tape, Var<T> queries) const {
  Var<T> p = w_p_(tape, queries);
  return cfg_.relu_kernel_params ? relu(p) : p;
}

template <typename T>
Var<T> MaskDecoder<T>::dynamic_conv(Var<T> shared, Var<T> params) {
  const int cp = shared.shape()[2];
  const int taps = 9 * cp;
  if (params.shape().size() != 2 || params.shape()[1] != taps + 1) {
    throw ShapeError("dynamic_conv: parameters " + shape_str(params.shape()) + " do not match " +
                     std::to_string(cp) + "-channel features");
  }
  const int rows = params.shape()[0];
  Var<T> cols = im2col(shared, 3, 3, 1, 1);
  Var<T> kernels = slice_cols(params, 0, taps);
  Var<T> bias = reshape(slice_cols(params, taps, taps + 1), {rows});
  return transpose(add_row(matmul_nt(cols, kernels), bias));
}

template <typename T>
std::pair<Var<T>, Var<T>> MaskDecoder<T>::project_masks(Tape<T>& tape, Var<T> decoded, Var<T> queries,
                                                        int grid_h, int grid_w) const {
  Var<T> shared = shared_features(tape, decoded, grid_h, grid_w);
  return {dynamic_conv(shared, kernel_params(tape, queries)), shared};
}

template <typename T>
Var<T> MaskDecoder<T>::estimate_scores(Tape<T>& tape, Var<T> queries) const {
  Var<T> ctx = estimator_attn_(tape, queries, queries, queries);
  Var<T> logits = w_s_(tape, ctx);
  return softmax(reshape(logits, {1, queries.shape()[0]}));
}

template <typename T>
Var<T> MaskDecoder<T>::aggregate(Var<T> masks, Var<T> scores) {
  if (scores.shape().size() != 2 || scores.shape()[0] != 1 || masks.shape().size() != 2 ||
      scores.shape()[1] != masks.shape()[0]) {
    throw ShapeError("aggregate: " + shape_str(scores.shape()) + " scores for " + shape_str(masks.shape()) +
                     " masks");
  }
  return matmul(scores, masks);
}

template <typename T>
MaskBundle<T> MaskDecoder<T>::operator()(Tape<T>& tape, Var<T> decoded, Var<T> queries, int grid_h,
                                         int grid_w) const {
  const int nq = queries.shape()[0];
  MaskBundle<T> out;
  out.size = 4 * grid_h;
  const int side_w = 4 * grid_w;
  out.shared = shared_features(tape, decoded, grid_h, grid_w);
  out.scores = cfg_.use_mqe ? estimate_scores(tape, queries)
                            : tape.constant(Tensor<T>({1, nq}, T(1) / static_cast<T>(nq)));

  Var<T> masks;
  Var<T> y;
  if (cfg_.use_mmp) {
    masks = dynamic_conv(out.shared, kernel_params(tape, queries));
    Var<T> blend = cfg_.aggregate_probs ? sigmoid(masks) : masks;
    // Without the estimator the masks are averaged directly.
    y = cfg_.use_mqe ? aggregate(blend, out.scores) : mean_rows(blend);
  } else {
    Var<T> merged = cfg_.use_mqe ? aggregate(queries, out.scores) : mean_rows(queries);
    masks = dynamic_conv(out.shared, kernel_params(tape, merged));
    y = cfg_.aggregate_probs ? sigmoid(masks) : masks;
  }
  out.masks = reshape(masks, {masks.shape()[0], out.size, side_w});
  out.y = reshape(y, {out.size, side_w});
  return out;
}

template class MaskDecoder<float>;
template class MaskDecoder<double>;

}  // namespace mmnet
