#pragma once

#include "mmnet/config.hpp"
#include "mmnet/layers.hpp"

namespace mmnet {

template <typename T>
struct MaskBundle {
  Var<T> masks;   // [M, S, S] mask logits; M = N_q, or 1 without the multi-mask projector
  Var<T> scores;  // [1, N_q], softmax over queries (uniform without the estimator)
  Var<T> y;       // [S, S] aggregated prediction (logits, or probabilities with aggregate_probs)
  Var<T> shared;  // F_p [S, S, C_p]
  int size = 0;   // S = 4 * H/16
};

/// Query-conditioned mask head. Each query is mapped to the weights of a
/// 3x3 single-output convolution (9*C_p values) plus a bias, applied to a
/// shared upsampled feature map; an attention-based estimator scores the
/// queries and the masks are blended by those scores.
template <typename T>
class MaskDecoder {
 public:
  MaskDecoder(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng);

  /// F_p = Up(Conv3x3(Up(F_s as grid))): [4*grid_h, 4*grid_w, C_p].
  Var<T> shared_features(Tape<T>& tape, Var<T> decoded, int grid_h, int grid_w) const;
  /// Per-query dynamic convolution parameters: [N_q, 9*C_p + 1].
  Var<T> kernel_params(Tape<T>& tape, Var<T> queries) const;
  /// One logit map per parameter row, flattened: [rows, S*S].
  static Var<T> dynamic_conv(Var<T> shared, Var<T> params);
  /// Masks for every query: [N_q, S*S], plus F_p.
  std::pair<Var<T>, Var<T>> project_masks(Tape<T>& tape, Var<T> decoded, Var<T> queries, int grid_h,
                                          int grid_w) const;
  /// softmax(W_s MHSA(F_q)) over the queries: [1, N_q].
  Var<T> estimate_scores(Tape<T>& tape, Var<T> queries) const;
  /// sum_n scores[n] * masks[n]: scores [1, M], masks [M, P] -> [1, P].
  static Var<T> aggregate(Var<T> masks, Var<T> scores);

  MaskBundle<T> operator()(Tape<T>& tape, Var<T> decoded, Var<T> queries, int grid_h, int grid_w) const;

 private:
  ModelConfig cfg_;
  Conv2d<T> conv_;
  Linear<T> w_p_;
  MultiHeadAttention<T> estimator_attn_;
  Linear<T> w_s_;
};

}  // namespace mmnet
