#pragma once

#include "mmnet/fusion_neck.hpp"

namespace mmnet {

template <typename T>
struct QuerySet {
  Var<T> queries;     // F_q [N_q, C]
  Var<T> attention;   // A [N_q, L], rows sum to 1 over valid words
  Var<T> text_fused;  // F_tv [L, C]
  Var<T> dense;       // F_vd [N_q, N]
};

/// Builds N_q language queries, each a word-attention-weighted sum of
/// projected word features where the attention is driven by one channel of
/// the dense visual map.
template <typename T>
class QueryGenerator {
 public:
  QueryGenerator(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng);

  /// Ungated multi-scale merge reduced to N_q channels: [N_q, H/16*W/16].
  Var<T> dense_visual(Tape<T>& tape, const VisualFeatures<T>& v) const;
  /// relu(F_t W_t) * relu(F_vg W_vg); without the global visual feature
  /// (use_fvg = false) only relu(F_t W_t).
  Var<T> fuse_text_global(Tape<T>& tape, Var<T> text_tokens, Var<T> visual_global) const;
  /// Masked word attention per query and the resulting query matrix.
  QuerySet<T> generate(Tape<T>& tape, Var<T> dense, Var<T> text_fused,
                       std::span<const uint8_t> token_mask) const;

  QuerySet<T> operator()(Tape<T>& tape, const TextFeatures<T>& text, const VisualFeatures<T>& v) const;

 private:
  ModelConfig cfg_;
  FusionNeck<T> dense_neck_;
  Conv2d<T> reduce1_, reduce2_, reduce3_;
  Linear<T> w_t_, w_vg_, w_vd_, w_a_, w_tv_;
};

}  // namespace mmnet
