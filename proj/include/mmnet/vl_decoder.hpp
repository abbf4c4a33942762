#pragma once

#include "mmnet/config.hpp"
#include "mmnet/layers.hpp"

namespace mmnet {

template <typename T>
struct DecoderState {
  Var<T> features;  // F_s [N, C]
  /// Per layer, per head: self-attention [N, N] then cross-attention [N, N_q].
  std::vector<Var<T>> self_attention;
  std::vector<Var<T>> cross_attention;
};

/// Pre-norm transformer decoder: visual tokens self-attend, then read from
/// the queries (keys/values), then pass an MLP. Positional encodings are
/// added to attention queries/keys only, so with zero output projections
/// every layer is the identity on the visual tokens.
template <typename T>
class VLDecoder {
 public:
  VLDecoder(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng);

  /// `grid_h` x `grid_w` must equal the number of visual tokens.
  DecoderState<T> operator()(Tape<T>& tape, Var<T> visual, Var<T> queries, int grid_h, int grid_w) const;
  /// Same, with explicit positional encodings ([N, C] and [N_q, C]).
  DecoderState<T> decode(Tape<T>& tape, Var<T> visual, Var<T> queries, Var<T> visual_pos,
                         Var<T> query_pos) const;

  int layers() const { return static_cast<int>(layers_.size()); }

 private:
  struct Layer {
    LayerNorm<T> ln1;
    MultiHeadAttention<T> self_attn;
    LayerNorm<T> ln2;
    MultiHeadAttention<T> cross_attn;
    LayerNorm<T> ln3;
    Mlp<T> mlp;
  };
  ModelConfig cfg_;
  std::vector<Layer> layers_;
};

}  // namespace mmnet
