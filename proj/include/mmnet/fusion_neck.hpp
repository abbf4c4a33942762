#pragma once

#include "mmnet/encoders.hpp"

namespace mmnet {

/// Two coordinate channels (x, y), each linear from -1 at the first pixel
/// centre to +1 at the last. A single row/column maps to 0.
template <typename T>
Tensor<T> coord_features(int h, int w);

template <typename T>
struct FusedVisual {
  Var<T> features;  // F_vt [N, C], N = H/16 * W/16
  Var<T> coords;    // F_coord [H/16, W/16, 2]
  Var<T> m4;        // F_m4 [H/16, W/16, C]
  int grid_h = 0, grid_w = 0;
};

/// Multi-scale merge of the stride 8/16/32 visual features at stride 16.
/// With `text_gate` the stride-32 branch is multiplied by the projected
/// global text feature before upsampling; without it the same pipeline runs
/// ungated (used for the dense visual features of the query generator).
template <typename T>
class FusionNeck {
 public:
  FusionNeck(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng, bool text_gate);

  /// `text_global` is F_tg [C']; ignored (may be invalid) when ungated.
  FusedVisual<T> operator()(Tape<T>& tape, const VisualFeatures<T>& v, Var<T> text_global) const;

 private:
  ModelConfig cfg_;
  bool text_gate_;
  Linear<T> w_v4_, w_tg_, w_m4_, w_v3_, w_m3_, w_v2_;
  Conv2d<T> merge_, with_coords_;
};

}  // namespace mmnet
