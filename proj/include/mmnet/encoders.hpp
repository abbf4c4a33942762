#pragma once

#include <array>
#include <span>
#include <vector>

#include "mmnet/config.hpp"
#include "mmnet/layers.hpp"

namespace mmnet {

template <typename T>
struct TextFeatures {
  Var<T> tokens;   // F_t [L, C]
  Var<T> global;   // F_tg [C']
  std::vector<uint8_t> token_mask;  // 1 for SOS..EOS, 0 for padding
  int eos_index = 0;
};

template <typename T>
struct VisualFeatures {
  Var<T> v2;      // F_v2 [H/8, W/8, C2]
  Var<T> v3;      // F_v3 [H/16, W/16, C3]
  Var<T> v4;      // F_v4 [H/32, W/32, C4]
  Var<T> global;  // F_vg [C4]
  Var<T> pooled_global;   // z-bar [1, Cb4], first attention-pool token
  Var<T> pooled_spatial;  // z [H/32*W/32, Cb4]
  Var<T> x4;              // last backbone stage [H/32, W/32, Cb4]
};

/// Checks the token layout and returns the EOS position.
/// Throws InputError when the sequence is too long, lacks SOS, or does not
/// contain exactly one EOS.
int validate_tokens(std::span<const int> tokens, int max_tokens);

/// Bidirectional pre-norm transformer over word tokens with a linear
/// projection of the final EOS activation as the global feature.
template <typename T>
class TextEncoder {
 public:
  TextEncoder(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng);
  TextFeatures<T> operator()(Tape<T>& tape, std::span<const int> tokens) const;

 private:
  struct Block {
    LayerNorm<T> ln1;
    MultiHeadAttention<T> attn;
    LayerNorm<T> ln2;
    Mlp<T> mlp;
  };
  ModelConfig cfg_;
  Param<T>* token_embedding_ = nullptr;
  Param<T>* position_embedding_ = nullptr;
  std::vector<Block> blocks_;
  LayerNorm<T> ln_final_;
  Linear<T> proj_;
};

/// Convolutional backbone (stride 32) with attention pooling over the
/// last stage, projected to the four visual features.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng);
  /// `image` is H x W x 3 with H, W divisible by 32.
  VisualFeatures<T> operator()(Tape<T>& tape, Var<T> image) const;

  MultiHeadAttention<T>& attention_pool() { return pool_; }
  Linear<T>& global_projection() { return proj_g_; }

 private:
  struct Stage {
    Conv2d<T> conv;
    Conv2d<T> down;
  };
  ModelConfig cfg_;
  Conv2d<T> stem_;
  std::array<Stage, 4> stages_;
  MultiHeadAttention<T> pool_;
  Linear<T> proj2_, proj3_, proj4_, proj_g_;
};

}  // namespace mmnet
