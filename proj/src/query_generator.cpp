#include "mmnet/query_generator.hpp"

#include <algorithm>
#include <cmath>

namespace mmnet {

template <typename T>
QueryGenerator<T>::QueryGenerator(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg), dense_neck_(ps, "query.dense", cfg, rng, /*text_gate=*/false) {
  if (cfg.num_queries < 1) throw ConfigError("num_queries must be at least 1");
  const int c = cfg.width, half = cfg.width / 2;
  reduce1_ = Conv2d<T>(ps, "query.reduce1", 1, c, half, 1, 0, 0, rng);
  reduce2_ = Conv2d<T>(ps, "query.reduce2", 1, half, half, 1, 0, 0, rng);
  reduce3_ = Conv2d<T>(ps, "query.reduce3", 1, half, cfg.num_queries, 1, 0, 0, rng);
  w_t_ = Linear<T>(ps, "query.w_t", c, c, rng);
  if (cfg.use_fvg) w_vg_ = Linear<T>(ps, "query.w_vg", cfg.v4_width, c, rng);
  w_vd_ = Linear<T>(ps, "query.w_vd", cfg.tokens3(), cfg.query_attn_width, rng);
  w_a_ = Linear<T>(ps, "query.w_a", c, cfg.query_attn_width, rng);
  w_tv_ = Linear<T>(ps, "query.w_tv", c, c, rng);
}

template <typename T>
Var<T> QueryGenerator<T>::dense_visual(Tape<T>& tape, const VisualFeatures<T>& v) const {
  FusedVisual<T> merged = dense_neck_(tape, v, Var<T>{});
  Var<T> map = reshape(merged.features, {merged.grid_h, merged.grid_w, cfg_.width});
  Var<T> r = relu(reduce1_(tape, map));
  r = relu(reduce2_(tape, r));
  r = reduce3_(tape, r);
  return transpose(reshape(r, {merged.grid_h * merged.grid_w, cfg_.num_queries}));
}

template <typename T>
Var<T> QueryGenerator<T>::fuse_text_global(Tape<T>& tape, Var<T> text_tokens, Var<T> visual_global) const {
  Var<T> words = relu(w_t_(tape, text_tokens));
  if (!cfg_.use_fvg) return words;
  return mul_row(words, relu(w_vg_(tape, visual_global)));
}

template <typename T>
QuerySet<T> QueryGenerator<T>::generate(Tape<T>& tape, Var<T> dense, Var<T> text_fused,
                                        std::span<const uint8_t> token_mask) const {
  if (std::none_of(token_mask.begin(), token_mask.end(), [](uint8_t m) { return m != 0; })) {
    throw InputError("query generation needs at least one valid word");
  }
  if (static_cast<int>(token_mask.size()) != text_fused.shape()[0]) {
    throw ShapeError("token mask length does not match the word features");
  }
  Var<T> visual_keys = relu(w_vd_(tape, dense));
  Var<T> word_keys = relu(w_a_(tape, text_fused));
  Var<T> logits = matmul_nt(visual_keys, word_keys);
  if (cfg_.scale_query_attn) {
    logits = scale(logits, T(1) / std::sqrt(static_cast<T>(cfg_.query_attn_width)));
  }
  QuerySet<T> out;
  out.dense = dense;
  out.text_fused = text_fused;
  out.attention = softmax(logits, token_mask);
  out.queries = matmul(out.attention, relu(w_tv_(tape, text_fused)));
  return out;
}

template <typename T>
QuerySet<T> QueryGenerator<T>::operator()(Tape<T>& tape, const TextFeatures<T>& text,
                                          const VisualFeatures<T>& v) const {
  Var<T> dense = dense_visual(tape, v);
  Var<T> fused = fuse_text_global(tape, text.tokens, v.global);
  return generate(tape, dense, fused, text.token_mask);
}

template class QueryGenerator<float>;
template class QueryGenerator<double>;

}  // namespace mmnet
