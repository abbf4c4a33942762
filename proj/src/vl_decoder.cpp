#include "mmnet/vl_decoder.hpp"

namespace mmnet {

template <typename T>
VLDecoder<T>::VLDecoder(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.decoder_layers < 1) throw ConfigError("decoder_layers must be at least 1");
  if (cfg.width % cfg.decoder_heads != 0) throw ConfigError("decoder_heads must divide width");
  const int c = cfg.width;
  const T eps = static_cast<T>(cfg.layer_norm_eps);
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    Layer l;
    l.ln1 = LayerNorm<T>(ps, p + ".ln1", c, eps);
    l.self_attn = MultiHeadAttention<T>(ps, p + ".self_attn", c, cfg.decoder_heads, rng, /*zero_out=*/true);
    l.ln2 = LayerNorm<T>(ps, p + ".ln2", c, eps);
    l.cross_attn = MultiHeadAttention<T>(ps, p + ".cross_attn", c, cfg.decoder_heads, rng, /*zero_out=*/true);
    l.ln3 = LayerNorm<T>(ps, p + ".ln3", c, eps);
    l.mlp = Mlp<T>(ps, p + ".mlp", c, cfg.decoder_ff, rng, /*zero_out=*/true);
    layers_.push_back(l);
  }
}

template <typename T>
DecoderState<T> VLDecoder<T>::operator()(Tape<T>& tape, Var<T> visual, Var<T> queries, int grid_h,
                                         int grid_w) const {
  if (grid_h * grid_w != visual.shape()[0]) {
    throw ShapeError("decoder: " + std::to_string(visual.shape()[0]) + " visual tokens do not form a " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  Var<T> vpos = tape.constant(sine_encoding_2d<T>(grid_h, grid_w, cfg_.width));
  Var<T> qpos = tape.constant(sine_encoding_1d<T>(queries.shape()[0], cfg_.width));
  return decode(tape, visual, queries, vpos, qpos);
}

template <typename T>
DecoderState<T> VLDecoder<T>::decode(Tape<T>& tape, Var<T> visual, Var<T> queries, Var<T> visual_pos,
                                     Var<T> query_pos) const {
  if (visual.shape().size() != 2 || visual.shape()[1] != cfg_.width || queries.shape().size() != 2 ||
      queries.shape()[1] != cfg_.width) {
    throw ShapeError("decoder: expected [N, C] visual and [N_q, C] query matrices, got " +
                     shape_str(visual.shape()) + " and " + shape_str(queries.shape()));
  }
  DecoderState<T> out;
  Var<T> x = visual;
  Var<T> keys = add(queries, query_pos);
  for (const auto& l : layers_) {
    Var<T> h = l.ln1(tape, x);
    Var<T> hp = add(h, visual_pos);
    x = add(x, l.self_attn(tape, hp, hp, h, {}, &out.self_attention));
    Var<T> h2 = add(l.ln2(tape, x), visual_pos);
    x = add(x, l.cross_attn(tape, h2, keys, queries, {}, &out.cross_attention));
    x = add(x, l.mlp(tape, l.ln3(tape, x)));
  }
  out.features = x;
  return out;
}

template class VLDecoder<float>;
template class VLDecoder<double>;

}  // namespace mmnet
