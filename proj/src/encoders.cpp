#include "mmnet/encoders.hpp"

#include "mmnet/vocab.hpp"

namespace mmnet {

int validate_tokens(std::span<const int> tokens, int max_tokens) {
  if (static_cast<int>(tokens.size()) > max_tokens) {
    throw InputError("token sequence of length " + std::to_string(tokens.size()) +
                     " exceeds the configured maximum " + std::to_string(max_tokens));
  }
  if (tokens.empty() || tokens[0] != Vocabulary::kSos) throw InputError("token sequence must begin with SOS");
  int eos = -1;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] != Vocabulary::kEos) continue;
    if (eos >= 0) throw InputError("token sequence contains more than one EOS");
    eos = static_cast<int>(i);
  }
  if (eos < 0) throw InputError("token sequence has no EOS");
  return eos;
}

template <typename T>
TextEncoder<T>::TextEncoder(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  const int c = cfg.width;
  token_embedding_ = &ps.add("text.token_embedding", {cfg.vocab_size, c});
  xavier_uniform(*token_embedding_, cfg.vocab_size, c, rng);
  position_embedding_ = &ps.add("text.position_embedding", {cfg.max_tokens, c});
  xavier_uniform(*position_embedding_, cfg.max_tokens, c, rng);
  const T eps = static_cast<T>(cfg.layer_norm_eps);
  for (int i = 0; i < cfg.text_layers; ++i) {
    const std::string p = "text.block" + std::to_string(i);
    Block b;
    b.ln1 = LayerNorm<T>(ps, p + ".ln1", c, eps);
    b.attn = MultiHeadAttention<T>(ps, p + ".attn", c, cfg.text_heads, rng);
    b.ln2 = LayerNorm<T>(ps, p + ".ln2", c, eps);
    b.mlp = Mlp<T>(ps, p + ".mlp", c, cfg.text_ff, rng);
    blocks_.push_back(b);
  }
  ln_final_ = LayerNorm<T>(ps, "text.ln_final", c, eps);
  proj_ = Linear<T>(ps, "text.proj", c, cfg.text_global_width, rng, Init::xavier, false);
}

template <typename T>
TextFeatures<T> TextEncoder<T>::operator()(Tape<T>& tape, std::span<const int> tokens) const {
  const int eos = validate_tokens(tokens, cfg_.max_tokens);
  const int len = static_cast<int>(tokens.size());
  TextFeatures<T> out;
  out.eos_index = eos;
  out.token_mask.assign(len, 0);
  for (int i = 0; i <= eos; ++i) out.token_mask[i] = 1;

  // Keys beyond EOS are never attended; causal mode also hides later keys.
  std::vector<uint8_t> valid(static_cast<size_t>(len) * len, 0);
  for (int i = 0; i < len; ++i) {
    for (int j = 0; j <= eos; ++j) valid[i * len + j] = (!cfg_.causal_text || j <= i) ? 1 : 0;
  }

  Var<T> x = embedding(tape.param(*token_embedding_), tokens);
  Var<T> pos = slice_rows(tape.param(*position_embedding_), 0, len);
  x = add(x, pos);
  for (const auto& b : blocks_) {
    Var<T> h = b.ln1(tape, x);
    x = add(x, b.attn(tape, h, h, h, valid));
    x = add(x, b.mlp(tape, b.ln2(tape, x)));
  }
  out.tokens = ln_final_(tape, x);
  Var<T> eos_feat = reshape(slice_rows(out.tokens, eos, eos + 1), {cfg_.width});
  out.global = proj_(tape, eos_feat);
  return out;
}

template <typename T>
ImageEncoder<T>::ImageEncoder(ParamStore<T>& ps, const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  const auto& ch = cfg.backbone_channels;
  stem_ = Conv2d<T>(ps, "image.stem", 3, 3, ch[0], 2, 0, 1, rng);
  int cin = ch[0];
  for (int i = 0; i < 4; ++i) {
    const std::string p = "image.stage" + std::to_string(i + 1);
    stages_[i].conv = Conv2d<T>(ps, p + ".conv", 3, cin, ch[i], 1, 1, 1, rng);
    stages_[i].down = Conv2d<T>(ps, p + ".down", 3, ch[i], ch[i], 2, 0, 1, rng);
    cin = ch[i];
  }
  pool_ = MultiHeadAttention<T>(ps, "image.attnpool", ch[3], cfg.attnpool_heads, rng);
  proj2_ = Linear<T>(ps, "image.proj_v2", ch[1], cfg.v2_width, rng);
  proj3_ = Linear<T>(ps, "image.proj_v3", ch[2], cfg.v3_width, rng);
  proj4_ = Linear<T>(ps, "image.proj_v4", ch[3], cfg.v4_width, rng);
  proj_g_ = Linear<T>(ps, "image.proj_vg", ch[3], cfg.v4_width, rng);
}

template <typename T>
VisualFeatures<T> ImageEncoder<T>::operator()(Tape<T>& tape, Var<T> image) const {
  const auto& s = image.shape();
  if (s.size() != 3 || s[2] != 3) throw ShapeError("image must be H x W x 3, got " + shape_str(s));
  if (s[0] % 32 != 0 || s[1] % 32 != 0) {
    throw ShapeError("image dimensions must be divisible by 32, got " + shape_str(s));
  }
  Var<T> x = relu(stem_(tape, image));
  std::array<Var<T>, 4> stage_out;
  for (int i = 0; i < 4; ++i) {
    x = relu(stages_[i].conv(tape, x));
    x = relu(stages_[i].down(tape, x));
    stage_out[i] = x;
  }
  const Var<T>& x4 = stage_out[3];
  const int h4 = x4.shape()[0], w4 = x4.shape()[1], c4 = x4.shape()[2];
  Var<T> flat = reshape(x4, {h4 * w4, c4});
  Var<T> tokens = concat_rows(std::vector<Var<T>>{mean_rows(flat), flat});
  Var<T> pooled = pool_(tape, tokens, tokens, tokens);

  VisualFeatures<T> out;
  out.pooled_global = slice_rows(pooled, 0, 1);
  out.pooled_spatial = slice_rows(pooled, 1, 1 + h4 * w4);
  out.x4 = x4;
  out.v2 = proj2_(tape, stage_out[1]);
  out.v3 = proj3_(tape, stage_out[2]);
  out.v4 = reshape(proj4_(tape, out.pooled_spatial), {h4, w4, cfg_.v4_width});
  out.global = reshape(proj_g_(tape, out.pooled_global), {cfg_.v4_width});
  return out;
}

template class TextEncoder<float>;
template class TextEncoder<double>;
template class ImageEncoder<float>;
template class ImageEncoder<double>;

}  // namespace mmnet
