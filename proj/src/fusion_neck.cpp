#include "mmnet/fusion_neck.hpp"

namespace mmnet {

template <typename T>
Tensor<T> coord_features(int h, int w) {
  Tensor<T> out({h, w, 2});
  auto lin = [](int i, int n) { return n > 1 ? -1.0 + 2.0 * i / (n - 1) : 0.0; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out.data[(static_cast<int64_t>(y) * w + x) * 2 + 0] = static_cast<T>(lin(x, w));
      out.data[(static_cast<int64_t>(y) * w + x) * 2 + 1] = static_cast<T>(lin(y, h));
    }
  }
  return out;
}

template <typename T>
FusionNeck<T>::FusionNeck(ParamStore<T>& ps, const std::string& prefix, const ModelConfig& cfg, Rng& rng,
                          bool text_gate)
    : cfg_(cfg), text_gate_(text_gate) {
  const int c = cfg.width, half = cfg.width / 2;
  w_v4_ = Linear<T>(ps, prefix + ".w_v4", cfg.v4_width, c, rng);
  if (text_gate) w_tg_ = Linear<T>(ps, prefix + ".w_tg", cfg.text_global_width, c, rng);
  w_m4_ = Linear<T>(ps, prefix + ".w_m4", c, half, rng);
  w_v3_ = Linear<T>(ps, prefix + ".w_v3", cfg.v3_width, half, rng);
  w_m3_ = Linear<T>(ps, prefix + ".w_m3", c, half, rng);
  w_v2_ = Linear<T>(ps, prefix + ".w_v2", cfg.v2_width, half, rng);
  merge_ = Conv2d<T>(ps, prefix + ".merge", 1, 3 * c, c, 1, 0, 0, rng);
  with_coords_ = Conv2d<T>(ps, prefix + ".coord", 1, c + 2, c, 1, 0, 0, rng);
}

template <typename T>
FusedVisual<T> FusionNeck<T>::operator()(Tape<T>& tape, const VisualFeatures<T>& v, Var<T> text_global) const {
  const Shape& s2 = v.v2.shape();
  const Shape& s3 = v.v3.shape();
  const Shape& s4 = v.v4.shape();
  if (s4[0] * 2 != s3[0] || s4[1] * 2 != s3[1] || s2[0] != s3[0] * 2 || s2[1] != s3[1] * 2) {
    throw ShapeError("fusion neck: stride mismatch among " + shape_str(s2) + ", " + shape_str(s3) + ", " +
                     shape_str(s4));
  }
  Var<T> top = relu(w_v4_(tape, v.v4));
  if (text_gate_) top = mul_row(top, relu(w_tg_(tape, text_global)));
  FusedVisual<T> out;
  out.grid_h = s3[0];
  out.grid_w = s3[1];
  out.m4 = upsample2x(top);
  Var<T> m3 = concat_cols(std::vector<Var<T>>{relu(w_m4_(tape, out.m4)), relu(w_v3_(tape, v.v3))});
  Var<T> m2 = concat_cols(std::vector<Var<T>>{relu(w_m3_(tape, m3)), relu(w_v2_(tape, avgpool2x2(v.v2)))});
  Var<T> m = merge_(tape, concat_cols(std::vector<Var<T>>{m2, m3, out.m4}));
  out.coords = tape.constant(coord_features<T>(out.grid_h, out.grid_w));
  Var<T> fused = with_coords_(tape, concat_cols(std::vector<Var<T>>{m, out.coords}));
  out.features = reshape(fused, {out.grid_h * out.grid_w, cfg_.width});
  return out;
}

template Tensor<float> coord_features<float>(int, int);
template Tensor<double> coord_features<double>(int, int);
template class FusionNeck<float>;
template class FusionNeck<double>;

}  // namespace mmnet
