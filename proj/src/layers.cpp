#include "mmnet/layers.hpp"

#include <cmath>
#include <numbers>

namespace mmnet {

uint64_t mix_seed(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

template <typename T>
Param<T>& ParamStore<T>::add(const std::string& name, Shape shape) {
  if (find(name)) throw InternalError("duplicate parameter name " + name);
  params_.push_back(Param<T>{name, Tensor<T>(std::move(shape)), {}});
  Param<T>& p = params_.back();
  p.zero_grad();
  order_.push_back(&p);
  return p;
}

template <typename T>
Param<T>* ParamStore<T>::find(const std::string& name) {
  for (auto* p : order_) {
    if (p->name == name) return p;
  }
  return nullptr;
}

template <typename T>
int64_t ParamStore<T>::scalar_count() const {
  int64_t n = 0;
  for (const auto* p : order_) n += p->value.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto* p : order_) p->zero_grad();
}

template <typename T>
void xavier_uniform(Param<T>& p, int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : p.value.data) v = static_cast<T>(rng.uniform(-a, a));
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& ps, const std::string& name, int in_, int out_, Rng& rng, Init init,
                  bool with_bias)
    : in(in_), out(out_) {
  weight = &ps.add(name + ".weight", {in, out});
  if (init == Init::xavier) xavier_uniform(*weight, in, out, rng);
  if (with_bias) bias = &ps.add(name + ".bias", {out});
}

template <typename T>
Var<T> Linear<T>::operator()(Tape<T>& tape, Var<T> x) const {
  Var<T> y = matmul(x, tape.param(*weight));
  if (bias) y = add_row(y, tape.param(*bias));
  return y;
}

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& ps, const std::string& name, int k, int cin, int cout, int stride_,
                  int pad_lo_, int pad_hi_, Rng& rng)
    : stride(stride_), pad_lo(pad_lo_), pad_hi(pad_hi_) {
  kernel = &ps.add(name + ".kernel", {k, k, cin, cout});
  xavier_uniform(*kernel, k * k * cin, k * k * cout, rng);
  bias = &ps.add(name + ".bias", {cout});
}

template <typename T>
Var<T> Conv2d<T>::operator()(Tape<T>& tape, Var<T> x) const {
  return conv2d(x, tape.param(*kernel), tape.param(*bias), stride, pad_lo, pad_hi);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& ps, const std::string& name, int width, T eps_) : eps(eps_) {
  gamma = &ps.add(name + ".gamma", {width});
  for (auto& v : gamma->value.data) v = T(1);
  beta = &ps.add(name + ".beta", {width});
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Tape<T>& tape, Var<T> x) const {
  return layer_norm(x, tape.param(*gamma), tape.param(*beta), eps);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParamStore<T>& ps, const std::string& name, int width, int heads_,
                                          Rng& rng, bool zero_out)
    : wq(ps, name + ".q", width, width, rng),
      wk(ps, name + ".k", width, width, rng),
      wv(ps, name + ".v", width, width, rng),
      wo(ps, name + ".out", width, width, rng, zero_out ? Init::zeros : Init::xavier),
      heads(heads_) {
  if (width % heads != 0) throw ConfigError(name + ": head count does not divide width");
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(Tape<T>& tape, Var<T> q_in, Var<T> k_in, Var<T> v_in,
                                         std::span<const uint8_t> key_valid,
                                         std::vector<Var<T>>* attn) const {
  const int width = wq.out;
  if (width % heads != 0) throw ConfigError("attention head count does not divide width");
  const int d = width / heads;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
  Var<T> q = wq(tape, q_in), k = wk(tape, k_in), v = wv(tape, v_in);
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var<T> qh = heads == 1 ? q : slice_cols(q, h * d, (h + 1) * d);
    Var<T> kh = heads == 1 ? k : slice_cols(k, h * d, (h + 1) * d);
    Var<T> vh = heads == 1 ? v : slice_cols(v, h * d, (h + 1) * d);
    Var<T> a = softmax(scale(matmul_nt(qh, kh), inv_sqrt_d), key_valid);
    if (attn) attn->push_back(a);
    outs.push_back(matmul(a, vh));
  }
  Var<T> merged = heads == 1 ? outs[0] : concat_cols(outs);
  return wo(tape, merged);
}

template <typename T>
Mlp<T>::Mlp(ParamStore<T>& ps, const std::string& name, int width, int hidden, Rng& rng, bool zero_out)
    : fc1(ps, name + ".fc1", width, hidden, rng),
      fc2(ps, name + ".fc2", hidden, width, rng, zero_out ? Init::zeros : Init::xavier) {}

template <typename T>
Var<T> Mlp<T>::operator()(Tape<T>& tape, Var<T> x) const {
  return fc2(tape, relu(fc1(tape, x)));
}

template <typename T>
Tensor<T> sine_encoding_1d(int n, int width) {
  Tensor<T> out({n, width});
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / width);
      const double angle = pos * freq;
      out.at(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return out;
}

template <typename T>
Tensor<T> sine_encoding_2d(int h, int w, int width) {
  // Normalized positions in (0, 2*pi], as in DETR.
  const int half = width / 2;
  Tensor<T> out({h * w, width});
  const double two_pi = 2.0 * std::numbers::pi;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double py = (y + 1.0) / h * two_pi;
      const double px = (x + 1.0) / w * two_pi;
      for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / half);
        const double ay = py * freq, ax = px * freq;
        out.at(y * w + x, i) = static_cast<T>(i % 2 == 0 ? std::sin(ay) : std::cos(ay));
        out.at(y * w + x, half + i) = static_cast<T>(i % 2 == 0 ? std::sin(ax) : std::cos(ax));
      }
    }
  }
  return out;
}

#define MMNET_INSTANTIATE_LAYERS(T)                                         \
  template class ParamStore<T>;                                             \
  template void xavier_uniform(Param<T>&, int, int, Rng&);                  \
  template struct Linear<T>;                                                \
  template struct Conv2d<T>;                                                \
  template struct LayerNorm<T>;                                             \
  template struct MultiHeadAttention<T>;                                    \
  template struct Mlp<T>;                                                   \
  template Tensor<T> sine_encoding_1d<T>(int, int);                         \
  template Tensor<T> sine_encoding_2d<T>(int, int, int);

MMNET_INSTANTIATE_LAYERS(float)
MMNET_INSTANTIATE_LAYERS(double)

}  // namespace mmnet
