#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mmnet/ops.hpp"

namespace mmnet {

/// Seeded 64-bit generator with a platform-independent uniform mapping.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}
  uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(engine_() % static_cast<uint64_t>(hi - lo + 1));
  }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; used to derive independent seed streams.
uint64_t mix_seed(uint64_t x);

/// Owns every parameter of a model in creation order. Addresses are stable.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Param<T>& add(const std::string& name, Shape shape);
  Param<T>* find(const std::string& name);
  const std::vector<Param<T>*>& all() const { return order_; }
  int64_t scalar_count() const;
  void zero_grad();

 private:
  std::deque<Param<T>> params_;
  std::vector<Param<T>*> order_;
};

enum class Init { xavier, zeros, ones };

/// Uniform Xavier: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void xavier_uniform(Param<T>& p, int fan_in, int fan_out, Rng& rng);

/// x W + b over the last axis.
template <typename T>
struct Linear {
  Param<T>* weight = nullptr;
  Param<T>* bias = nullptr;
  int in = 0, out = 0;

  Linear() = default;
  Linear(ParamStore<T>& ps, const std::string& name, int in, int out, Rng& rng,
         Init init = Init::xavier, bool with_bias = true);
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
};

/// Convolution over H x W x C maps with a stored kernel.
template <typename T>
struct Conv2d {
  Param<T>* kernel = nullptr;
  Param<T>* bias = nullptr;
  int stride = 1, pad_lo = 0, pad_hi = 0;

  Conv2d() = default;
  Conv2d(ParamStore<T>& ps, const std::string& name, int kernel_size, int cin, int cout, int stride,
         int pad_lo, int pad_hi, Rng& rng);
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
};

template <typename T>
struct LayerNorm {
  Param<T>* gamma = nullptr;
  Param<T>* beta = nullptr;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& name, int width, T eps);
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
};

/// Multi-head scaled dot-product attention with separate q/k/v/out maps.
template <typename T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& ps, const std::string& name, int width, int heads, Rng& rng,
                     bool zero_out = false);
  /// `key_valid` is empty, one flag per key, or one flag per (query, key).
  /// When `attn` is given, the per-head attention matrices are appended.
  Var<T> operator()(Tape<T>& tape, Var<T> q_in, Var<T> k_in, Var<T> v_in,
                    std::span<const uint8_t> key_valid = {}, std::vector<Var<T>>* attn = nullptr) const;
};

/// Two-layer ReLU feed-forward block.
template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(ParamStore<T>& ps, const std::string& name, int width, int hidden, Rng& rng, bool zero_out = false);
  Var<T> operator()(Tape<T>& tape, Var<T> x) const;
};

/// 1-D sine/cosine encodings, one row per position: [n, width].
template <typename T>
Tensor<T> sine_encoding_1d(int n, int width);
/// 2-D sine encodings for an h x w grid, flattened row-major: [h*w, width].
/// The first half of the channels encodes y, the second half x.
template <typename T>
Tensor<T> sine_encoding_2d(int h, int w, int width);

}  // namespace mmnet
