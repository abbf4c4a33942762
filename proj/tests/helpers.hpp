// Test fixtures shared by the unit tests and the acceptance binary.
#pragma once

#include <cmath>
#include <random>
#include <string>

#include "mmnet/model.hpp"
#include "mmnet/vocab.hpp"

namespace testing_util {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Replaces every parameter with generic random values: fan-in scaled
/// weights, non-zero biases, LayerNorm gains around 1. Zero-initialised
/// output projections otherwise make gradient checks degenerate.
template <typename T>
void randomize(mmnet::ParamStore<T>& ps, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (mmnet::Param<T>* p : ps.all()) {
    const auto& shape = p->value.shape;
    if (ends_with(p->name, ".gamma")) {
      for (T& v : p->value.data) v = static_cast<T>(1.0 + 0.2 * u(rng));
    } else if (ends_with(p->name, ".beta") || ends_with(p->name, ".bias")) {
      for (T& v : p->value.data) v = static_cast<T>(0.1 * u(rng));
    } else {
      const double fan_in = static_cast<double>(p->value.numel()) / shape.back();
      const double a = std::sqrt(3.0 / fan_in);
      for (T& v : p->value.data) v = static_cast<T>(a * u(rng));
    }
  }
}

template <typename T>
mmnet::Tensor<T> random_image(int size, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  mmnet::Tensor<T> img({size, size, 3});
  for (T& v : img.data) v = static_cast<T>(u(rng));
  return img;
}

/// A small configuration that keeps full-pipeline tests fast.
inline mmnet::ModelConfig tiny_config() {
  mmnet::ModelConfig c;
  c.image_size = 64;
  c.width = 16;
  c.text_global_width = 16;
  c.text_heads = 2;
  c.text_ff = 32;
  c.text_layers = 1;
  c.backbone_channels = {4, 8, 8, 16};
  c.v2_width = 16;
  c.v3_width = 16;
  c.v4_width = 16;
  c.attnpool_heads = 2;
  c.num_queries = 3;
  c.query_attn_width = 16;
  c.decoder_layers = 1;
  c.decoder_heads = 2;
  c.decoder_ff = 32;
  c.estimator_heads = 2;
  return c;
}

inline std::vector<int> tokens(const std::string& text, int length = 8) {
  return mmnet::Vocabulary::builtin().encode(text, length);
}

}  // namespace testing_util
