// Brute-force reference implementations and gradient checking shared by the
// unit tests and the acceptance binary. Written without Eigen or the tape.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mmnet/ops.hpp"
#include "mmnet/tape.hpp"

namespace oracle {

using mmnet::Shape;
using mmnet::Tape;
using mmnet::Tensor;
using mmnet::Var;

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape shape, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) v = u(rng);
  return t;
}

/// Like random_tensor but keeps |v| >= margin so ReLU-style kinks are far
/// from finite-difference probes.
inline Tensor<double> random_away_from_zero(std::mt19937_64& rng, Shape shape, double margin = 1e-2) {
  Tensor<double> t = random_tensor(rng, std::move(shape));
  for (double& v : t.data) {
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  }
  return t;
}

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
  return c;
}

/// Sliding-window cross-correlation. x: [H,W,Cin], kernel: [kh,kw,Cin,Cout].
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& kernel, const std::vector<double>& bias,
                             int stride, int pad_lo, int pad_hi) {
  const int h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const int kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  const int oh = (h + pad_lo + pad_hi - kh) / stride + 1;
  const int ow = (w + pad_lo + pad_hi - kw) / stride + 1;
  Tensor<double> out({oh, ow, cout});
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int co = 0; co < cout; ++co) {
        double s = bias.empty() ? 0.0 : bias[co];
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const int iy = oy * stride + ky - pad_lo, ix = ox * stride + kx - pad_lo;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            for (int ci = 0; ci < cin; ++ci) {
              s += x.data[(static_cast<size_t>(iy) * w + ix) * cin + ci] *
                   kernel.data[((static_cast<size_t>(ky) * kw + kx) * cin + ci) * cout + co];
            }
          }
        }
        out.data[(static_cast<size_t>(oy) * ow + ox) * cout + co] = s;
      }
    }
  }
  return out;
}

/// Per-query dynamic 3x3 convolution: params row = 9*Cp kernel values in
/// (ky, kx, c) order followed by one bias. Returns [rows, H*W].
inline std::vector<std::vector<double>> dynamic_conv(const Tensor<double>& feat, const Tensor<double>& params) {
  const int h = feat.dim(0), w = feat.dim(1), cp = feat.dim(2);
  std::vector<std::vector<double>> masks;
  for (int q = 0; q < params.dim(0); ++q) {
    const double* p = params.data.data() + static_cast<size_t>(q) * params.dim(1);
    std::vector<double> m(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = p[9 * cp];
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = y + ky - 1, ix = x + kx - 1;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            for (int c = 0; c < cp; ++c) s += p[(ky * 3 + kx) * cp + c] * feat.data[(static_cast<size_t>(iy) * w + ix) * cp + c];
          }
        }
        m[static_cast<size_t>(y) * w + x] = s;
      }
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  std::vector<double> e(x.size());
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += (e[i] = std::exp(x[i]));
  for (double& v : e) v /= s;
  return e;
}

/// Direct formula -[t log σ(z) + (1-t) log(1-σ(z))], averaged. Only valid
/// for moderate logits; callers keep |z| small enough.
inline double bce(const std::vector<double>& logits, const std::vector<double>& target) {
  double s = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits[i]));
    s -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  return s / static_cast<double>(logits.size());
}

/// |a - n| / max(|a|, |n|, floor).
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Scalar function of leaf inputs used by check_gradients.
using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Reduces a tensor to a scalar with fixed pseudo-random weights so every
/// output element contributes a distinct gradient.
inline Var<double> weighted_sum(Var<double> out, uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor<double> w = random_tensor(rng, out.shape(), -1.0, 1.0);
  return mmnet::sum(mmnet::mul(out, out.tape->constant(std::move(w))));
}

/// Largest relative error between analytic and central-difference gradients
/// over every input coordinate.
inline double check_gradients(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double h = 1e-4) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  Var<double> loss = f(tape, leaves);
  tape.backward(loss);

  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    Tape<double> t2;
    std::vector<Var<double>> ls;
    for (const auto& t : xs) ls.push_back(t2.leaf(t));
    return f(t2, ls).value().data[0];
  };
  double worst = 0.0;
  std::vector<Tensor<double>> probe = inputs;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<double> g = tape.grad(leaves[k]);
    for (size_t i = 0; i < inputs[k].data.size(); ++i) {
      const double orig = probe[k].data[i];
      probe[k].data[i] = orig + h;
      const double up = eval(probe);
      probe[k].data[i] = orig - h;
      const double down = eval(probe);
      probe[k].data[i] = orig;
      worst = std::max(worst, rel_error(g[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
