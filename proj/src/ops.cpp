#include "mmnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace mmnet {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
CMapMat<T> as_mat(const std::vector<T>& v, int64_t rows, int64_t cols) {
  return CMapMat<T>(v.data(), rows, cols);
}
template <typename T>
MapMat<T> as_mat(std::vector<T>& v, int64_t rows, int64_t cols) {
  return MapMat<T>(v.data(), rows, cols);
}

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape != b.tape) throw ContractError("operands live on different tapes");
}

template <typename T>
void require_spatial(const char* op, const Var<T>& x) {
  if (x.value().rank() != 3) {
    throw ShapeError(std::string(op) + ": expected H x W x C map, got " + shape_str(x.shape()));
  }
}

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value().data;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
  const int ia = a.id, ib = b.id;
  return a.tape->record("add", std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) accumulate(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad_buffer(ib), g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value().data;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv[i];
  const int ia = a.id, ib = b.id;
  return a.tape->record("sub", std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) accumulate(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const auto& bv = b.value().data;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
  const int ia = a.id, ib = b.id;
  return a.tape->record("mul", std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    const auto& av = t.value(ia).data;
    const auto& bv = t.value(ib).data;
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= factor;
  const int ia = a.id;
  return a.tape->record("scale", std::move(out), {ia}, [ia, factor](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    auto& ga = t.grad_buffer(ia);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const int64_t c = a.value().dim(-1);
  if (b.value().numel() != c) {
    throw ShapeError("add_row: row vector " + shape_str(b.shape()) + " does not match last axis of " +
                     shape_str(a.shape()));
  }
  Tensor<T> out = a.value();
  const auto& bv = b.value().data;
  const int64_t rows = out.numel() / c;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < c; ++j) out.data[r * c + j] += bv[j];
  }
  const int ia = a.id, ib = b.id;
  return a.tape->record("add_row", std::move(out), {ia, ib}, [ia, ib, rows, c](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) accumulate(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
      }
    }
  });
}

template <typename T>
Var<T> mul_row(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const int64_t c = a.value().dim(-1);
  if (b.value().numel() != c) {
    throw ShapeError("mul_row: row vector " + shape_str(b.shape()) + " does not match last axis of " +
                     shape_str(a.shape()));
  }
  Tensor<T> out = a.value();
  const auto& bv = b.value().data;
  const int64_t rows = out.numel() / c;
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < c; ++j) out.data[r * c + j] *= bv[j];
  }
  const int ia = a.id, ib = b.id;
  return a.tape->record("mul_row", std::move(out), {ia, ib}, [ia, ib, rows, c](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    const auto& av = t.value(ia).data;
    const auto& bv = t.value(ib).data;
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < c; ++j) ga[r * c + j] += g[r * c + j] * bv[j];
      }
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < c; ++j) gb[j] += g[r * c + j] * av[r * c + j];
      }
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (bv.rank() != 2 || av.rank() < 1 || av.dim(-1) != bv.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(av.shape) + " x " +
                     shape_str(bv.shape));
  }
  const int64_t k = bv.dim(0), n = bv.dim(1), m = av.numel() / k;
  Shape out_shape = av.shape;
  out_shape.back() = static_cast<int>(n);
  if (av.rank() == 1) out_shape = {static_cast<int>(n)};
  Tensor<T> out(out_shape);
  as_mat(out.data, m, n).noalias() = as_mat(av.data, m, k) * as_mat(bv.data, k, n);
  const int ia = a.id, ib = b.id;
  return a.tape->record("matmul", std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<T>& t, int self) {
    auto g = as_mat(std::as_const(t.grad_buffer(self)), m, n);
    if (t.requires_grad(ia)) {
      as_mat(t.grad_buffer(ia), m, k).noalias() += g * as_mat(t.value(ib).data, k, n).transpose();
    }
    if (t.requires_grad(ib)) {
      as_mat(t.grad_buffer(ib), k, n).noalias() += as_mat(t.value(ia).data, m, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) {
    throw ShapeError("matmul_nt: inner dimensions disagree for " + shape_str(av.shape) + " x " +
                     shape_str(bv.shape) + "^T");
  }
  const int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor<T> out({static_cast<int>(m), static_cast<int>(n)});
  as_mat(out.data, m, n).noalias() = as_mat(av.data, m, k) * as_mat(bv.data, n, k).transpose();
  const int ia = a.id, ib = b.id;
  return a.tape->record("matmul_nt", std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<T>& t, int self) {
    auto g = as_mat(std::as_const(t.grad_buffer(self)), m, n);
    if (t.requires_grad(ia)) {
      as_mat(t.grad_buffer(ia), m, k).noalias() += g * as_mat(t.value(ib).data, n, k);
    }
    if (t.requires_grad(ib)) {
      as_mat(t.grad_buffer(ib), n, k).noalias() += g.transpose() * as_mat(t.value(ia).data, m, k);
    }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const auto& av = a.value();
  if (av.rank() != 2) throw ShapeError("transpose: expected matrix, got " + shape_str(av.shape));
  const int64_t r = av.dim(0), c = av.dim(1);
  Tensor<T> out({static_cast<int>(c), static_cast<int>(r)});
  as_mat(out.data, c, r) = as_mat(av.data, r, c).transpose();
  const int ia = a.id;
  return a.tape->record("transpose", std::move(out), {ia}, [ia, r, c](Tape<T>& t, int self) {
    as_mat(t.grad_buffer(ia), r, c) += as_mat(std::as_const(t.grad_buffer(self)), c, r).transpose();
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  const int ia = a.id;
  return a.tape->record("relu", std::move(out), {ia}, [ia](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    const auto& x = t.value(ia).data;
    auto& ga = t.grad_buffer(ia);
    for (size_t i = 0; i < ga.size(); ++i) {
      if (x[i] > T(0)) ga[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  const int ia = a.id;
  return a.tape->record("sigmoid", std::move(out), {ia}, [ia](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    const auto& y = t.value(self).data;
    auto& ga = t.grad_buffer(ia);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Var<T> softmax(Var<T> a, std::span<const uint8_t> valid) {
  const auto& av = a.value();
  const int64_t n = av.dim(-1);
  const int64_t rows = av.numel() / n;
  const bool per_col = static_cast<int64_t>(valid.size()) == n;
  if (!valid.empty() && !per_col && static_cast<int64_t>(valid.size()) != av.numel()) {
    throw ShapeError("softmax: mask of length " + std::to_string(valid.size()) +
                     " does not fit " + shape_str(av.shape));
  }
  auto ok = [&](int64_t r, int64_t j) -> bool {
    if (valid.empty()) return true;
    return per_col ? valid[j] != 0 : valid[r * n + j] != 0;
  };
  Tensor<T> out(av.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = av.data.data() + r * n;
    T* y = out.data.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (int64_t j = 0; j < n; ++j) {
      if (!ok(r, j)) continue;
      any = true;
      mx = std::max(mx, x[j]);
    }
    if (!any) {
      throw ContractError("softmax: row " + std::to_string(r) + " has no valid entries");
    }
    T total = 0;
    for (int64_t j = 0; j < n; ++j) {
      y[j] = ok(r, j) ? std::exp(x[j] - mx) : T(0);
      total += y[j];
    }
    for (int64_t j = 0; j < n; ++j) y[j] /= total;
  }
  const int ia = a.id;
  return a.tape->record("softmax", std::move(out), {ia}, [ia, rows, n](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    const auto& y = t.value(self).data;
    auto& ga = t.grad_buffer(ia);
    for (int64_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (int64_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (int64_t j = 0; j < n; ++j) ga[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const auto& xv = x.value();
  const int64_t c = xv.dim(-1);
  if (gamma.value().numel() != c || beta.value().numel() != c) {
    throw ShapeError("layer_norm: affine parameters do not match " + shape_str(xv.shape));
  }
  const int64_t rows = xv.numel() / c;
  Tensor<T> out(xv.shape);
  std::vector<T> xhat(xv.data.size());
  std::vector<T> inv_std(rows);
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xv.data.data() + r * c;
    T mean = 0;
    for (int64_t j = 0; j < c; ++j) mean += row[j];
    mean /= T(c);
    T var = 0;
    for (int64_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t j = 0; j < c; ++j) {
      const T h = (row[j] - mean) * is;
      xhat[r * c + j] = h;
      out.data[r * c + j] = gv[j] * h + bv[j];
    }
  }
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return x.tape->record(
      "layer_norm", std::move(out), {ix, ig, ib},
      [ix, ig, ib, rows, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, int self) {
        const auto& g = t.grad_buffer(self);
        const auto& gv = t.value(ig).data;
        if (t.requires_grad(ig)) {
          auto& gg = t.grad_buffer(ig);
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < c; ++j) gg[j] += g[r * c + j] * xhat[r * c + j];
          }
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (int64_t r = 0; r < rows; ++r) {
            for (int64_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
          }
        }
        if (t.requires_grad(ix)) {
          auto& gx = t.grad_buffer(ix);
          for (int64_t r = 0; r < rows; ++r) {
            T mean_d = 0, mean_dh = 0;
            for (int64_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * gv[j];
              mean_d += d;
              mean_dh += d * xhat[r * c + j];
            }
            mean_d /= T(c);
            mean_dh /= T(c);
            for (int64_t j = 0; j < c; ++j) {
              const T d = g[r * c + j] * gv[j];
              gx[r * c + j] += inv_std[r] * (d - mean_d - xhat[r * c + j] * mean_dh);
            }
          }
        }
      });
}

template <typename T>
Var<T> im2col(Var<T> x, int kh, int kw, int stride, int padding) {
  return im2col(x, kh, kw, stride, padding, padding);
}

template <typename T>
Var<T> im2col(Var<T> x, int kh, int kw, int stride, int pad_lo, int pad_hi) {
  require_spatial("im2col", x);
  const auto& xv = x.value();
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  if (kh < 1 || kw < 1 || stride < 1 || pad_lo < 0 || pad_hi < 0) {
    throw ConfigError("conv2d: kernel/stride must be positive and padding non-negative");
  }
  if (kh % 2 == 0 || kw % 2 == 0) throw ConfigError("conv2d: kernel sizes must be odd");
  const int padding = pad_lo;
  const int span_h = h + pad_lo + pad_hi - kh, span_w = w + pad_lo + pad_hi - kw;
  if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0) {
    throw ConfigError("conv2d: output size is not integral for input " + shape_str(xv.shape) +
                      ", kernel " + std::to_string(kh) + "x" + std::to_string(kw) + ", stride " +
                      std::to_string(stride) + ", padding " + std::to_string(pad_lo) + "/" +
                      std::to_string(pad_hi));
  }
  const int ho = span_h / stride + 1, wo = span_w / stride + 1;
  const int cols = kh * kw * c;
  Tensor<T> out({ho * wo, cols});
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      T* dst = out.data.data() + static_cast<int64_t>(oy * wo + ox) * cols;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride + ky - padding;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride + kx - padding;
          T* d = dst + (ky * kw + kx) * c;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
          const T* src = xv.data.data() + (static_cast<int64_t>(iy) * w + ix) * c;
          std::copy(src, src + c, d);
        }
      }
    }
  }
  const int id = x.id;
  return x.tape->record("im2col", std::move(out), {id},
                        [id, h, w, c, kh, kw, stride, padding, ho, wo, cols](Tape<T>& t, int self) {
                          const auto& g = t.grad_buffer(self);
                          auto& gx = t.grad_buffer(id);
                          for (int oy = 0; oy < ho; ++oy) {
                            for (int ox = 0; ox < wo; ++ox) {
                              const T* src = g.data() + static_cast<int64_t>(oy * wo + ox) * cols;
                              for (int ky = 0; ky < kh; ++ky) {
                                const int iy = oy * stride + ky - padding;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                  const int ix = ox * stride + kx - padding;
                                  if (ix < 0 || ix >= w) continue;
                                  const T* s = src + (ky * kw + kx) * c;
                                  T* d = gx.data() + (static_cast<int64_t>(iy) * w + ix) * c;
                                  for (int ch = 0; ch < c; ++ch) d[ch] += s[ch];
                                }
                              }
                            }
                          }
                        });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias, int stride, int padding) {
  return conv2d(x, kernel, bias, stride, padding, padding);
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias, int stride, int pad_lo, int pad_hi) {
  require_spatial("conv2d", x);
  const auto& k = kernel.value();
  if (k.rank() != 4 || k.dim(2) != x.value().dim(2)) {
    throw ShapeError("conv2d: kernel " + shape_str(k.shape) + " does not fit input " +
                     shape_str(x.shape()));
  }
  const int kh = k.dim(0), kw = k.dim(1), cin = k.dim(2), cout = k.dim(3);
  const int h = x.value().dim(0), w = x.value().dim(1);
  Var<T> cols = (kh == 1 && kw == 1 && stride == 1 && pad_lo == 0 && pad_hi == 0)
                    ? x
                    : im2col(x, kh, kw, stride, pad_lo, pad_hi);
  const int ho = (h + pad_lo + pad_hi - kh) / stride + 1;
  const int wo = (w + pad_lo + pad_hi - kw) / stride + 1;
  Var<T> flat_k = reshape(kernel, {kh * kw * cin, cout});
  Var<T> y = add_row(matmul(cols, flat_k), bias);
  return reshape(y, {ho, wo, cout});
}

template <typename T>
Var<T> upsample2x(Var<T> x) {
  require_spatial("upsample2x", x);
  const auto& xv = x.value();
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  Tensor<T> out({2 * h, 2 * w, c});
  for (int y = 0; y < 2 * h; ++y) {
    for (int xx = 0; xx < 2 * w; ++xx) {
      const T* src = xv.data.data() + (static_cast<int64_t>(y / 2) * w + xx / 2) * c;
      std::copy(src, src + c, out.data.data() + (static_cast<int64_t>(y) * 2 * w + xx) * c);
    }
  }
  const int id = x.id;
  return x.tape->record("upsample2x", std::move(out), {id}, [id, h, w, c](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    auto& gx = t.grad_buffer(id);
    for (int y = 0; y < 2 * h; ++y) {
      for (int xx = 0; xx < 2 * w; ++xx) {
        const T* s = g.data() + (static_cast<int64_t>(y) * 2 * w + xx) * c;
        T* d = gx.data() + (static_cast<int64_t>(y / 2) * w + xx / 2) * c;
        for (int ch = 0; ch < c; ++ch) d[ch] += s[ch];
      }
    }
  });
}

template <typename T>
Var<T> avgpool2x2(Var<T> x) {
  require_spatial("avgpool2x2", x);
  const auto& xv = x.value();
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("avgpool2x2: spatial dimensions must be even, got " + shape_str(xv.shape));
  }
  const int ho = h / 2, wo = w / 2;
  Tensor<T> out({ho, wo, c});
  for (int y = 0; y < ho; ++y) {
    for (int xx = 0; xx < wo; ++xx) {
      T* d = out.data.data() + (static_cast<int64_t>(y) * wo + xx) * c;
      for (int dy = 0; dy < 2; ++dy) {
        for (int dx = 0; dx < 2; ++dx) {
          const T* s = xv.data.data() + (static_cast<int64_t>(2 * y + dy) * w + 2 * xx + dx) * c;
          for (int ch = 0; ch < c; ++ch) d[ch] += s[ch];
        }
      }
      for (int ch = 0; ch < c; ++ch) d[ch] *= T(0.25);
    }
  }
  const int id = x.id;
  return x.tape->record("avgpool2x2", std::move(out), {id}, [id, w, c, ho, wo](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    auto& gx = t.grad_buffer(id);
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) {
        const T* s = g.data() + (static_cast<int64_t>(y) * wo + xx) * c;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            T* d = gx.data() + (static_cast<int64_t>(2 * y + dy) * w + 2 * xx + dx) * c;
            for (int ch = 0; ch < c; ++ch) d[ch] += T(0.25) * s[ch];
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  const int64_t rows = shape_numel(lead);
  std::vector<int> widths, ids;
  int total = 0;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p);
    Shape s = p.shape();
    const int wdt = s.back();
    s.pop_back();
    if (s != lead) {
      throw ShapeError("concat_cols: leading dimensions differ: " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    }
    widths.push_back(wdt);
    ids.push_back(p.id);
    total += wdt;
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out(out_shape);
  int offset = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value().data;
    for (int64_t r = 0; r < rows; ++r) {
      std::copy(v.begin() + r * widths[k], v.begin() + (r + 1) * widths[k],
                out.data.begin() + r * total + offset);
    }
    offset += widths[k];
  }
  return parts[0].tape->record("concat_cols", std::move(out), ids,
                               [ids, widths, rows, total](Tape<T>& t, int self) {
                                 const auto& g = t.grad_buffer(self);
                                 int off = 0;
                                 for (size_t k = 0; k < ids.size(); ++k) {
                                   if (t.requires_grad(ids[k])) {
                                     auto& gk = t.grad_buffer(ids[k]);
                                     for (int64_t r = 0; r < rows; ++r) {
                                       for (int j = 0; j < widths[k]; ++j) {
                                         gk[r * widths[k] + j] += g[r * total + off + j];
                                       }
                                     }
                                   }
                                   off += widths[k];
                                 }
                               });
}

template <typename T>
Var<T> slice_cols(Var<T> a, int begin, int end) {
  const auto& av = a.value();
  const int c = av.dim(-1);
  if (begin < 0 || end > c || begin >= end) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside " + shape_str(av.shape));
  }
  const int64_t rows = av.numel() / c;
  const int wdt = end - begin;
  Shape out_shape = av.shape;
  out_shape.back() = wdt;
  Tensor<T> out(out_shape);
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(av.data.begin() + r * c + begin, av.data.begin() + r * c + end,
              out.data.begin() + r * wdt);
  }
  const int ia = a.id;
  return a.tape->record("slice_cols", std::move(out), {ia}, [ia, rows, c, begin, wdt](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    auto& ga = t.grad_buffer(ia);
    for (int64_t r = 0; r < rows; ++r) {
      for (int j = 0; j < wdt; ++j) ga[r * c + begin + j] += g[r * wdt + j];
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int c = parts[0].value().dim(-1);
  std::vector<int> ids, counts;
  int total = 0;
  for (const auto& p : parts) {
    require_same_tape(parts[0], p);
    if (p.value().rank() != 2 || p.value().dim(1) != c) {
      throw ShapeError("concat_rows: incompatible block " + shape_str(p.shape()));
    }
    ids.push_back(p.id);
    counts.push_back(p.value().dim(0));
    total += p.value().dim(0);
  }
  Tensor<T> out({total, c});
  auto it = out.data.begin();
  for (const auto& p : parts) it = std::copy(p.value().data.begin(), p.value().data.end(), it);
  return parts[0].tape->record("concat_rows", std::move(out), ids, [ids, counts, c](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    int64_t off = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      const int64_t len = static_cast<int64_t>(counts[k]) * c;
      if (t.requires_grad(ids[k])) {
        auto& gk = t.grad_buffer(ids[k]);
        for (int64_t i = 0; i < len; ++i) gk[i] += g[off + i];
      }
      off += len;
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> a, int begin, int end) {
  const auto& av = a.value();
  if (av.rank() != 2 || begin < 0 || end > av.dim(0) || begin >= end) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") outside " + shape_str(av.shape));
  }
  const int c = av.dim(1);
  Tensor<T> out({end - begin, c});
  std::copy(av.data.begin() + static_cast<int64_t>(begin) * c, av.data.begin() + static_cast<int64_t>(end) * c,
            out.data.begin());
  const int ia = a.id;
  return a.tape->record("slice_rows", std::move(out), {ia}, [ia, begin, c](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    auto& ga = t.grad_buffer(ia);
    const int64_t off = static_cast<int64_t>(begin) * c;
    for (size_t i = 0; i < g.size(); ++i) ga[off + i] += g[i];
  });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), a.value().data);
  const int ia = a.id;
  return a.tape->record("reshape", std::move(out), {ia}, [ia](Tape<T>& t, int self) {
    accumulate(t.grad_buffer(ia), t.grad_buffer(self));
  });
}

template <typename T>
Var<T> mean_rows(Var<T> a) {
  const auto& av = a.value();
  if (av.rank() != 2) throw ShapeError("mean_rows: expected matrix, got " + shape_str(av.shape));
  const int r = av.dim(0), c = av.dim(1);
  Tensor<T> out({1, c});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out.data[j] += av.data[static_cast<int64_t>(i) * c + j];
  }
  for (auto& v : out.data) v /= T(r);
  const int ia = a.id;
  return a.tape->record("mean_rows", std::move(out), {ia}, [ia, r, c](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    auto& ga = t.grad_buffer(ia);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) ga[static_cast<int64_t>(i) * c + j] += g[j] / T(r);
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (T v : a.value().data) total += v;
  const int ia = a.id;
  return a.tape->record("sum", Tensor<T>({1}, {total}), {ia}, [ia](Tape<T>& t, int self) {
    const T g = t.grad_buffer(self)[0];
    for (auto& v : t.grad_buffer(ia)) v += g;
  });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
  const auto& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("embedding: table must be a matrix");
  const int vocab = tv.dim(0), c = tv.dim(1);
  if (ids.empty()) throw InputError("embedding: empty id sequence");
  Tensor<T> out({static_cast<int>(ids.size()), c});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw InputError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    std::copy(tv.data.begin() + static_cast<int64_t>(ids[i]) * c,
              tv.data.begin() + static_cast<int64_t>(ids[i] + 1) * c,
              out.data.begin() + static_cast<int64_t>(i) * c);
  }
  const int it = table.id;
  std::vector<int> rows(ids.begin(), ids.end());
  return table.tape->record("embedding", std::move(out), {it}, [it, rows, c](Tape<T>& t, int self) {
    const auto& g = t.grad_buffer(self);
    auto& gt = t.grad_buffer(it);
    for (size_t i = 0; i < rows.size(); ++i) {
      for (int j = 0; j < c; ++j) gt[static_cast<int64_t>(rows[i]) * c + j] += g[i * c + j];
    }
  });
}

template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& target) {
  const auto& x = logits.value();
  if (x.numel() != target.numel()) {
    throw ShapeError("bce_with_logits: logits " + shape_str(x.shape) + " vs target " +
                     shape_str(target.shape));
  }
  const int64_t n = x.numel();
  T total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T v = x.data[i];
    total += std::max(v, T(0)) - v * target.data[i] + std::log1p(std::exp(-std::abs(v)));
  }
  const int il = logits.id;
  return logits.tape->record("bce_with_logits", Tensor<T>({1}, {total / T(n)}), {il},
                             [il, n, z = target.data](Tape<T>& t, int self) {
                               const T g = t.grad_buffer(self)[0] / T(n);
                               const auto& x = t.value(il).data;
                               auto& gx = t.grad_buffer(il);
                               for (int64_t i = 0; i < n; ++i) {
                                 const T s = T(1) / (T(1) + std::exp(-x[i]));
                                 gx[i] += g * (s - z[i]);
                               }
                             });
}

template <typename T>
Var<T> bce_probs(Var<T> probs, const Tensor<T>& target, T eps) {
  const auto& p = probs.value();
  if (p.numel() != target.numel()) {
    throw ShapeError("bce_probs: probabilities " + shape_str(p.shape) + " vs target " +
                     shape_str(target.shape));
  }
  const int64_t n = p.numel();
  T total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T q = std::clamp(p.data[i], eps, T(1) - eps);
    total -= target.data[i] * std::log(q) + (T(1) - target.data[i]) * std::log(T(1) - q);
  }
  const int ip = probs.id;
  return probs.tape->record("bce_probs", Tensor<T>({1}, {total / T(n)}), {ip},
                            [ip, n, eps, z = target.data](Tape<T>& t, int self) {
                              const T g = t.grad_buffer(self)[0] / T(n);
                              const auto& p = t.value(ip).data;
                              auto& gp = t.grad_buffer(ip);
                              for (int64_t i = 0; i < n; ++i) {
                                if (p[i] < eps || p[i] > T(1) - eps) continue;
                                gp[i] += g * (-z[i] / p[i] + (T(1) - z[i]) / (T(1) - p[i]));
                              }
                            });
}

#define MMNET_INSTANTIATE_OPS(T)                                                       \
  template Var<T> add(Var<T>, Var<T>);                                                 \
  template Var<T> sub(Var<T>, Var<T>);                                                 \
  template Var<T> mul(Var<T>, Var<T>);                                                 \
  template Var<T> scale(Var<T>, T);                                                    \
  template Var<T> add_row(Var<T>, Var<T>);                                             \
  template Var<T> mul_row(Var<T>, Var<T>);                                             \
  template Var<T> matmul(Var<T>, Var<T>);                                              \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                           \
  template Var<T> transpose(Var<T>);                                                   \
  template Var<T> relu(Var<T>);                                                        \
  template Var<T> sigmoid(Var<T>);                                                     \
  template Var<T> softmax(Var<T>, std::span<const uint8_t>);                           \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                               \
  template Var<T> im2col(Var<T>, int, int, int, int);                                  \
  template Var<T> im2col(Var<T>, int, int, int, int, int);                             \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                            \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int, int);                       \
  template Var<T> upsample2x(Var<T>);                                                  \
  template Var<T> avgpool2x2(Var<T>);                                                  \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                             \
  template Var<T> slice_cols(Var<T>, int, int);                                        \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                             \
  template Var<T> slice_rows(Var<T>, int, int);                                        \
  template Var<T> reshape(Var<T>, Shape);                                              \
  template Var<T> mean_rows(Var<T>);                                                   \
  template Var<T> sum(Var<T>);                                                         \
  template Var<T> embedding(Var<T>, std::span<const int>);                             \
  template Var<T> bce_with_logits(Var<T>, const Tensor<T>&);                           \
  template Var<T> bce_probs(Var<T>, const Tensor<T>&, T);

MMNET_INSTANTIATE_OPS(float)
MMNET_INSTANTIATE_OPS(double)

}  // namespace mmnet
