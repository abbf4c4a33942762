#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmnet/tape.hpp"

namespace mmnet {

// Elementwise arithmetic on equal shapes.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);

/// a[..., C] + b[C], broadcast over all leading positions.
template <typename T> Var<T> add_row(Var<T> a, Var<T> b);
/// a[..., C] * b[C], broadcast over all leading positions.
template <typename T> Var<T> mul_row(Var<T> a, Var<T> b);

/// a[..., k] x b[k, n] -> [..., n]. Leading dimensions of `a` are flattened
/// into rows and restored on the output.
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a[m, k] x b[n, k]^T -> [m, n].
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose(Var<T> a);

template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> sigmoid(Var<T> a);

/// Softmax along the last axis with max subtraction. `valid` is either
/// empty, one flag per column (shared by all rows) or one flag per element;
/// invalid entries get exactly zero probability.
template <typename T> Var<T> softmax(Var<T> a, std::span<const uint8_t> valid = {});

/// Normalizes each row over the last axis then applies gamma/beta.
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);

/// Patch extraction of an H x W x C map into [H'*W', kh*kw*C] with zero
/// padding. Column (ky*kw + kx)*C + c holds input channel c at offset (ky, kx).
template <typename T> Var<T> im2col(Var<T> x, int kh, int kw, int stride, int padding);
/// As above with separate padding before (top/left) and after (bottom/right).
template <typename T> Var<T> im2col(Var<T> x, int kh, int kw, int stride, int pad_lo, int pad_hi);
/// Cross-correlation of x[H,W,Cin] with kernel[kh,kw,Cin,Cout] plus bias[Cout].
/// The output size (H + 2*padding - kh)/stride + 1 must be integral.
template <typename T> Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias, int stride, int padding);
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias, int stride, int pad_lo, int pad_hi);

/// Nearest-neighbour 2x upsampling of an H x W x C map.
template <typename T> Var<T> upsample2x(Var<T> x);
/// 2x2 mean pooling with stride 2; H and W must be even.
template <typename T> Var<T> avgpool2x2(Var<T> x);

/// Concatenation along the last axis; leading dimensions must agree.
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_cols(Var<T> a, int begin, int end);
/// Concatenation of 2-D blocks along the first axis.
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(Var<T> a, int begin, int end);

template <typename T> Var<T> reshape(Var<T> a, Shape shape);
/// Mean over rows of a [R, C] matrix -> [1, C]. Rows are summed in order.
template <typename T> Var<T> mean_rows(Var<T> a);
template <typename T> Var<T> sum(Var<T> a);

/// Row lookup table[ids[i]] -> [len(ids), C].
template <typename T> Var<T> embedding(Var<T> table, std::span<const int> ids);

/// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets, in
/// the stable form max(x,0) - x*z + log(1 + exp(-|x|)).
template <typename T> Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& target);
/// Mean binary cross-entropy of probabilities clamped to [eps, 1-eps].
template <typename T> Var<T> bce_probs(Var<T> probs, const Tensor<T>& target, T eps = T(1e-7));

}  // namespace mmnet
