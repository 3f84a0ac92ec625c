#pragma once

#include "vqw2v/rng.hpp"
#include "vqw2v/tensor.hpp"

#include <span>
#include <vector>

// Differentiable operations over Tensor<Scalar>. Every op records itself on
// the tape of its first input. Two-dimensional ops treat axis 0 as rows and
// flatten the remaining axes into columns.

namespace vqw2v {

// Elementwise arithmetic. Shapes must match exactly.
template <typename Scalar> Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);

// Reductions to a single-element tensor of shape [1].
template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> mean(const Tensor<Scalar>& a);

template <typename Scalar> Tensor<Scalar> relu(const Tensor<Scalar>& a);

/// log(sigmoid(x)), evaluated without overflow for either sign of x.
template <typename Scalar> Tensor<Scalar> log_sigmoid(const Tensor<Scalar>& a);

/// Softmax over the last axis.
template <typename Scalar> Tensor<Scalar> softmax(const Tensor<Scalar>& a);

/// Inverted dropout: kept values are divided by (1 - rate) so that
/// evaluation mode is the identity.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& a, double rate, Rng& rng, bool train);

template <typename Scalar> Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape);
template <typename Scalar> Tensor<Scalar> transpose(const Tensor<Scalar>& a);

/// 1-D convolution of input [C_in x T] with weight [C_out x C_in x k].
/// `left_pad` zeros are prepended; no right padding, so output frame t
/// only sees input frames up to t * stride + k - 1 - left_pad.
template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Index stride, Index left_pad);

/// y = x W^T + b along the last axis of x.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

/// [M x K] * [K x N], or [M x K] * [N x K]^T when transpose_b is set.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool transpose_b = false);

enum class NormSpan {
  kSequence,  // statistics over (channels in group) x all frames
  kFrame,     // statistics over (channels in group) at each frame separately
};

/// Group normalisation of x [C x T] with per-channel affine gain/bias [C].
template <typename Scalar>
Tensor<Scalar> group_norm(const Tensor<Scalar>& x, Index num_groups, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, double eps,
                          NormSpan span = NormSpan::kSequence);

/// Normalises each row of x [N x D]; gain and bias are [D].
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, double eps);

/// Identity forward, zero gradient backward.
template <typename Scalar> Tensor<Scalar> stop_gradient(const Tensor<Scalar>& x);

/// Forward returns `quantized`; backward hands the incoming gradient to
/// `source` unchanged and nothing to `quantized`.
template <typename Scalar>
Tensor<Scalar> straight_through(const Tensor<Scalar>& quantized, const Tensor<Scalar>& source);

/// Rows of x [N x D] selected (with repetition allowed) by `rows`.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, std::span<const Index> rows);

/// Contiguous rows [begin, begin + count).
template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& x, Index begin, Index count);

/// Dot product of matching rows: [N x D], [N x D] -> [N].
template <typename Scalar>
Tensor<Scalar> rowwise_dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index begin, Index width);
template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts);

/// Row r of `weights` [N x V] mixes the V table rows that belong to group
/// r mod `groups`. With `shared` the table is [V x D] and every group reads
/// it; otherwise it is [groups*V x D] and group g owns rows [g*V, (g+1)*V).
template <typename Scalar>
Tensor<Scalar> group_mix(const Tensor<Scalar>& weights, const Tensor<Scalar>& table, Index groups,
                         bool shared);

/// Mean over rows of -log softmax(logits)[target].
template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits,
                                     std::span<const Index> targets);

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a) { return scale(a, s); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a) { return scale(a, Scalar(-1)); }

}  // namespace vqw2v
