#include "vqw2v/ops.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace vqw2v {

namespace {

template <typename Scalar>
using Node = detail::Node<Scalar>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <typename Scalar>
using StridedRow = Eigen::Map<RowVector<Scalar>, 0, Eigen::InnerStride<>>;
template <typename Scalar>
using ConstStridedRow = Eigen::Map<const RowVector<Scalar>, 0, Eigen::InnerStride<>>;
template <typename Scalar>
using StridedRows = Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;
template <typename Scalar>
using ConstStridedRows = Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>>;

template <typename Scalar>
void require_same_tape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": inputs on different tapes");
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

template <typename Scalar>
void require_ndim(const Tensor<Scalar>& a, std::size_t n, const char* op) {
  if (a.ndim() != n)
    throw ShapeError(std::string(op) + ": expected " + std::to_string(n) + "-d input, got " +
                     shape_string(a.shape()));
}

template <typename Scalar>
MatrixMap<Scalar> as_matrix(Vec<Scalar>& v, Index rows, Index cols) {
  return {v.data(), rows, cols};
}

template <typename Scalar>
ConstMatrixMap<Scalar> as_matrix(const Vec<Scalar>& v, Index rows, Index cols) {
  return {v.data(), rows, cols};
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  Node<Scalar>* na = a.node();
  Node<Scalar>* nb = b.node();
  return a.tape().record("add", a.shape(), a.value() + b.value(),
                         a.requires_grad() || b.requires_grad(), [na, nb](const Vec<Scalar>& g) {
                           if (na->requires_grad) na->grad_buffer() += g;
                           if (nb->requires_grad) nb->grad_buffer() += g;
                         });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  Node<Scalar>* na = a.node();
  Node<Scalar>* nb = b.node();
  return a.tape().record("sub", a.shape(), a.value() - b.value(),
                         a.requires_grad() || b.requires_grad(), [na, nb](const Vec<Scalar>& g) {
                           if (na->requires_grad) na->grad_buffer() += g;
                           if (nb->requires_grad) nb->grad_buffer() -= g;
                         });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "mul");
  Node<Scalar>* na = a.node();
  Node<Scalar>* nb = b.node();
  return a.tape().record("mul", a.shape(), a.value() * b.value(),
                         a.requires_grad() || b.requires_grad(), [na, nb](const Vec<Scalar>& g) {
                           if (na->requires_grad) na->grad_buffer() += g * nb->value;
                           if (nb->requires_grad) nb->grad_buffer() += g * na->value;
                         });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  Node<Scalar>* na = a.node();
  return a.tape().record("scale", a.shape(), a.value() * factor, a.requires_grad(),
                         [na, factor](const Vec<Scalar>& g) { na->grad_buffer() += g * factor; });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Node<Scalar>* na = a.node();
  Vec<Scalar> out(1);
  out[0] = a.value().sum();
  return a.tape().record("sum", {1}, std::move(out), a.requires_grad(),
                         [na](const Vec<Scalar>& g) { na->grad_buffer() += g[0]; });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  Node<Scalar>* na = a.node();
  const Scalar inv = Scalar(1) / Scalar(a.size());
  Vec<Scalar> out(1);
  out[0] = a.value().sum() * inv;
  return a.tape().record("mean", {1}, std::move(out), a.requires_grad(),
                         [na, inv](const Vec<Scalar>& g) { na->grad_buffer() += g[0] * inv; });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  Node<Scalar>* na = a.node();
  return a.tape().record("relu", a.shape(), a.value().max(Scalar(0)), a.requires_grad(),
                         [na](const Vec<Scalar>& g) {
                           na->grad_buffer() += (na->value > Scalar(0)).select(g, Scalar(0));
                         });
}

template <typename Scalar>
Tensor<Scalar> log_sigmoid(const Tensor<Scalar>& a) {
  Node<Scalar>* na = a.node();
  const Vec<Scalar>& x = a.value();
  Vec<Scalar> out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    out[i] = x[i] >= Scalar(0) ? -std::log1p(std::exp(-x[i])) : x[i] - std::log1p(std::exp(x[i]));
  }
  return a.tape().record("log_sigmoid", a.shape(), std::move(out), a.requires_grad(),
                         [na](const Vec<Scalar>& g) {
                           auto& dx = na->grad_buffer();
                           const Vec<Scalar>& x = na->value;
                           // d/dx log sigmoid(x) = sigmoid(-x)
                           for (Index i = 0; i < x.size(); ++i) {
                             const Scalar s = x[i] >= Scalar(0)
                                                  ? std::exp(-x[i]) / (Scalar(1) + std::exp(-x[i]))
                                                  : Scalar(1) / (Scalar(1) + std::exp(x[i]));
                             dx[i] += g[i] * s;
                           }
                         });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& a) {
  const Index width = a.shape().back();
  const Index rows = a.size() / width;
  Vec<Scalar> out(a.size());
  auto y = as_matrix(out, rows, width);
  auto x = as_matrix(a.value(), rows, width);
  for (Index r = 0; r < rows; ++r) {
    y.row(r) = (x.row(r).array() - x.row(r).maxCoeff()).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  Node<Scalar>* na = a.node();
  auto node = a.tape().record("softmax", a.shape(), std::move(out), a.requires_grad(), nullptr);
  Node<Scalar>* ny = node.node();
  if (ny->requires_grad) {
    ny->backward = [na, ny, rows, width](const Vec<Scalar>& g) {
      auto gy = as_matrix(g, rows, width);
      auto yv = as_matrix(ny->value, rows, width);
      auto dx = as_matrix(na->grad_buffer(), rows, width);
      for (Index r = 0; r < rows; ++r) {
        const Scalar dot = gy.row(r).dot(yv.row(r));
        dx.row(r).array() += yv.row(r).array() * (gy.row(r).array() - dot);
      }
    };
  }
  return node;
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& a, double rate, Rng& rng, bool train) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (!train || rate == 0.0) return a;
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  Vec<Scalar> mask(a.size());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = uniform01(rng) < rate ? Scalar(0) : keep_scale;
  Vec<Scalar> out = a.value() * mask;
  Node<Scalar>* na = a.node();
  return a.tape().record("dropout", a.shape(), std::move(out), a.requires_grad(),
                         [na, mask = std::move(mask)](const Vec<Scalar>& g) {
                           na->grad_buffer() += g * mask;
                         });
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  Node<Scalar>* na = a.node();
  return a.tape().record("reshape", std::move(shape), a.value(), a.requires_grad(),
                         [na](const Vec<Scalar>& g) { na->grad_buffer() += g; });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  require_ndim(a, 2, "transpose");
  const Index rows = a.dim(0);
  const Index cols = a.dim(1);
  Vec<Scalar> out(a.size());
  as_matrix(out, cols, rows) = a.matrix().transpose();
  Node<Scalar>* na = a.node();
  return a.tape().record("transpose", {cols, rows}, std::move(out), a.requires_grad(),
                         [na, rows, cols](const Vec<Scalar>& g) {
                           as_matrix(na->grad_buffer(), rows, cols) +=
                               as_matrix(g, cols, rows).transpose();
                         });
}

template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, Index stride, Index left_pad) {
  require_same_tape(input, weight, "conv1d");
  require_same_tape(input, bias, "conv1d");
  require_ndim(input, 2, "conv1d");
  require_ndim(weight, 3, "conv1d");
  const Index c_in = input.dim(0);
  const Index steps = input.dim(1);
  const Index c_out = weight.dim(0);
  const Index kernel = weight.dim(2);
  if (weight.dim(1) != c_in)
    throw ShapeError("conv1d: weight " + shape_string(weight.shape()) + " does not match input " +
                     shape_string(input.shape()));
  if (bias.size() != c_out) throw ShapeError("conv1d: bias size must equal output channels");
  if (kernel < 1 || stride < 1 || left_pad < 0)
    throw std::invalid_argument("conv1d: need kernel >= 1, stride >= 1, left_pad >= 0");
  const Index padded_len = steps + left_pad;
  if (padded_len < kernel) throw ShapeError("conv1d: input shorter than kernel");
  const Index out_len = (padded_len - kernel) / stride + 1;

  RowMatrix<Scalar> padded = RowMatrix<Scalar>::Zero(c_in, padded_len);
  padded.rightCols(steps) = input.matrix();

  auto w = weight.value();
  Vec<Scalar> out(c_out * out_len);
  auto y = as_matrix(out, c_out, out_len);
  for (Index co = 0; co < c_out; ++co) {
    y.row(co).setConstant(bias.value()[co]);
    for (Index ci = 0; ci < c_in; ++ci) {
      for (Index k = 0; k < kernel; ++k) {
        const Scalar wk = w[(co * c_in + ci) * kernel + k];
        ConstStridedRow<Scalar> x(padded.data() + ci * padded_len + k, out_len,
                                  Eigen::InnerStride<>(stride));
        y.row(co) += wk * x;
      }
    }
  }

  Node<Scalar>* nx = input.node();
  Node<Scalar>* nw = weight.node();
  Node<Scalar>* nb = bias.node();
  const bool needs = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
  return input.tape().record(
      "conv1d", {c_out, out_len}, std::move(out), needs,
      [nx, nw, nb, padded = std::move(padded), c_in, c_out, kernel, stride, steps, padded_len,
       out_len](const Vec<Scalar>& g) {
        auto gy = as_matrix(g, c_out, out_len);
        if (nb->requires_grad) nb->grad_buffer() += gy.rowwise().sum().array();
        if (nw->requires_grad) {
          auto& dw = nw->grad_buffer();
          for (Index co = 0; co < c_out; ++co)
            for (Index ci = 0; ci < c_in; ++ci)
              for (Index k = 0; k < kernel; ++k) {
                ConstStridedRow<Scalar> x(padded.data() + ci * padded_len + k, out_len,
                                          Eigen::InnerStride<>(stride));
                dw[(co * c_in + ci) * kernel + k] += gy.row(co).dot(x);
              }
        }
        if (nx->requires_grad) {
          RowMatrix<Scalar> dpad = RowMatrix<Scalar>::Zero(c_in, padded_len);
          const auto& w = nw->value;
          for (Index ci = 0; ci < c_in; ++ci)
            for (Index k = 0; k < kernel; ++k) {
              StridedRow<Scalar> dx(dpad.data() + ci * padded_len + k, out_len,
                                    Eigen::InnerStride<>(stride));
              for (Index co = 0; co < c_out; ++co) dx += w[(co * c_in + ci) * kernel + k] * gy.row(co);
            }
          as_matrix(nx->grad_buffer(), c_in, steps) += dpad.rightCols(steps);
        }
      });
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  require_same_tape(x, weight, "linear");
  require_same_tape(x, bias, "linear");
  require_ndim(weight, 2, "linear");
  const Index d_in = x.shape().back();
  const Index d_out = weight.dim(0);
  if (weight.dim(1) != d_in)
    throw ShapeError("linear: weight " + shape_string(weight.shape()) + " vs input " +
                     shape_string(x.shape()));
  if (bias.size() != d_out) throw ShapeError("linear: bias size must equal output width");
  const Index n = x.size() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;

  Vec<Scalar> out(n * d_out);
  auto y = as_matrix(out, n, d_out);
  auto xm = as_matrix(x.value(), n, d_in);
  auto wm = weight.matrix();
  y.noalias() = xm * wm.transpose();
  y.rowwise() += bias.value().matrix().transpose();

  Node<Scalar>* nx = x.node();
  Node<Scalar>* nw = weight.node();
  Node<Scalar>* nb = bias.node();
  const bool needs = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  return x.tape().record("linear", std::move(out_shape), std::move(out), needs,
                         [nx, nw, nb, n, d_in, d_out](const Vec<Scalar>& g) {
                           auto gy = as_matrix(g, n, d_out);
                           if (nx->requires_grad)
                             as_matrix(nx->grad_buffer(), n, d_in).noalias() +=
                                 gy * as_matrix(nw->value, d_out, d_in);
                           if (nw->requires_grad)
                             as_matrix(nw->grad_buffer(), d_out, d_in).noalias() +=
                                 gy.transpose() * as_matrix(nx->value, n, d_in);
                           if (nb->requires_grad)
                             nb->grad_buffer() += gy.colwise().sum().transpose().array();
                         });
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool transpose_b) {
  require_same_tape(a, b, "matmul");
  require_ndim(a, 2, "matmul");
  require_ndim(b, 2, "matmul");
  const Index m = a.dim(0);
  const Index k = a.dim(1);
  const Index n = transpose_b ? b.dim(0) : b.dim(1);
  const Index b_inner = transpose_b ? b.dim(1) : b.dim(0);
  if (b_inner != k)
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) +
                     (transpose_b ? "^T" : ""));
  Vec<Scalar> out(m * n);
  auto y = as_matrix(out, m, n);
  if (transpose_b)
    y.noalias() = a.matrix() * b.matrix().transpose();
  else
    y.noalias() = a.matrix() * b.matrix();

  Node<Scalar>* na = a.node();
  Node<Scalar>* nb = b.node();
  return a.tape().record(
      "matmul", {m, n}, std::move(out), a.requires_grad() || b.requires_grad(),
      [na, nb, m, k, n, transpose_b](const Vec<Scalar>& g) {
        auto gy = as_matrix(g, m, n);
        auto av = as_matrix(na->value, m, k);
        if (transpose_b) {
          auto bv = as_matrix(nb->value, n, k);
          if (na->requires_grad) as_matrix(na->grad_buffer(), m, k).noalias() += gy * bv;
          if (nb->requires_grad) as_matrix(nb->grad_buffer(), n, k).noalias() += gy.transpose() * av;
        } else {
          auto bv = as_matrix(nb->value, k, n);
          if (na->requires_grad)
            as_matrix(na->grad_buffer(), m, k).noalias() += gy * bv.transpose();
          if (nb->requires_grad) as_matrix(nb->grad_buffer(), k, n).noalias() += av.transpose() * gy;
        }
      });
}

namespace {

// Normalises each of `sets` groups of `count` elements. `index(s, j)` maps
// set s, element j to a flat offset; `channel(s, j)` picks the affine slot.
template <typename Scalar, typename IndexFn, typename ChannelFn>
struct Normaliser {
  Index sets;
  Index count;
  IndexFn index;
  ChannelFn channel;

  void forward(const Vec<Scalar>& x, const Vec<Scalar>& gain, const Vec<Scalar>& bias, double eps,
               Vec<Scalar>& y, Vec<Scalar>& xhat, Vec<Scalar>& inv_std) const {
    for (Index s = 0; s < sets; ++s) {
      double mu = 0.0;
      for (Index j = 0; j < count; ++j) mu += double(x[index(s, j)]);
      mu /= double(count);
      double var = 0.0;
      for (Index j = 0; j < count; ++j) {
        const double d = double(x[index(s, j)]) - mu;
        var += d * d;
      }
      var /= double(count);
      const Scalar istd = Scalar(1.0 / std::sqrt(var + eps));
      inv_std[s] = istd;
      for (Index j = 0; j < count; ++j) {
        const Index at = index(s, j);
        xhat[at] = (x[at] - Scalar(mu)) * istd;
        y[at] = gain[channel(s, j)] * xhat[at] + bias[channel(s, j)];
      }
    }
  }

  void backward(const Vec<Scalar>& g, const Vec<Scalar>& gain, const Vec<Scalar>& xhat,
                const Vec<Scalar>& inv_std, Vec<Scalar>* dx, Vec<Scalar>* dgain,
                Vec<Scalar>* dbias) const {
    for (Index s = 0; s < sets; ++s) {
      Scalar mean_dxhat = 0;
      Scalar mean_dxhat_xhat = 0;
      for (Index j = 0; j < count; ++j) {
        const Index at = index(s, j);
        const Index c = channel(s, j);
        if (dgain) (*dgain)[c] += g[at] * xhat[at];
        if (dbias) (*dbias)[c] += g[at];
        const Scalar dxh = g[at] * gain[c];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat[at];
      }
      if (!dx) continue;
      mean_dxhat /= Scalar(count);
      mean_dxhat_xhat /= Scalar(count);
      for (Index j = 0; j < count; ++j) {
        const Index at = index(s, j);
        const Scalar dxh = g[at] * gain[channel(s, j)];
        (*dx)[at] += inv_std[s] * (dxh - mean_dxhat - xhat[at] * mean_dxhat_xhat);
      }
    }
  }
};

template <typename Scalar, typename IndexFn, typename ChannelFn>
Tensor<Scalar> normalise(const char* op, const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                         const Tensor<Scalar>& bias, double eps, Index sets, Index count,
                         IndexFn index, ChannelFn channel) {
  require_same_tape(x, gain, op);
  require_same_tape(x, bias, op);
  if (eps <= 0.0) throw std::invalid_argument(std::string(op) + ": eps must be positive");
  Normaliser<Scalar, IndexFn, ChannelFn> norm{sets, count, index, channel};
  Vec<Scalar> out(x.size());
  Vec<Scalar> xhat(x.size());
  Vec<Scalar> inv_std(sets);
  norm.forward(x.value(), gain.value(), bias.value(), eps, out, xhat, inv_std);
  Node<Scalar>* nx = x.node();
  Node<Scalar>* ng = gain.node();
  Node<Scalar>* nb = bias.node();
  const bool needs = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return x.tape().record(op, x.shape(), std::move(out), needs,
                         [nx, ng, nb, norm, xhat = std::move(xhat),
                          inv_std = std::move(inv_std)](const Vec<Scalar>& g) {
                           norm.backward(g, ng->value, xhat, inv_std,
                                         nx->requires_grad ? &nx->grad_buffer() : nullptr,
                                         ng->requires_grad ? &ng->grad_buffer() : nullptr,
                                         nb->requires_grad ? &nb->grad_buffer() : nullptr);
                         });
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> group_norm(const Tensor<Scalar>& x, Index num_groups, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, double eps, NormSpan span) {
  require_ndim(x, 2, "group_norm");
  const Index channels = x.dim(0);
  const Index steps = x.dim(1);
  if (num_groups < 1 || channels % num_groups != 0)
    throw ShapeError("group_norm: " + std::to_string(channels) + " channels not divisible into " +
                     std::to_string(num_groups) + " groups");
  if (gain.size() != channels || bias.size() != channels)
    throw ShapeError("group_norm: gain/bias must have one entry per channel");
  const Index per_group = channels / num_groups;
  auto channel_of_seq = [steps, per_group](Index s, Index j) { return s * per_group + j / steps; };
  if (span == NormSpan::kSequence) {
    // Group s covers channels [s*per_group, (s+1)*per_group) over every frame;
    // those elements are contiguous in row-major [C x T].
    auto index = [steps, per_group](Index s, Index j) { return s * per_group * steps + j; };
    return normalise("group_norm", x, gain, bias, eps, num_groups, per_group * steps, index,
                     channel_of_seq);
  }
  // Set s = t * num_groups + group.
  auto index = [steps, per_group, num_groups](Index s, Index j) {
    const Index t = s / num_groups;
    const Index c = (s % num_groups) * per_group + j;
    return c * steps + t;
  };
  auto channel = [per_group, num_groups](Index s, Index j) {
    return (s % num_groups) * per_group + j;
  };
  return normalise("group_norm", x, gain, bias, eps, steps * num_groups, per_group, index, channel);
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& bias, double eps) {
  const Index width = x.shape().back();
  if (gain.size() != width || bias.size() != width)
    throw ShapeError("layer_norm: gain/bias must match the last axis");
  const Index rows = x.size() / width;
  auto index = [width](Index s, Index j) { return s * width + j; };
  auto channel = [](Index, Index j) { return j; };
  return normalise("layer_norm", x, gain, bias, eps, rows, width, index, channel);
}

template <typename Scalar>
Tensor<Scalar> stop_gradient(const Tensor<Scalar>& x) {
  return x.tape().record("stop_gradient", x.shape(), x.value(), false, nullptr);
}

template <typename Scalar>
Tensor<Scalar> straight_through(const Tensor<Scalar>& quantized, const Tensor<Scalar>& source) {
  require_same_shape(quantized, source, "straight_through");
  Node<Scalar>* ns = source.node();
  return quantized.tape().record("straight_through", quantized.shape(), quantized.value(),
                                 source.requires_grad(),
                                 [ns](const Vec<Scalar>& g) { ns->grad_buffer() += g; });
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, std::span<const Index> rows) {
  const Index n = x.rows();
  const Index width = x.cols();
  std::vector<Index> picked(rows.begin(), rows.end());
  Vec<Scalar> out(Index(picked.size()) * width);
  auto y = as_matrix(out, Index(picked.size()), width);
  auto xm = x.matrix();
  for (std::size_t r = 0; r < picked.size(); ++r) {
    if (picked[r] < 0 || picked[r] >= n)
      throw std::out_of_range("gather_rows: row " + std::to_string(picked[r]) + " of " +
                              std::to_string(n));
    y.row(Index(r)) = xm.row(picked[r]);
  }
  Shape shape = x.shape();
  shape.front() = Index(picked.size());
  if (picked.empty()) throw ShapeError("gather_rows: no rows selected");
  Node<Scalar>* nx = x.node();
  return x.tape().record("gather_rows", std::move(shape), std::move(out), x.requires_grad(),
                         [nx, picked = std::move(picked), n, width](const Vec<Scalar>& g) {
                           auto dx = as_matrix(nx->grad_buffer(), n, width);
                           auto gy = as_matrix(g, Index(picked.size()), width);
                           for (std::size_t r = 0; r < picked.size(); ++r)
                             dx.row(picked[r]) += gy.row(Index(r));
                         });
}

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& x, Index begin, Index count) {
  if (begin < 0 || count < 1 || begin + count > x.rows())
    throw std::out_of_range("slice_rows: [" + std::to_string(begin) + ", " +
                            std::to_string(begin + count) + ") of " + std::to_string(x.rows()));
  const Index width = x.cols();
  Shape shape = x.shape();
  shape.front() = count;
  Vec<Scalar> out = x.value().segment(begin * width, count * width);
  Node<Scalar>* nx = x.node();
  return x.tape().record("slice_rows", std::move(shape), std::move(out), x.requires_grad(),
                         [nx, begin, count, width](const Vec<Scalar>& g) {
                           nx->grad_buffer().segment(begin * width, count * width) += g;
                         });
}

template <typename Scalar>
Tensor<Scalar> rowwise_dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "rowwise_dot");
  const Index n = a.rows();
  const Index width = a.cols();
  Vec<Scalar> out = (a.matrix().array() * b.matrix().array()).rowwise().sum();
  Node<Scalar>* na = a.node();
  Node<Scalar>* nb = b.node();
  return a.tape().record(
      "rowwise_dot", {n}, std::move(out), a.requires_grad() || b.requires_grad(),
      [na, nb, n, width](const Vec<Scalar>& g) {
        auto gcol = g.matrix();
        if (na->requires_grad)
          as_matrix(na->grad_buffer(), n, width) += gcol.asDiagonal() * as_matrix(nb->value, n, width);
        if (nb->requires_grad)
          as_matrix(nb->grad_buffer(), n, width) += gcol.asDiagonal() * as_matrix(na->value, n, width);
      });
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index begin, Index width) {
  require_ndim(x, 2, "slice_cols");
  const Index rows = x.dim(0);
  const Index cols = x.dim(1);
  if (begin < 0 || width < 1 || begin + width > cols)
    throw std::out_of_range("slice_cols: range outside " + shape_string(x.shape()));
  Vec<Scalar> out(rows * width);
  as_matrix(out, rows, width) = x.matrix().middleCols(begin, width);
  Node<Scalar>* nx = x.node();
  return x.tape().record("slice_cols", {rows, width}, std::move(out), x.requires_grad(),
                         [nx, rows, cols, begin, width](const Vec<Scalar>& g) {
                           as_matrix(nx->grad_buffer(), rows, cols).middleCols(begin, width) +=
                               as_matrix(g, rows, width);
                         });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const Index rows = parts.front().dim(0);
  Index cols = 0;
  bool needs = false;
  std::vector<Node<Scalar>*> nodes;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    require_ndim(p, 2, "concat_cols");
    require_same_tape(parts.front(), p, "concat_cols");
    if (p.dim(0) != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.dim(1);
    needs = needs || p.requires_grad();
    nodes.push_back(p.node());
    widths.push_back(p.dim(1));
  }
  Vec<Scalar> out(rows * cols);
  auto y = as_matrix(out, rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.dim(1)) = p.matrix();
    at += p.dim(1);
  }
  return parts.front().tape().record(
      "concat_cols", {rows, cols}, std::move(out), needs,
      [nodes = std::move(nodes), widths = std::move(widths), rows, cols](const Vec<Scalar>& g) {
        auto gy = as_matrix(g, rows, cols);
        Index at = 0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i]->requires_grad)
            as_matrix(nodes[i]->grad_buffer(), rows, widths[i]) += gy.middleCols(at, widths[i]);
          at += widths[i];
        }
      });
}

template <typename Scalar>
Tensor<Scalar> group_mix(const Tensor<Scalar>& weights, const Tensor<Scalar>& table, Index groups,
                         bool shared) {
  require_same_tape(weights, table, "group_mix");
  require_ndim(weights, 2, "group_mix");
  require_ndim(table, 2, "group_mix");
  const Index n = weights.dim(0);
  const Index vars = weights.dim(1);
  const Index width = table.dim(1);
  if (groups < 1 || n % groups != 0)
    throw ShapeError("group_mix: row count not divisible by groups");
  if (table.dim(0) != (shared ? vars : groups * vars))
    throw ShapeError("group_mix: table " + shape_string(table.shape()) + " does not fit " +
                     std::to_string(groups) + " groups of " + std::to_string(vars) + " variables");
  const Index per_group = n / groups;
  Vec<Scalar> out(n * width);
  for (Index g = 0; g < groups; ++g) {
    ConstStridedRows<Scalar> w(weights.value().data() + g * vars, per_group, vars,
                               Eigen::OuterStride<>(groups * vars));
    auto e = table.matrix().middleRows(shared ? 0 : g * vars, vars);
    StridedRows<Scalar> y(out.data() + g * width, per_group, width,
                          Eigen::OuterStride<>(groups * width));
    y.noalias() = w * e;
  }
  Node<Scalar>* nw = weights.node();
  Node<Scalar>* nt = table.node();
  return weights.tape().record(
      "group_mix", {n, width}, std::move(out), weights.requires_grad() || table.requires_grad(),
      [nw, nt, groups, shared, per_group, vars, width](const Vec<Scalar>& grad) {
        for (Index g = 0; g < groups; ++g) {
          ConstStridedRows<Scalar> gy(grad.data() + g * width, per_group, width,
                                      Eigen::OuterStride<>(groups * width));
          const Index first = shared ? 0 : g * vars;
          auto e = as_matrix(nt->value, nt->value.size() / width, width).middleRows(first, vars);
          if (nw->requires_grad) {
            StridedRows<Scalar> dw(nw->grad_buffer().data() + g * vars, per_group, vars,
                                   Eigen::OuterStride<>(groups * vars));
            dw.noalias() += gy * e.transpose();
          }
          if (nt->requires_grad) {
            ConstStridedRows<Scalar> w(nw->value.data() + g * vars, per_group, vars,
                                       Eigen::OuterStride<>(groups * vars));
            as_matrix(nt->grad_buffer(), nt->value.size() / width, width)
                .middleRows(first, vars)
                .noalias() += w.transpose() * gy;
          }
        }
      });
}

template <typename Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits,
                                     std::span<const Index> targets) {
  require_ndim(logits, 2, "softmax_cross_entropy");
  const Index n = logits.dim(0);
  const Index vocab = logits.dim(1);
  if (Index(targets.size()) != n)
    throw ShapeError("softmax_cross_entropy: one target per row required");
  std::vector<Index> tgt(targets.begin(), targets.end());
  RowMatrix<Scalar> probs(n, vocab);
  auto x = logits.matrix();
  double loss = 0.0;
  for (Index r = 0; r < n; ++r) {
    if (tgt[r] < 0 || tgt[r] >= vocab) throw std::out_of_range("softmax_cross_entropy: target id");
    const Scalar peak = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - peak).exp().matrix();
    const Scalar z = probs.row(r).sum();
    probs.row(r) /= z;
    loss += double(peak + std::log(z) - x(r, tgt[r]));
  }
  Vec<Scalar> out(1);
  out[0] = Scalar(loss / double(n));
  Node<Scalar>* nl = logits.node();
  return logits.tape().record("softmax_cross_entropy", {1}, std::move(out),
                              logits.requires_grad(),
                              [nl, probs = std::move(probs), tgt = std::move(tgt), n,
                               vocab](const Vec<Scalar>& g) {
                                auto dx = as_matrix(nl->grad_buffer(), n, vocab);
                                const Scalar s = g[0] / Scalar(n);
                                dx += s * probs;
                                for (Index r = 0; r < n; ++r) dx(r, tgt[r]) -= s;
                              });
}

#define VQW2V_INSTANTIATE_OPS(S)                                                                 \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> scale(const Tensor<S>&, S);                                                 \
  template Tensor<S> sum(const Tensor<S>&);                                                      \
  template Tensor<S> mean(const Tensor<S>&);                                                     \
  template Tensor<S> relu(const Tensor<S>&);                                                     \
  template Tensor<S> log_sigmoid(const Tensor<S>&);                                              \
  template Tensor<S> softmax(const Tensor<S>&);                                                  \
  template Tensor<S> dropout(const Tensor<S>&, double, Rng&, bool);                              \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                           \
  template Tensor<S> transpose(const Tensor<S>&);                                                \
  template Tensor<S> conv1d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index, Index); \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&, bool);                           \
  template Tensor<S> group_norm(const Tensor<S>&, Index, const Tensor<S>&, const Tensor<S>&,     \
                                double, NormSpan);                                               \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);   \
  template Tensor<S> stop_gradient(const Tensor<S>&);                                            \
  template Tensor<S> straight_through(const Tensor<S>&, const Tensor<S>&);                       \
  template Tensor<S> gather_rows(const Tensor<S>&, std::span<const Index>);                      \
  template Tensor<S> slice_rows(const Tensor<S>&, Index, Index);                                 \
  template Tensor<S> rowwise_dot(const Tensor<S>&, const Tensor<S>&);                            \
  template Tensor<S> slice_cols(const Tensor<S>&, Index, Index);                                 \
  template Tensor<S> concat_cols(const std::vector<Tensor<S>>&);                                  \
  template Tensor<S> group_mix(const Tensor<S>&, const Tensor<S>&, Index, bool);                 \
  template Tensor<S> softmax_cross_entropy(const Tensor<S>&, std::span<const Index>);

VQW2V_INSTANTIATE_OPS(float)
VQW2V_INSTANTIATE_OPS(double)

}  // namespace vqw2v
