#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "modnet/tensor.hpp"

// Forward passes and their exact reverse-mode counterparts for every layer
// used in this repo. All functions are pure; backward functions accumulate
// (+=) into caller-provided gradient tensors so one value can feed several
// consumers. Pass nullptr to skip a gradient you do not need.

namespace modnet {

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

namespace detail {

// Patch matrix for stride-1 'same' cross-correlation: one row per
// (channel, ky, kx), one column per output pixel. Zero padding puts
// floor((k-1)/2) rows/cols before the first input element, the remainder
// after, so even kernels lean one pixel toward the bottom-right.
template <typename Scalar>
MatrixRM<Scalar> im2col(const TensorT<Scalar>& input, int kh, int kw) {
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;
  MatrixRM<Scalar> patches = MatrixRM<Scalar>::Zero(static_cast<std::int64_t>(C) * kh * kw,
                                                    static_cast<std::int64_t>(H) * W);
  for (int c = 0; c < C; ++c) {
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        const int row = (c * kh + dy) * kw + dx;
        const int x0 = std::max(0, pad_w - dx);          // first valid output x
        const int x1 = std::min(W, W + pad_w - dx);      // one past the last
        if (x0 >= x1) continue;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy - pad_h;
          if (sy < 0 || sy >= H) continue;
          const Scalar* src = input.data() + (static_cast<std::int64_t>(c) * H + sy) * W + (x0 + dx - pad_w);
          patches.row(row).segment(static_cast<std::int64_t>(y) * W + x0, x1 - x0) =
              Eigen::Map<const VectorX<Scalar>>(src, x1 - x0);
        }
      }
    }
  }
  return patches;
}

// Reverse of im2col: scatter-add patch-space gradients back onto the image.
template <typename Scalar>
void col2im_add(const MatrixRM<Scalar>& patch_grad, int kh, int kw, TensorT<Scalar>* grad_input) {
  const int C = grad_input->shape()[0], H = grad_input->shape()[1], W = grad_input->shape()[2];
  const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;
  for (int c = 0; c < C; ++c) {
    for (int dy = 0; dy < kh; ++dy) {
      for (int dx = 0; dx < kw; ++dx) {
        const int row = (c * kh + dy) * kw + dx;
        const int x0 = std::max(0, pad_w - dx);
        const int x1 = std::min(W, W + pad_w - dx);
        if (x0 >= x1) continue;
        for (int y = 0; y < H; ++y) {
          const int sy = y + dy - pad_h;
          if (sy < 0 || sy >= H) continue;
          Scalar* dst = grad_input->data() + (static_cast<std::int64_t>(c) * H + sy) * W + (x0 + dx - pad_w);
          Eigen::Map<VectorX<Scalar>>(dst, x1 - x0) +=
              patch_grad.row(row).segment(static_cast<std::int64_t>(y) * W + x0, x1 - x0);
        }
      }
    }
  }
}

template <typename Scalar>
void check_conv_shapes(const TensorT<Scalar>& input, const TensorT<Scalar>& kernels,
                       const TensorT<Scalar>& bias) {
  if (input.rank() != 3) throw ShapeError("conv2d input must be (C,H,W), got " + shape_str(input.shape()));
  if (kernels.rank() != 4)
    throw ShapeError("conv2d kernels must be (F,C,kh,kw), got " + shape_str(kernels.shape()));
  if (kernels.shape()[1] != input.shape()[0])
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) +
                     " vs kernels " + shape_str(kernels.shape()));
  if (bias.rank() != 1 || bias.shape()[0] != kernels.shape()[0])
    throw ShapeError("conv2d bias must be (F), got " + shape_str(bias.shape()));
}

}  // namespace detail

/// Stride-1 'same' cross-correlation: out[f] = bias[f] + sum_c input[c] * kernels[f,c].
template <typename Scalar>
TensorT<Scalar> conv2d(const TensorT<Scalar>& input, const TensorT<Scalar>& kernels,
                       const TensorT<Scalar>& bias) {
  detail::check_conv_shapes(input, kernels, bias);
  const int H = input.shape()[1], W = input.shape()[2];
  const int F = kernels.shape()[0];
  const int K = static_cast<int>(kernels.numel() / std::max<std::int64_t>(F, 1));

  TensorT<Scalar> out({F, H, W});
  if (out.numel() == 0) return out;
  MatrixRM<Scalar> patches = detail::im2col(input, kernels.shape()[2], kernels.shape()[3]);
  Eigen::Map<const MatrixRM<Scalar>> kmat(kernels.data(), F, K);
  Eigen::Map<MatrixRM<Scalar>> omat(out.data(), F, static_cast<std::int64_t>(H) * W);
  omat.noalias() = kmat * patches;
  omat.colwise() += Eigen::Map<const VectorX<Scalar>>(bias.data(), F);
  return out;
}

template <typename Scalar>
void conv2d_backward(const TensorT<Scalar>& input, const TensorT<Scalar>& kernels,
                     const TensorT<Scalar>& grad_out, TensorT<Scalar>* grad_input,
                     TensorT<Scalar>* grad_kernels, TensorT<Scalar>* grad_bias) {
  const int H = input.shape()[1], W = input.shape()[2];
  const int F = kernels.shape()[0], kh = kernels.shape()[2], kw = kernels.shape()[3];
  const int K = static_cast<int>(kernels.numel() / std::max<std::int64_t>(F, 1));
  Eigen::Map<const MatrixRM<Scalar>> gmat(grad_out.data(), F, static_cast<std::int64_t>(H) * W);

  if (grad_bias) Eigen::Map<VectorX<Scalar>>(grad_bias->data(), F) += gmat.rowwise().sum();
  if (grad_kernels) {
    MatrixRM<Scalar> patches = detail::im2col(input, kh, kw);
    Eigen::Map<MatrixRM<Scalar>> kgrad(grad_kernels->data(), F, K);
    kgrad.noalias() += gmat * patches.transpose();
  }
  if (grad_input) {
    Eigen::Map<const MatrixRM<Scalar>> kmat(kernels.data(), F, K);
    MatrixRM<Scalar> patch_grad = kmat.transpose() * gmat;
    detail::col2im_add(patch_grad, kh, kw, grad_input);
  }
}

/// Non-overlapping 2x2 maxima; odd trailing rows/cols use the truncated window.
template <typename Scalar>
TensorT<Scalar> maxpool2(const TensorT<Scalar>& input) {
  if (input.rank() != 3) throw ShapeError("maxpool2 input must be (C,H,W), got " + shape_str(input.shape()));
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  TensorT<Scalar> out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        Scalar best = input.at(c, 2 * oy, 2 * ox);
        for (int dy = 0; dy < 2 && 2 * oy + dy < H; ++dy)
          for (int dx = 0; dx < 2 && 2 * ox + dx < W; ++dx)
            best = std::max(best, input.at(c, 2 * oy + dy, 2 * ox + dx));
        out.at(c, oy, ox) = best;
      }
  return out;
}

// Gradient goes to the first maximal element in scan order, so ties break
// deterministically.
template <typename Scalar>
void maxpool2_backward(const TensorT<Scalar>& input, const TensorT<Scalar>& grad_out,
                       TensorT<Scalar>* grad_input) {
  if (!grad_input) return;
  const int C = input.shape()[0], H = input.shape()[1], W = input.shape()[2];
  const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        int by = 2 * oy, bx = 2 * ox;
        Scalar best = input.at(c, by, bx);
        for (int dy = 0; dy < 2 && 2 * oy + dy < H; ++dy)
          for (int dx = 0; dx < 2 && 2 * ox + dx < W; ++dx) {
            const Scalar v = input.at(c, 2 * oy + dy, 2 * ox + dx);
            if (v > best) {
              best = v;
              by = 2 * oy + dy;
              bx = 2 * ox + dx;
            }
          }
        grad_input->at(c, by, bx) += grad_out.at(c, oy, ox);
      }
}

/// out = weights . input + bias, weights stored row-major (m,n).
template <typename Scalar>
TensorT<Scalar> dense(const TensorT<Scalar>& input, const TensorT<Scalar>& weights,
                      const TensorT<Scalar>& bias) {
  if (input.rank() != 1) throw ShapeError("dense input must be flat, got " + shape_str(input.shape()));
  if (weights.rank() != 2 || weights.shape()[1] != input.shape()[0])
    throw ShapeError("dense weights " + shape_str(weights.shape()) + " do not accept input " +
                     shape_str(input.shape()));
  const int m = weights.shape()[0], n = weights.shape()[1];
  if (bias.rank() != 1 || bias.shape()[0] != m)
    throw ShapeError("dense bias must be (" + std::to_string(m) + "), got " + shape_str(bias.shape()));
  TensorT<Scalar> out({m});
  if (m == 0) return out;
  Eigen::Map<const MatrixRM<Scalar>> wmat(weights.data(), m, n);
  Eigen::Map<VectorX<Scalar>>(out.data(), m).noalias() =
      wmat * Eigen::Map<const VectorX<Scalar>>(input.data(), n) +
      Eigen::Map<const VectorX<Scalar>>(bias.data(), m);
  return out;
}

template <typename Scalar>
void dense_backward(const TensorT<Scalar>& input, const TensorT<Scalar>& weights,
                    const TensorT<Scalar>& grad_out, TensorT<Scalar>* grad_input,
                    TensorT<Scalar>* grad_weights, TensorT<Scalar>* grad_bias) {
  const int m = weights.shape()[0], n = weights.shape()[1];
  if (m == 0) return;
  Eigen::Map<const VectorX<Scalar>> g(grad_out.data(), m);
  if (grad_bias) Eigen::Map<VectorX<Scalar>>(grad_bias->data(), m) += g;
  if (grad_weights)
    Eigen::Map<MatrixRM<Scalar>>(grad_weights->data(), m, n).noalias() +=
        g * Eigen::Map<const VectorX<Scalar>>(input.data(), n).transpose();
  if (grad_input && n > 0)
    Eigen::Map<VectorX<Scalar>>(grad_input->data(), n).noalias() +=
        Eigen::Map<const MatrixRM<Scalar>>(weights.data(), m, n).transpose() * g;
}

template <typename Scalar>
TensorT<Scalar> relu(const TensorT<Scalar>& input) {
  TensorT<Scalar> out(input.shape());
  out.array() = input.array().max(Scalar(0));
  return out;
}

// Subgradient 0 at exactly zero.
template <typename Scalar>
void relu_backward(const TensorT<Scalar>& input, const TensorT<Scalar>& grad_out,
                   TensorT<Scalar>* grad_input) {
  if (!grad_input) return;
  grad_input->array() += (input.array() > Scalar(0)).select(grad_out.array(), Scalar(0));
}

inline Shape concat_shape(const Shape& a, const Shape& b, int axis) {
  if (a.size() != b.size())
    throw ShapeError("concat rank mismatch: " + shape_str(a) + " vs " + shape_str(b));
  if (axis < 0 || axis >= static_cast<int>(a.size()))
    throw ShapeError("concat axis " + std::to_string(axis) + " out of range for " + shape_str(a));
  Shape out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (static_cast<int>(i) == axis) {
      out[i] = a[i] + b[i];
    } else if (a[i] != b[i]) {
      throw ShapeError("concat extents differ off axis: " + shape_str(a) + " vs " + shape_str(b));
    }
  }
  return out;
}

/// Joined tensor; a's entries precede b's along the axis.
template <typename Scalar>
TensorT<Scalar> concat(const TensorT<Scalar>& a, const TensorT<Scalar>& b, int axis) {
  TensorT<Scalar> out(concat_shape(a.shape(), b.shape(), axis));
  std::int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape()[i];
  std::int64_t inner = 1;
  for (std::size_t i = axis + 1; i < a.shape().size(); ++i) inner *= a.shape()[i];
  const std::int64_t ablock = a.shape()[axis] * inner, bblock = b.shape()[axis] * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(a.data() + o * ablock, ablock, out.data() + o * (ablock + bblock));
    std::copy_n(b.data() + o * bblock, bblock, out.data() + o * (ablock + bblock) + ablock);
  }
  return out;
}

// Splits the upstream gradient back into the original extents, no overlap,
// no loss.
template <typename Scalar>
void concat_backward(const TensorT<Scalar>& grad_out, const Shape& a_shape, const Shape& b_shape,
                     int axis, TensorT<Scalar>* grad_a, TensorT<Scalar>* grad_b) {
  std::int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= a_shape[i];
  std::int64_t inner = 1;
  for (std::size_t i = axis + 1; i < a_shape.size(); ++i) inner *= a_shape[i];
  const std::int64_t ablock = a_shape[axis] * inner, bblock = b_shape[axis] * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    const Scalar* src = grad_out.data() + o * (ablock + bblock);
    if (grad_a)
      Eigen::Map<VectorX<Scalar>>(grad_a->data() + o * ablock, ablock) +=
          Eigen::Map<const VectorX<Scalar>>(src, ablock);
    if (grad_b)
      Eigen::Map<VectorX<Scalar>>(grad_b->data() + o * bblock, bblock) +=
          Eigen::Map<const VectorX<Scalar>>(src + ablock, bblock);
  }
}

/// Max-subtraction stabilized softmax; valid for any finite logits.
template <typename Scalar>
TensorT<Scalar> softmax(const TensorT<Scalar>& logits) {
  TensorT<Scalar> probs(logits.shape());
  const Scalar m = logits.array().maxCoeff();
  probs.array() = (logits.array() - m).exp();
  probs.array() /= probs.array().sum();
  return probs;
}

template <typename Scalar>
struct SoftmaxXent {
  Scalar loss;
  TensorT<Scalar> probs;
};

/// loss = -log softmax(logits)[label], computed in log space.
template <typename Scalar>
SoftmaxXent<Scalar> softmax_xent(const TensorT<Scalar>& logits, int label) {
  if (logits.rank() != 1) throw ShapeError("softmax_xent expects flat logits, got " + shape_str(logits.shape()));
  if (label < 0 || label >= logits.shape()[0])
    throw ContractError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(logits.shape()[0]) + " classes");
  const Scalar m = logits.array().maxCoeff();
  TensorT<Scalar> probs(logits.shape());
  probs.array() = (logits.array() - m).exp();
  const Scalar z = probs.array().sum();
  probs.array() /= z;
  const Scalar loss = -(logits[label] - m - std::log(z));
  return {loss, std::move(probs)};
}

template <typename Scalar>
void softmax_xent_backward(const TensorT<Scalar>& probs, int label, Scalar grad_loss,
                           TensorT<Scalar>* grad_logits) {
  if (!grad_logits) return;
  grad_logits->array() += grad_loss * probs.array();
  (*grad_logits)[label] -= grad_loss;
}

/// lambda * sum of squared activation entries, over all listed tensors.
template <typename Scalar>
Scalar activity_l2(const std::vector<const TensorT<Scalar>*>& activations, Scalar lambda) {
  Scalar sum = 0;
  for (const auto* a : activations) sum += a->array().square().sum();
  return lambda * sum;
}

template <typename Scalar>
void activity_l2_backward(const TensorT<Scalar>& activation, Scalar lambda, Scalar grad_loss,
                          TensorT<Scalar>* grad_activation) {
  if (!grad_activation) return;
  grad_activation->array() += grad_loss * Scalar(2) * lambda * activation.array();
}

}  // namespace modnet
