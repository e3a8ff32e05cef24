#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mvc/tape.hpp"
#include "mvc/tensor.hpp"

// Differentiable ops. Each returns a fresh tensor and, when the tape is
// recording and an input requires a gradient, appends its backward rule.
// Broadcasting is limited to bias-add (linear) and scalar scaling.
namespace mvc::ops {

// Cross-correlation (no kernel flip). x:[N,C,H,W], w:[F,C,kh,kw] -> [N,F,H',W'].
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, std::size_t stride,
                 std::size_t pad);

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);

// x:[N,in], w:[out,in], bias:[out] (may be undefined) -> [N,out].
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Non-overlapping window average (kernel == stride == size).
template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& x, std::size_t size);

// [N,C,H,W] -> [N,C]
template <typename T>
Tensor<T> global_avg_pool(Tape<T>& tape, const Tensor<T>& x);

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel normalization over (N,H,W). In training mode the running
// statistics are updated in place by exponential moving average (running
// variance uses the unbiased batch variance); eval mode normalizes with them.
template <typename T>
Tensor<T> batch_norm2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                       const BatchNormOptions& opts);

// x / ||x||_2 along `axis`; throws DegenerateInputError when a norm is below 1e-12.
template <typename T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& x, std::size_t axis);

// Mean over the batch of -log softmax(logits)[target]. logits:[N,C].
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                                std::span<const std::size_t> targets);

// Mean over all N*C entries of the binary cross-entropy of sigmoid(logits)
// against a multi-hot target of the same shape.
template <typename T>
Tensor<T> sigmoid_binary_cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                                       const Tensor<T>& targets);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T s);
template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& parts, std::size_t axis);

template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t begin,
                std::size_t length);

template <typename T>
std::vector<Tensor<T>> split(Tape<T>& tape, const Tensor<T>& x, std::size_t axis,
                             std::span<const std::size_t> sizes);

}  // namespace mvc::ops
