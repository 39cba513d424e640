#pragma once

#include "emformer/tensor.hpp"

namespace emformer {

// Matrix product; each output element sums over the inner axis left to right.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Normalizes every row of the last axis with max subtraction. Entries equal
// to -inf are allowed (they come out as exact zeros); NaN throws.
template <typename T>
BasicTensor<T> softmax_lastaxis(const BasicTensor<T>& x);

// Per-row normalization with biased variance, eps inside the square root.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> swish(const BasicTensor<T>& x);

// First half of the last axis gated by the sigmoid of the second half.
template <typename T>
BasicTensor<T> glu_lastaxis(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);

template <typename T>
T sigmoid(T x);

}  // namespace emformer
