#include "emformer/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace emformer {

namespace {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b,
                        const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: cannot multiply " + shape_to_string(a.shape()) +
                     " by " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0];
  const std::size_t k = a.shape()[1];
  const std::size_t n = b.shape()[1];
  BasicTensor<T> out = BasicTensor<T>::matrix(m, n);
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* po = out.data().data();
  // i-k-j order: every out(i, j) still accumulates over k in increasing order.
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_lastaxis(const BasicTensor<T>& x) {
  const std::size_t n = x.cols();
  if (n == 0) throw ShapeError("softmax_lastaxis: last axis is empty");
  BasicTensor<T> out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    T max_v = -std::numeric_limits<T>::infinity();
    for (T v : row) {
      if (std::isnan(v)) throw NumericError("softmax_lastaxis: NaN input");
      max_v = std::max(max_v, v);
    }
    if (max_v == -std::numeric_limits<T>::infinity()) {
      throw NumericError("softmax_lastaxis: row " + std::to_string(r) +
                         " has no finite entry");
    }
    T sum = 0;
    for (T& v : row) {
      v = std::exp(v - max_v);
      sum += v;
    }
    for (T& v : row) v /= sum;
  }
  return out;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps) {
  const std::size_t d = x.cols();
  if (d == 0) throw ShapeError("layer_norm: last axis is empty");
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias " + shape_to_string(gain.shape()) +
                     "/" + shape_to_string(bias.shape()) + " vs input " +
                     shape_to_string(x.shape()));
  }
  BasicTensor<T> out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = out.row(r);
    T mean = 0;
    for (T v : row) mean += v;
    mean /= static_cast<T>(d);
    T var = 0;
    for (T v : row) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T denom = std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      row[j] = (row[j] - mean) / denom * gain[j] + bias[j];
    }
  }
  return out;
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (T& v : out.data()) v = v > T{0} ? v : T{0};
  return out;
}

template <typename T>
BasicTensor<T> swish(const BasicTensor<T>& x) {
  BasicTensor<T> out = x;
  for (T& v : out.data()) v = v * sigmoid(v);
  return out;
}

template <typename T>
BasicTensor<T> glu_lastaxis(const BasicTensor<T>& x) {
  const std::size_t two_d = x.cols();
  if (two_d % 2 != 0) {
    throw ShapeError("glu_lastaxis: last extent must be even, got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t d = two_d / 2;
  Shape shape = x.shape();
  shape.back() = d;
  BasicTensor<T> out(shape);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    auto o = out.row(r);
    for (std::size_t j = 0; j < d; ++j) o[j] = in[j] * sigmoid(in[d + j]);
  }
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  BasicTensor<T> out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  BasicTensor<T> out = a;
  for (T& v : out.data()) v *= factor;
  return out;
}

#define EMFORMER_INSTANTIATE(T)                                               \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> softmax_lastaxis(const BasicTensor<T>&);            \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&,                   \
                                     const BasicTensor<T>&,                   \
                                     const BasicTensor<T>&, T);               \
  template BasicTensor<T> relu(const BasicTensor<T>&);                        \
  template BasicTensor<T> swish(const BasicTensor<T>&);                       \
  template BasicTensor<T> glu_lastaxis(const BasicTensor<T>&);                \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);  \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                    \
  template T sigmoid(T);

EMFORMER_INSTANTIATE(double)
EMFORMER_INSTANTIATE(float)

#undef EMFORMER_INSTANTIATE

}  // namespace emformer
