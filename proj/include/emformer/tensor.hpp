#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "emformer/errors.hpp"

namespace emformer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major array. The element type selects the precision mode
// (double by default, float for the 32-bit benchmark path).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : shape_{0} {}

  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), T{0}) {}

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor shape " + shape_to_string(shape_) + " holds " +
                       std::to_string(shape_numel(shape_)) +
                       " elements but data has " +
                       std::to_string(data_.size()));
    }
  }

  static BasicTensor matrix(std::size_t rows, std::size_t cols) {
    return BasicTensor(Shape{rows, cols});
  }

  static BasicTensor from_rows(
      std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged rows in from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return BasicTensor(Shape{r, c}, std::move(data));
  }

  static BasicTensor vector(std::initializer_list<T> values) {
    return BasicTensor(Shape{values.size()}, std::vector<T>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  // Extent of the last axis; rows() is the product of all leading axes.
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const {
    if (shape_.empty()) return 1;
    return shape_numel(Shape(shape_.begin(), shape_.end() - 1));
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  std::span<T> row(std::size_t r) {
    return std::span<T>(data_).subspan(r * cols(), cols());
  }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  BasicTensor reshape(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  // Rows [begin, end) of a matrix.
  BasicTensor slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows()) {
      throw ShapeError("slice_rows [" + std::to_string(begin) + ", " +
                       std::to_string(end) + ") out of range for " +
                       shape_to_string(shape_));
    }
    const std::size_t c = cols();
    return BasicTensor(
        Shape{end - begin, c},
        std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                       data_.begin() + static_cast<std::ptrdiff_t>(end * c)));
  }

  void append_rows(const BasicTensor& other) {
    if (rank() != 2 || other.rank() != 2 || other.cols() != cols()) {
      throw ShapeError("append_rows: " + shape_to_string(shape_) + " vs " +
                       shape_to_string(other.shape_));
    }
    data_.insert(data_.end(), other.data_.begin(), other.data_.end());
    shape_[0] += other.shape_[0];
  }

  // Keeps only the last n rows (no-op when there are fewer).
  void keep_last_rows(std::size_t n) {
    const std::size_t r = rows();
    if (r <= n) return;
    const std::size_t c = cols();
    data_.erase(data_.begin(),
                data_.begin() + static_cast<std::ptrdiff_t>((r - n) * c));
    shape_[0] = n;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

template <typename T>
BasicTensor<T> concat_rows(std::initializer_list<const BasicTensor<T>*> parts,
                           std::size_t cols) {
  BasicTensor<T> out = BasicTensor<T>::matrix(0, cols);
  for (const auto* p : parts) out.append_rows(*p);
  return out;
}

}  // namespace emformer
