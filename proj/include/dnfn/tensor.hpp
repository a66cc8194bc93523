#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dnfn/error.hpp"

namespace dnfn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape);

/// Dense row-major tensor. Most of the library treats a tensor as a matrix
/// of rows() x cols(), where cols() is the last extent.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{})
      : shape(std::move(s)), values(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (shape_size(shape) != values.size()) {
      throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                           std::to_string(values.size()) + " values");
    }
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  T* row(std::size_t r) { return values.data() + r * cols(); }
  const T* row(std::size_t r) const { return values.data() + r * cols(); }
  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }
  std::span<T> span() { return values; }
  std::span<const T> span() const { return values; }
};

/// Plain (non-recorded) softmax along one axis, stabilized by max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& v, std::size_t axis);

}  // namespace dnfn
