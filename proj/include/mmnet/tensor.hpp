#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "mmnet/errors.hpp"

namespace mmnet {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

/// Dense row-major array. The last dimension is the fastest-varying one,
/// so an H x W x C map and an (H*W) x C matrix share the same layout.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(check(shape), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<int64_t>(data.size()) != check(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  /// Dimension by index; negative indices count from the back.
  int dim(int i) const { return shape.at(i < 0 ? shape.size() + i : i); }

  T& operator[](int64_t i) { return data[i]; }
  const T& operator[](int64_t i) const { return data[i]; }

  T& at(int r, int c) { return data[static_cast<int64_t>(r) * shape.back() + c]; }
  const T& at(int r, int c) const { return data[static_cast<int64_t>(r) * shape.back() + c]; }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }

 private:
  static int64_t check(const Shape& s) {
    for (int d : s) {
      if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    }
    return shape_numel(s);
  }
};

template <typename T>
bool all_finite(const Tensor<T>& t);

}  // namespace mmnet
