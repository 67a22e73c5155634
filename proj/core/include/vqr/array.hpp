#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqr {

// Dense row-major array of 64-bit floats. Rank 1 or 2 in practice; a scalar
// result is represented as shape {1}.
struct DenseArray {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  DenseArray() = default;
  DenseArray(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel() != data.size())
      throw std::invalid_argument("DenseArray: shape/data size mismatch");
  }

  static DenseArray scalar(double v) { return DenseArray({1}, {v}); }
  static DenseArray vector(std::vector<double> d) {
    std::size_t n = d.size();
    return DenseArray({n}, std::move(d));
  }
  static DenseArray zeros(std::vector<std::size_t> s) {
    DenseArray a;
    a.shape = std::move(s);
    a.data.assign(a.numel(), 0.0);
    return a;
  }
  static DenseArray matrix(std::size_t rows, std::size_t cols,
                           std::vector<double> d) {
    return DenseArray({rows, cols}, std::move(d));
  }

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return numel() == 1; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  // rank-2 access
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  bool same_shape(const DenseArray& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

}  // namespace vqr
