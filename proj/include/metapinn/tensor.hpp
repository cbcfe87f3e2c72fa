#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "metapinn/errors.hpp"

namespace metapinn {

/// Dimension sizes, outermost first. Rank 0 is a scalar, rank 1 a vector,
/// rank 2 a row-major matrix.
using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense 64-bit float array. `grad`, when set, has the same shape and holds
/// the gradient of the most recent backward pass through this tensor.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::shared_ptr<Tensor> grad;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    auto n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }
  static Tensor full(Shape s, double v) {
    auto n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
  }
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor vector(std::initializer_list<double> vs) {
    return Tensor(Shape{static_cast<int>(vs.size())}, std::vector<double>(vs));
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(int i) { return data[static_cast<std::size_t>(i)]; }
  double at(int i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * cols() + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * cols() + j]; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

}  // namespace metapinn
