#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace d2nn {

// Error taxonomy shared by every module. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DimensionError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};
class ContractError : public Error {
 public:
  using Error::Error;
};
class ParseError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};
class IntegrityError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << ']';
  return out.str();
}

/// Dense row-major array of doubles. Rank 0 is a scalar holding one value.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() : data(1, 0.0) {}
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_size(shape)) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                           shape_str(shape));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double item() const {
    if (data.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape));
    return data[0];
  }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * shape[1], shape[1]}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * shape[1], shape[1]}; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  // Rows exempt from weight decay and kept frozen (PAD row of embedding tables).
  std::vector<std::size_t> frozen_rows;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

}  // namespace d2nn
