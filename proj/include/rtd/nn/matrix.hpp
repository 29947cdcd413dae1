#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rtd::nn {

// Dense row-major matrix of activations. Activations and gradients are kept in
// 64-bit precision; parameters are stored as 32-bit floats (see Parameter).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool empty() const { return data.empty(); }
  bool operator==(const Matrix&) const = default;
};

}  // namespace rtd::nn
