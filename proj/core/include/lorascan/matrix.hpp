#pragma once

#include <cstddef>
#include <vector>

namespace lorascan {

// Dense row-major matrix of doubles. All adapter numerics run in 64-bit
// floats regardless of the tensor storage dtype.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool empty() const { return rows == 0 || cols == 0; }
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
double frobenius_norm(const Matrix& m);

// Upper-triangular R factor (n x n) of the thin Householder QR of an
// m x n matrix with m >= n. Q is never accumulated.
Matrix thin_qr_r(const Matrix& m);

// Singular values of a general small matrix, descending, via one-sided
// Jacobi orthogonalization of the columns. Intended for the r x r cores
// that the reduced LoRA path produces; cost grows cubically.
std::vector<double> jacobi_singular_values(const Matrix& m);

}  // namespace lorascan
