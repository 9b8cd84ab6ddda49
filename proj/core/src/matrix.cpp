#include "lorascan/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace lorascan {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* out_row = &out.data[i * out.cols];
    const double* a_row = &a.data[i * a.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a_row[k];
      if (aik == 0.0) continue;
      const double* b_row = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
  return out;
}

double frobenius_norm(const Matrix& m) {
  // Scaled accumulation keeps the sum of squares away from under/overflow.
  double scale = 0.0;
  double ssq = 1.0;
  for (double v : m.data) {
    if (v == 0.0) continue;
    const double a = std::abs(v);
    if (scale < a) {
      ssq = 1.0 + ssq * (scale / a) * (scale / a);
      scale = a;
    } else {
      ssq += (a / scale) * (a / scale);
    }
  }
  return scale * std::sqrt(ssq);
}

Matrix thin_qr_r(const Matrix& m) {
  if (m.rows < m.cols) throw std::invalid_argument("thin_qr_r: requires rows >= cols");
  const std::size_t rows = m.rows, cols = m.cols;
  Matrix work = m;
  std::vector<double> v(rows);
  for (std::size_t k = 0; k < cols; ++k) {
    // Householder vector annihilating column k below the diagonal.
    double norm2 = 0.0;
    for (std::size_t i = k; i < rows; ++i) {
      const double x = work(i, k);
      norm2 += x * x;
    }
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) continue;
    const double x0 = work(k, k);
    const double alpha = x0 >= 0.0 ? -norm : norm;
    double vnorm2 = norm2 - 2.0 * alpha * x0 + alpha * alpha;
    if (vnorm2 == 0.0) continue;
    v[k] = x0 - alpha;
    for (std::size_t i = k + 1; i < rows; ++i) v[i] = work(i, k);
    work(k, k) = alpha;
    for (std::size_t i = k + 1; i < rows; ++i) work(i, k) = 0.0;
    const double beta = 2.0 / vnorm2;
    for (std::size_t j = k + 1; j < cols; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < rows; ++i) dot += v[i] * work(i, j);
      const double scale = beta * dot;
      for (std::size_t i = k; i < rows; ++i) work(i, j) -= scale * v[i];
    }
  }
  Matrix r(cols, cols);
  for (std::size_t i = 0; i < cols; ++i)
    for (std::size_t j = i; j < cols; ++j) r(i, j) = work(i, j);
  return r;
}

std::vector<double> jacobi_singular_values(const Matrix& m) {
  // One-sided Jacobi: rotate column pairs of a working copy until all pairs
  // are orthogonal; singular values are the final column norms.
  const std::size_t rows = m.rows, cols = m.cols;
  Matrix work = rows >= cols ? m : transpose(m);
  const std::size_t n = work.cols;
  const std::size_t ld = work.cols;
  auto col_dot = [&](std::size_t p, std::size_t q) {
    double s = 0.0;
    for (std::size_t i = 0; i < work.rows; ++i) s += work.data[i * ld + p] * work.data[i * ld + q];
    return s;
  };
  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 60;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double app = col_dot(p, p);
        const double aqq = col_dot(q, q);
        const double apq = col_dot(p, q);
        if (std::abs(apq) <= kTol * std::sqrt(app * aqq) || apq == 0.0) continue;
        converged = false;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = std::copysign(1.0, tau) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < work.rows; ++i) {
          const double xp = work.data[i * ld + p];
          const double xq = work.data[i * ld + q];
          work.data[i * ld + p] = c * xp - s * xq;
          work.data[i * ld + q] = s * xp + c * xq;
        }
      }
    }
    if (converged) break;
  }
  std::vector<double> sv(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < work.rows; ++i) {
      const double x = work.data[i * ld + j];
      s += x * x;
    }
    sv[j] = std::sqrt(s);
  }
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

}  // namespace lorascan
