#include "msar/numerics/complex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "msar/error.hpp"
#include "msar/numerics/tensor.hpp"

namespace msar::numerics {

ComplexMatrix ComplexMatrix::identity(std::size_t n) {
  ComplexMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Complex ComplexMatrix::trace() const {
  Complex t = 0.0;
  for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) t += (*this)(i, i);
  return t;
}

ComplexMatrix ComplexMatrix::adjoint() const {
  ComplexMatrix out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = std::conj((*this)(r, c));
  }
  return out;
}

double ComplexMatrix::frobenius_norm() const {
  double s = 0.0;
  for (const auto& v : data_) s += std::norm(v);
  return std::sqrt(s);
}

double ComplexMatrix::max_abs() const {
  double m = 0.0;
  for (const auto& v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool ComplexMatrix::is_hermitian(double tol) const {
  if (rows_ != cols_) return false;
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = r; c < cols_; ++c) {
      if (std::abs((*this)(r, c) - std::conj((*this)(c, r))) > tol) return false;
    }
  }
  return true;
}

ComplexMatrix& ComplexMatrix::operator+=(const ComplexMatrix& other) {
  if (other.rows_ != rows_ || other.cols_ != cols_) throw ShapeError("complex matrix add: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

ComplexMatrix& ComplexMatrix::operator*=(Complex s) {
  for (auto& v : data_) v *= s;
  return *this;
}

ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("complex matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  ComplexMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const Complex aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b) {
  a += b;
  return a;
}

ComplexMatrix operator-(const ComplexMatrix& a, const ComplexMatrix& b) {
  ComplexMatrix out = a;
  out += ComplexMatrix(b) *= Complex(-1.0);
  return out;
}

ComplexMatrix lu_solve(const ComplexMatrix& m, const ComplexMatrix& b, double* min_pivot) {
  const std::size_t n = m.rows();
  if (m.cols() != n) throw ShapeError("lu_solve: matrix is not square");
  if (b.rows() != n) throw ShapeError("lu_solve: right-hand side has wrong row count");
  const std::size_t k = b.cols();
  ComplexMatrix a = m;
  ComplexMatrix x = b;
  double smallest = std::numeric_limits<double>::infinity();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    double best = std::abs(a(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::abs(a(r, col));
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    smallest = std::min(smallest, best);
    if (best == 0.0) throw SingularMatrixError("lu_solve: matrix is singular");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
      for (std::size_t c = 0; c < k; ++c) std::swap(x(col, c), x(piv, c));
    }
    const Complex inv = 1.0 / a(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const Complex f = a(r, col) * inv;
      if (f == Complex(0.0)) continue;
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      for (std::size_t c = 0; c < k; ++c) x(r, c) -= f * x(col, c);
    }
  }
  for (std::size_t ri = n; ri-- > 0;) {
    for (std::size_t c = 0; c < k; ++c) {
      Complex s = x(ri, c);
      for (std::size_t j = ri + 1; j < n; ++j) s -= a(ri, j) * x(j, c);
      x(ri, c) = s / a(ri, ri);
    }
  }
  if (min_pivot) *min_pivot = smallest;
  return x;
}

namespace {

double min_pivot_of(const ComplexMatrix& m) {
  // Elimination on the matrix alone; cheaper than solving and exact enough
  // for a threshold test.
  const std::size_t n = m.rows();
  ComplexMatrix a = m;
  double smallest = std::numeric_limits<double>::infinity();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    double best = std::abs(a(col, col));
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > best) {
        best = std::abs(a(r, col));
        piv = r;
      }
    }
    smallest = std::min(smallest, best);
    if (best == 0.0) return 0.0;
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(col, c), a(piv, c));
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const Complex f = a(r, col) / a(col, col);
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
    }
  }
  return smallest;
}

}  // namespace

ComplexMatrix loaded_if_needed(const ComplexMatrix& m, SolveInfo* info) {
  const std::size_t n = m.rows();
  if (m.cols() != n) throw ShapeError("hermitian_solve: matrix is not square");
  const Complex tr = m.trace();
  if (std::abs(tr) < std::numeric_limits<double>::min()) {
    throw SingularMatrixError("hermitian_solve: matrix trace vanishes (all-zero matrix)");
  }
  const double pivot = min_pivot_of(m);
  SolveInfo local;
  local.min_pivot = pivot;
  ComplexMatrix out = m;
  if (pivot < kPivotThreshold * std::abs(tr)) {
    const double load = kDiagonalLoading * std::abs(tr) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) += load;
    local.loaded = true;
    local.min_pivot = min_pivot_of(out);
  }
  if (info) *info = local;
  return out;
}

ComplexMatrix hermitian_solve(const ComplexMatrix& m, const ComplexMatrix& b, SolveInfo* info) {
  const ComplexMatrix a = loaded_if_needed(m, info);
  return lu_solve(a, b);
}

}  // namespace msar::numerics
