#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace msar::numerics {

using Complex = std::complex<double>;

// Small dense complex matrix, row-major.
class ComplexMatrix {
 public:
  ComplexMatrix() = default;
  ComplexMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

  static ComplexMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  Complex& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const Complex& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::vector<Complex>& data() { return data_; }
  const std::vector<Complex>& data() const { return data_; }

  Complex trace() const;
  ComplexMatrix adjoint() const;
  double frobenius_norm() const;
  double max_abs() const;
  bool is_hermitian(double tol = 1e-12) const;

  ComplexMatrix& operator+=(const ComplexMatrix& other);
  ComplexMatrix& operator*=(Complex s);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Complex> data_;
};

ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b);
ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b);
ComplexMatrix operator-(const ComplexMatrix& a, const ComplexMatrix& b);

struct SolveInfo {
  bool loaded = false;       // diagonal loading was applied
  double min_pivot = 0.0;    // smallest pivot magnitude of the accepted factorisation
};

// Gaussian elimination with partial pivoting for a general square system.
// Throws SingularMatrixError on an exactly zero pivot.
ComplexMatrix lu_solve(const ComplexMatrix& m, const ComplexMatrix& b, double* min_pivot = nullptr);

// Diagonal loading constant used when a Hermitian system is near singular.
inline constexpr double kDiagonalLoading = 1e-10;
// Relative pivot threshold (against |trace|) that triggers loading.
inline constexpr double kPivotThreshold = 1e-12;

// Solves m x = b for Hermitian m. When the smallest pivot falls below
// kPivotThreshold * |trace(m)|, retries with m + kDiagonalLoading * trace(m)/C * I.
// Throws SingularMatrixError when trace(m) vanishes.
ComplexMatrix hermitian_solve(const ComplexMatrix& m, const ComplexMatrix& b, SolveInfo* info = nullptr);

// Adds the loading term used by hermitian_solve when `m` needs it; returns the
// matrix actually solved against.
ComplexMatrix loaded_if_needed(const ComplexMatrix& m, SolveInfo* info = nullptr);

}  // namespace msar::numerics
