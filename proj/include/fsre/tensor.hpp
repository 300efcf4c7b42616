#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fsre {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  // Appends a row; cols() must match (or the matrix must be empty).
  void append_row(std::span<const double> r);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C += A^T * B
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);
// C += A * B^T
void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c);
// A * B^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);

// x * M for a row vector x.
Vector vecmat(std::span<const double> x, const Matrix& m);
// M * x for a column vector x.
Vector matvec(const Matrix& m, std::span<const double> x);
// M += x^T y (outer product)
void outer_acc(std::span<const double> x, std::span<const double> y, Matrix& m);

void add_inplace(Matrix& y, const Matrix& x);
void add_inplace(std::span<double> y, std::span<const double> x);

// Numerically stable in-place softmax; empty input is left untouched.
void softmax_inplace(std::span<double> x);
Vector softmax(std::span<const double> x);

bool all_finite(std::span<const double> x);

}  // namespace fsre
