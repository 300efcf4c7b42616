#include "fsre/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

#include "fsre/kernels.hpp"

namespace fsre {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  Matrix m;
  for (const auto& r : rows) m.append_row(r);
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Matrix::append_row(std::span<const double> r) {
  if (rows_ == 0 && data_.empty()) cols_ = r.size();
  if (r.size() != cols_) throw std::invalid_argument("Matrix::append_row: width mismatch");
  data_.insert(data_.end(), r.begin(), r.end());
  ++rows_;
}

namespace {

Matrix transposed(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  }
  return t;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix c(a.rows(), b.cols());
  kernels::active().gemm_acc(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols()) {
    throw std::invalid_argument("matmul_tn_acc: shape mismatch");
  }
  const Matrix at = transposed(a);
  kernels::active().gemm_acc(at.data(), b.data(), c.data(), at.rows(), at.cols(), b.cols());
}

void matmul_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows()) {
    throw std::invalid_argument("matmul_nt_acc: shape mismatch");
  }
  const Matrix bt = transposed(b);
  kernels::active().gemm_acc(a.data(), bt.data(), c.data(), a.rows(), a.cols(), bt.cols());
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.rows());
  matmul_nt_acc(a, b, c);
  return c;
}

Vector vecmat(std::span<const double> x, const Matrix& m) {
  if (x.size() != m.rows()) throw std::invalid_argument("vecmat: dimension mismatch");
  Vector out(m.cols());
  kernels::active().vecmat(x.data(), m.data(), m.rows(), m.cols(), out.data());
  return out;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  if (x.size() != m.cols()) throw std::invalid_argument("matvec: dimension mismatch");
  Vector out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = kernels::dot(m.row(i), x);
  return out;
}

void outer_acc(std::span<const double> x, std::span<const double> y, Matrix& m) {
  assert(m.rows() == x.size() && m.cols() == y.size());
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != 0.0) k.axpy(x[i], y.data(), m.row(i).data(), y.size());
  }
}

void add_inplace(Matrix& y, const Matrix& x) {
  if (y.rows() != x.rows() || y.cols() != x.cols()) throw std::invalid_argument("add_inplace: shape mismatch");
  kernels::axpy(1.0, x.values(), y.values());
}

void add_inplace(std::span<double> y, std::span<const double> x) {
  if (y.size() != x.size()) throw std::invalid_argument("add_inplace: length mismatch");
  kernels::axpy(1.0, x, y);
}

void softmax_inplace(std::span<double> x) {
  if (x.empty()) return;
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (auto& v : x) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : x) v /= sum;
}

Vector softmax(std::span<const double> x) {
  Vector out(x.begin(), x.end());
  softmax_inplace(out);
  return out;
}

bool all_finite(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace fsre
