#include "doctest.h"

#include <stdexcept>
#include <cmath>
#include <random>

#include "fsre/tensor.hpp"

using namespace fsre;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

double naive(const Matrix& a, const Matrix& b, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
  return s;
}

}  // namespace

TEST_CASE("matmul variants against triple loops") {
  std::mt19937_64 rng(3);
  const Matrix a = random_matrix(4, 7, rng);
  const Matrix b = random_matrix(7, 5, rng);
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(c(i, j) == doctest::Approx(naive(a, b, i, j)).epsilon(1e-12));
  }

  const Matrix g = random_matrix(4, 5, rng);
  Matrix tn(7, 5, 1.0);
  matmul_tn_acc(a, g, tn);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 1.0;
      for (std::size_t p = 0; p < 4; ++p) s += a(p, i) * g(p, j);
      CHECK(tn(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  }

  const Matrix nt = matmul_nt(g, b);  // 4x5 * (7x5)^T
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 7; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < 5; ++p) s += g(i, p) * b(j, p);
      CHECK(nt(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("softmax") {
  const auto s = softmax(Vector{2.0, 0.0});
  CHECK(s[0] == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 1.0)));
  CHECK(s[0] == doctest::Approx(0.8808).epsilon(1e-4));
  CHECK(s[1] == doctest::Approx(0.1192).epsilon(1e-3));

  // large inputs stay finite
  const auto big = softmax(Vector{1000.0, 999.0});
  CHECK(all_finite(big));
  CHECK(big[0] + big[1] == doctest::Approx(1.0));

  Vector empty;
  softmax_inplace(empty);
  CHECK(empty.empty());
}

TEST_CASE("matrix helpers") {
  Matrix m = Matrix::from_rows({{1, 2}, {3, 4}});
  CHECK(m.rows() == 2);
  CHECK(m(1, 0) == 3);
  CHECK_THROWS_AS(m.append_row(Vector{1.0}), std::invalid_argument);
  CHECK(matmul(m, Matrix::identity(2)) == m);
  const auto v = vecmat(Vector{1, 1}, m);
  CHECK(v == Vector{4, 6});
  const auto w = matvec(m, Vector{1, 1});
  CHECK(w == Vector{3, 7});
  Matrix o(2, 2);
  outer_acc(Vector{1, 2}, Vector{3, 4}, o);
  CHECK(o == Matrix::from_rows({{3, 4}, {6, 8}}));
  CHECK_FALSE(all_finite(Vector{1.0, NAN}));
}
