#include "doctest.h"

#include <stdexcept>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fsre/fusion.hpp"

using namespace fsre;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.values()) v = g(rng);
  return m;
}

FusionParams random_params(std::size_t dc, std::size_t d, std::mt19937_64& rng) {
  return {random_matrix(dc, d, rng), random_matrix(d, d, rng), random_matrix(d, d, rng), random_matrix(d, d, rng)};
}

// fused_i = sum_j softmax_j(q_i . k_j / sqrt(d)) v_j, written as explicit loops.
Matrix oracle_fuse(const Matrix& x, const FusionParams& p) {
  const std::size_t n = x.rows(), d = x.cols();
  const auto proj = [&](const Matrix& w, std::size_t i, std::size_t c) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x(i, j) * w(j, c);
    return s;
  };
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sim(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += proj(p.wq, i, c) * proj(p.wk, j, c);
      sim[j] = s / std::sqrt(static_cast<double>(d));
    }
    const double mx = *std::max_element(sim.begin(), sim.end());
    double z = 0.0;
    for (auto& s : sim) z += (s = std::exp(s - mx));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) out(i, c) += sim[j] / z * proj(p.wv, j, c);
  }
  return out;
}

}  // namespace

TEST_CASE("append_concepts") {
  std::mt19937_64 rng(1);
  const Matrix tokens = random_matrix(11, 4, rng);
  auto p = random_params(4, 4, rng);
  const Vector h{1, 2, 3, 4}, t{0, 1, 0, 1};
  CHECK(append_concepts(tokens, h, t, p).rows() == 13);
  CHECK(append_concepts(tokens, std::nullopt, std::nullopt, p) == tokens);

  p.adapter = Matrix::identity(4);
  const auto seq = append_concepts(tokens, h, std::nullopt, p);
  REQUIRE(seq.rows() == 12);
  CHECK(Vector(seq.row(11).begin(), seq.row(11).end()) == h);
  const auto ordered = append_concepts(tokens, h, t, p);
  CHECK(Vector(ordered.row(12).begin(), ordered.row(12).end()) == t);
}

TEST_CASE("fuse examples") {
  std::mt19937_64 rng(2);
  auto p = random_params(4, 4, rng);
  p.wv = Matrix::identity(4);
  const Matrix one = random_matrix(1, 4, rng);
  CHECK(fuse(one, p, 1).states == one);

  const Matrix same = Matrix::from_rows({{1, 2, 3, 4}, {1, 2, 3, 4}, {1, 2, 3, 4}});
  const auto f = fuse(same, p, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 4; ++c) CHECK(f.states(i, c) == doctest::Approx(same(0, c)));

  const auto p2 = random_params(4, 4, rng);
  const Matrix x = random_matrix(3, 4, rng);
  const auto got = fuse(x, p2, 2);
  const auto ref = oracle_fuse(x, p2);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got.states.data()[i] - ref.data()[i]) <= 1e-9);
  CHECK(got.concept_slots == std::vector<std::size_t>{2});
}

TEST_CASE("fuse properties") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_params(4, 4, rng);
    const Matrix x = random_matrix(6, 4, rng);
    const auto f = fuse(x, p, 6);
    for (std::size_t i = 0; i < 6; ++i) {
      const auto row = f.attention[0].row(i);
      CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-9);
    }

    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix px(6, 4);
    for (std::size_t i = 0; i < 6; ++i) std::copy_n(x.row(perm[i]).begin(), 4, px.row(i).begin());
    const auto pf = fuse(px, p, 6);
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t c = 0; c < 4; ++c) CHECK(pf.states(i, c) == doctest::Approx(f.states(perm[i], c)).epsilon(1e-12));
  }

  // Multi-head output: each head is the oracle on its column block.
  const auto p = random_params(4, 4, rng);
  const Matrix x = random_matrix(5, 4, rng);
  const auto two = fuse(x, p, 5, 2);
  CHECK(two.attention.size() == 2);
  CHECK_THROWS(fuse(x, p, 5, 3));
}

TEST_CASE("pooling") {
  const Matrix m = Matrix::from_rows({{1, 2}, {3, 4}, {5, 9}});
  FusedSequence f{m, {}, {}};
  CHECK(pool_fused(f, Pooling::cls) == Vector{1, 2});
  CHECK(pool_fused(f, Pooling::mean) == Vector{3, 5});
  const std::vector<std::uint8_t> keep{1, 0, 1};
  CHECK(pool_fused(f, Pooling::mean, keep) == Vector{3, 5.5});
  const Matrix same = Matrix::from_rows({{2, 7}, {2, 7}});
  CHECK(pool_rows(same, Pooling::mean) == Vector{2, 7});

  // On a random fixture the two poolings differ; mean equals the column averages.
  std::mt19937_64 rng(4);
  const Matrix r = random_matrix(4, 3, rng);
  const auto mean = pool_rows(r, Pooling::mean);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(mean[c] == doctest::Approx((r(0, c) + r(1, c) + r(2, c) + r(3, c)) / 4));
  }
  CHECK(mean != pool_rows(r, Pooling::cls));
}

TEST_CASE("fusion gradients match finite differences") {
  std::mt19937_64 rng(5);
  for (std::size_t heads : {1u, 2u}) {
    auto p = random_params(4, 4, rng);
    const Matrix tokens = random_matrix(3, 4, rng);
    const std::vector<Vector> concepts{{0.5, -1, 2, 0.25}, {1, 1, -1, 0}};
    const Matrix r = random_matrix(5, 4, rng);
    const auto loss = [&] {
      const auto f = fuse(append_concepts(tokens, concepts, p), p, 3, heads);
      double s = 0.0;
      for (std::size_t i = 0; i < r.size(); ++i) s += r.data()[i] * f.states.data()[i];
      return s;
    };
    FusionTrace tr;
    fuse(append_concepts(tokens, concepts, p), p, 3, heads, tr);
    auto grads = FusionParams::zeros(4, 4);
    const Matrix d_seq = fuse_backward(tr, p, r, grads);
    std::vector<Vector> d_concepts;
    append_concepts_backward(d_seq, 3, concepts, p, grads, &d_concepts);

    const double h = 1e-6;
    auto params = p.tensors();
    auto an = grads.tensors();
    for (std::size_t t = 0; t < params.size(); ++t) {
      CAPTURE(params[t].first);
      auto vals = params[t].second->values();
      const auto ga = an[t].second->values();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double saved = vals[i];
        vals[i] = saved + h;
        const double up = loss();
        vals[i] = saved - h;
        const double down = loss();
        vals[i] = saved;
        const double num = (up - down) / (2 * h);
        CHECK(std::abs(num - ga[i]) / std::max({std::abs(num), std::abs(ga[i]), 1e-6}) <= 1e-4);
      }
    }
  }
}
