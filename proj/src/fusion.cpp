#include "fsre/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fsre/kernels.hpp"

namespace fsre {

FusionParams FusionParams::zeros(std::size_t concept_dim, std::size_t dim) {
  if (concept_dim == 0 || dim == 0) throw std::invalid_argument("fusion dimensions must be positive");
  return {Matrix(concept_dim, dim), Matrix(dim, dim), Matrix(dim, dim), Matrix(dim, dim)};
}

namespace {

Matrix columns(const Matrix& m, std::size_t off, std::size_t width) {
  if (off == 0 && width == m.cols()) return m;
  Matrix out(m.rows(), width);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto src = m.row(i).subspan(off, width);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void set_columns(Matrix& m, std::size_t off, const Matrix& block) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto src = block.row(i);
    std::copy(src.begin(), src.end(), m.row(i).begin() + static_cast<std::ptrdiff_t>(off));
  }
}

}  // namespace

FusionParams FusionParams::init(std::size_t concept_dim, std::size_t dim, Rng& rng) {
  auto p = zeros(concept_dim, dim);
  std::normal_distribution<double> a(0.0, 1.0 / std::sqrt(static_cast<double>(concept_dim)));
  std::normal_distribution<double> w(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (auto& v : p.adapter.values()) v = a(rng);
  for (auto* m : {&p.wq, &p.wv}) {
    for (auto& v : m->values()) v = w(rng);
  }
  p.wk = p.wq;
  return p;
}

std::vector<std::pair<std::string, Matrix*>> FusionParams::tensors() {
  return {{"fusion.adapter", &adapter}, {"fusion.wq", &wq}, {"fusion.wk", &wk}, {"fusion.wv", &wv}};
}

Matrix append_concepts(const Matrix& token_states, std::span<const Vector> concept_vectors,
                       const FusionParams& params) {
  Matrix seq = token_states;
  for (const auto& c : concept_vectors) seq.append_row(vecmat(c, params.adapter));
  return seq;
}

Matrix append_concepts(const Matrix& token_states, const std::optional<Vector>& head_vec,
                       const std::optional<Vector>& tail_vec, const FusionParams& params) {
  std::vector<Vector> present;
  if (head_vec) present.push_back(*head_vec);
  if (tail_vec) present.push_back(*tail_vec);
  return append_concepts(token_states, present, params);
}

FusedSequence fuse(const Matrix& seq, const FusionParams& params, std::size_t concept_begin, std::size_t heads) {
  FusionTrace trace;
  return fuse(seq, params, concept_begin, heads, trace);
}

FusedSequence fuse(const Matrix& seq, const FusionParams& params, std::size_t concept_begin, std::size_t heads,
                   FusionTrace& tr) {
  const std::size_t n = seq.rows();
  const std::size_t d = params.dim();
  if (seq.cols() != d) throw std::invalid_argument("fuse: sequence width does not match fusion params");
  if (heads == 0 || d % heads != 0) throw std::invalid_argument("fuse: head count must divide the model dim");
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  tr.heads = heads;
  tr.input = seq;
  tr.q = matmul(seq, params.wq);
  tr.k = matmul(seq, params.wk);
  tr.v = matmul(seq, params.wv);
  tr.attention.assign(heads, Matrix(n, n));

  FusedSequence out;
  out.states = Matrix(n, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    auto& attn = tr.attention[h];
    attn = matmul_nt(columns(tr.q, off, dh), columns(tr.k, off, dh));
    for (std::size_t i = 0; i < n; ++i) {
      auto row = attn.row(i);
      kernels::scale(inv_sqrt, row);
      softmax_inplace(row);
    }
    set_columns(out.states, off, matmul(attn, columns(tr.v, off, dh)));
  }
  for (std::size_t i = std::min(concept_begin, n); i < n; ++i) out.concept_slots.push_back(i);
  out.attention = tr.attention;
  return out;
}

Matrix fuse_backward(const FusionTrace& tr, const FusionParams& params, const Matrix& d_states, FusionParams& grads) {
  const std::size_t n = tr.input.rows();
  const std::size_t d = params.dim();
  const std::size_t dh = d / tr.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix d_q(n, d), d_k(n, d), d_v(n, d);
  for (std::size_t h = 0; h < tr.heads; ++h) {
    const auto& attn = tr.attention[h];
    const std::size_t off = h * dh;
    const Matrix g = columns(d_states, off, dh);
    const Matrix d_attn = matmul_nt(g, columns(tr.v, off, dh));
    Matrix d_vh(n, dh);
    matmul_tn_acc(attn, g, d_vh);
    set_columns(d_v, off, d_vh);

    Matrix d_scores(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = attn.row(i);
      const auto ga = d_attn.row(i);
      const double inner = kernels::dot(a, ga);
      for (std::size_t j = 0; j < n; ++j) d_scores(i, j) = a[j] * (ga[j] - inner) * inv_sqrt;
    }
    set_columns(d_q, off, matmul(d_scores, columns(tr.k, off, dh)));
    Matrix d_kh(n, dh);
    matmul_tn_acc(d_scores, columns(tr.q, off, dh), d_kh);
    set_columns(d_k, off, d_kh);
  }
  matmul_tn_acc(tr.input, d_q, grads.wq);
  matmul_tn_acc(tr.input, d_k, grads.wk);
  matmul_tn_acc(tr.input, d_v, grads.wv);
  Matrix d_seq = matmul_nt(d_q, params.wq);
  matmul_nt_acc(d_k, params.wk, d_seq);
  matmul_nt_acc(d_v, params.wv, d_seq);
  return d_seq;
}

Matrix append_concepts_backward(const Matrix& d_seq, std::size_t token_rows, std::span<const Vector> concept_vectors,
                                const FusionParams& params, FusionParams& grads, std::vector<Vector>* d_concepts) {
  if (d_seq.rows() != token_rows + concept_vectors.size()) {
    throw std::invalid_argument("append_concepts_backward: row count mismatch");
  }
  Matrix d_tokens(token_rows, d_seq.cols());
  std::copy_n(d_seq.data(), d_tokens.size(), d_tokens.data());
  if (d_concepts != nullptr) d_concepts->clear();
  for (std::size_t m = 0; m < concept_vectors.size(); ++m) {
    const auto d_row = d_seq.row(token_rows + m);
    outer_acc(concept_vectors[m], d_row, grads.adapter);
    if (d_concepts != nullptr) d_concepts->push_back(matvec(params.adapter, d_row));
  }
  return d_tokens;
}

namespace {

std::size_t kept_rows(std::size_t rows, std::span<const std::uint8_t> keep) {
  if (keep.empty()) return rows;
  if (keep.size() != rows) throw std::invalid_argument("pool: keep mask length mismatch");
  return static_cast<std::size_t>(std::count_if(keep.begin(), keep.end(), [](std::uint8_t k) { return k != 0; }));
}

}  // namespace

Vector pool_rows(const Matrix& states, Pooling pooling, std::span<const std::uint8_t> keep) {
  if (states.rows() == 0) throw std::invalid_argument("pool: empty sequence");
  if (pooling == Pooling::cls) return Vector(states.row(0).begin(), states.row(0).end());
  const std::size_t count = kept_rows(states.rows(), keep);
  Vector out(states.cols(), 0.0);
  if (count == 0) return out;
  for (std::size_t i = 0; i < states.rows(); ++i) {
    if (keep.empty() || keep[i] != 0) add_inplace(out, states.row(i));
  }
  kernels::scale(1.0 / static_cast<double>(count), out);
  return out;
}

Vector pool_fused(const FusedSequence& fused, Pooling pooling, std::span<const std::uint8_t> keep) {
  return pool_rows(fused.states, pooling, keep);
}

Matrix pool_rows_backward(std::size_t rows, std::span<const double> d_pooled, Pooling pooling,
                          std::span<const std::uint8_t> keep) {
  Matrix d(rows, d_pooled.size());
  if (rows == 0) return d;
  if (pooling == Pooling::cls) {
    std::copy(d_pooled.begin(), d_pooled.end(), d.row(0).begin());
    return d;
  }
  const std::size_t count = kept_rows(rows, keep);
  if (count == 0) return d;
  const double w = 1.0 / static_cast<double>(count);
  for (std::size_t i = 0; i < rows; ++i) {
    if (keep.empty() || keep[i] != 0) kernels::axpy(w, d_pooled, d.row(i));
  }
  return d;
}

}  // namespace fsre
