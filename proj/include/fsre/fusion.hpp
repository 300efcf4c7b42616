#pragma once

// Word-level fusion of selected concept vectors into the token sequence.
//
// Adapted concept rows are appended after the encoder states and the whole
// sequence is mixed with one scaled dot-product self-attention layer:
//
//   fused_i = sum_j softmax_j(q_i . k_j / sqrt(d_head)) v_j
//
// There is no positional term and no residual, so the layer is equivariant
// under row permutations.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsre/encoder.hpp"
#include "fsre/random.hpp"
#include "fsre/tensor.hpp"

namespace fsre {

struct FusionParams {
  Matrix adapter;     // d_c x d
  Matrix wq, wk, wv;  // d x d

  static FusionParams zeros(std::size_t concept_dim, std::size_t dim);
  // W_k starts as a copy of W_q (the two are trained independently), so at
  // initialization every row attends most to rows identical to itself. That
  // is what lets a query concept find the same concept on the support side.
  static FusionParams init(std::size_t concept_dim, std::size_t dim, Rng& rng);

  std::size_t dim() const { return wq.rows(); }
  std::vector<std::pair<std::string, Matrix*>> tensors();
};

struct FusedSequence {
  Matrix states;                          // (L + m) x d
  std::vector<std::size_t> concept_slots; // row indices of appended concepts
  // One (L + m) x (L + m) weight matrix per head.
  std::vector<Matrix> attention;
};

// token_states followed by concept_vectors[i] * adapter, in order.
Matrix append_concepts(const Matrix& token_states, std::span<const Vector> concept_vectors,
                       const FusionParams& params);
Matrix append_concepts(const Matrix& token_states, const std::optional<Vector>& head_vec,
                       const std::optional<Vector>& tail_vec, const FusionParams& params);

struct FusionTrace {
  Matrix input, q, k, v;
  std::vector<Matrix> attention;
  std::size_t heads = 1;
};

// `concept_begin` is the first appended row (rows from there on are recorded
// as concept slots). `heads` must divide d.
FusedSequence fuse(const Matrix& seq, const FusionParams& params, std::size_t concept_begin, std::size_t heads = 1);
FusedSequence fuse(const Matrix& seq, const FusionParams& params, std::size_t concept_begin, std::size_t heads,
                   FusionTrace& trace);

// Returns d(loss)/d(seq); accumulates weight gradients into `grads`.
Matrix fuse_backward(const FusionTrace& trace, const FusionParams& params, const Matrix& d_states,
                     FusionParams& grads);

// Splits d(loss)/d(appended sequence) into the token part (returned) and the
// concept vectors' gradients (`d_concepts`, one per appended row).
Matrix append_concepts_backward(const Matrix& d_seq, std::size_t token_rows, std::span<const Vector> concept_vectors,
                                const FusionParams& params, FusionParams& grads, std::vector<Vector>* d_concepts);

// CLS pooling takes row 0. Mean pooling averages the rows with keep[i] != 0,
// or every row when `keep` is empty.
Vector pool_rows(const Matrix& states, Pooling pooling, std::span<const std::uint8_t> keep = {});
Vector pool_fused(const FusedSequence& fused, Pooling pooling, std::span<const std::uint8_t> keep = {});
Matrix pool_rows_backward(std::size_t rows, std::span<const double> d_pooled, Pooling pooling,
                          std::span<const std::uint8_t> keep = {});

}  // namespace fsre
