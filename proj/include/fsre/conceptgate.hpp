#pragma once

// Concept-sentence attention: project concepts and the sentence embedding into
// a shared space, score them by dot product, softmax-normalize per entity, and
// keep only concepts whose normalized score reaches the threshold alpha.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsre/random.hpp"
#include "fsre/tensor.hpp"

namespace fsre {

struct ProjectionParams {
  Matrix concept_proj;   // d_c x d_p
  Matrix sentence_proj;  // d_s x d_p

  static ProjectionParams zeros(std::size_t concept_dim, std::size_t sentence_dim, std::size_t shared_dim);
  static ProjectionParams init(std::size_t concept_dim, std::size_t sentence_dim, std::size_t shared_dim, Rng& rng);

  std::vector<std::pair<std::string, Matrix*>> tensors();
};

struct GateConfig {
  double alpha = 0.7;
};

void validate(const GateConfig& config);

struct GateDecision {
  Vector scores;               // softmax over the candidates
  std::vector<std::uint8_t> mask;
  // Highest-scoring candidate among those that pass; set iff any mask entry is 1.
  std::optional<std::size_t> selected;
};

// sim[i] = (concepts[i] * P_c) . (sentence * P_s); one row of `concepts` per candidate.
Vector similarity(std::span<const double> sentence, const Matrix& concepts, const ProjectionParams& params);

// Ties at exactly alpha pass.
GateDecision gate(std::span<const double> raw_scores, const GateConfig& config);

/// Gate outcome for one entity, with what the backward pass needs.
struct EntityGate {
  Matrix candidates;         // n x d_c
  Vector concept_shared;     // n x d_p, row-major
  Vector sentence_shared;    // d_p
  GateDecision decision;
  // scores[selected] * candidates[selected]; empty when nothing passes.
  Vector selected_vector;
};

struct SelectedConcepts {
  std::optional<EntityGate> head;
  std::optional<EntityGate> tail;
};

// Gates one entity's candidates against the sentence embedding. Returns an
// EntityGate with no selection when the candidate list is empty.
EntityGate gate_entity(std::span<const double> sentence, const Matrix& candidates, const ProjectionParams& params,
                       const GateConfig& config);

// Head and tail are gated independently against the same sentence embedding;
// an entity without candidates yields no gate at all.
SelectedConcepts select_concepts(std::span<const double> sentence, const Matrix& head_candidates,
                                 const Matrix& tail_candidates, const ProjectionParams& params,
                                 const GateConfig& config);

// Backward through gate_entity given d(loss)/d(selected_vector). Accumulates
// into `grads` and into `d_sentence`. The 0/1 mask is treated as a constant.
void gate_entity_backward(const EntityGate& gate, std::span<const double> sentence, const ProjectionParams& params,
                          std::span<const double> d_selected, ProjectionParams& grads, std::span<double> d_sentence);

}  // namespace fsre
