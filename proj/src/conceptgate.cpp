#include "fsre/conceptgate.hpp"

#include <cmath>
#include <stdexcept>

#include "fsre/kernels.hpp"

namespace fsre {

ProjectionParams ProjectionParams::zeros(std::size_t concept_dim, std::size_t sentence_dim, std::size_t shared_dim) {
  if (concept_dim == 0 || sentence_dim == 0 || shared_dim == 0) {
    throw std::invalid_argument("projection dimensions must be positive");
  }
  return {Matrix(concept_dim, shared_dim), Matrix(sentence_dim, shared_dim)};
}

ProjectionParams ProjectionParams::init(std::size_t concept_dim, std::size_t sentence_dim, std::size_t shared_dim,
                                        Rng& rng) {
  auto p = zeros(concept_dim, sentence_dim, shared_dim);
  std::normal_distribution<double> pc(0.0, 1.0 / std::sqrt(static_cast<double>(concept_dim)));
  std::normal_distribution<double> ps(0.0, 1.0 / std::sqrt(static_cast<double>(sentence_dim)));
  for (auto& v : p.concept_proj.values()) v = pc(rng);
  for (auto& v : p.sentence_proj.values()) v = ps(rng);
  return p;
}

std::vector<std::pair<std::string, Matrix*>> ProjectionParams::tensors() {
  return {{"gate.concept_proj", &concept_proj}, {"gate.sentence_proj", &sentence_proj}};
}

void validate(const GateConfig& config) {
  if (!(config.alpha > 0.0 && config.alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
}

Vector similarity(std::span<const double> sentence, const Matrix& concepts, const ProjectionParams& params) {
  if (concepts.rows() == 0) return {};
  if (sentence.size() != params.sentence_proj.rows() || concepts.cols() != params.concept_proj.rows()) {
    throw std::invalid_argument("similarity: dimension mismatch");
  }
  const Vector s = vecmat(sentence, params.sentence_proj);
  const Matrix c = matmul(concepts, params.concept_proj);
  Vector out(concepts.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = kernels::dot(c.row(i), s);
  return out;
}

GateDecision gate(std::span<const double> raw_scores, const GateConfig& config) {
  GateDecision d;
  d.scores = softmax(raw_scores);
  d.mask.assign(d.scores.size(), 0);
  for (std::size_t i = 0; i < d.scores.size(); ++i) {
    if (d.scores[i] >= config.alpha) {
      d.mask[i] = 1;
      if (!d.selected || d.scores[i] > d.scores[*d.selected]) d.selected = i;
    }
  }
  return d;
}

EntityGate gate_entity(std::span<const double> sentence, const Matrix& candidates, const ProjectionParams& params,
                       const GateConfig& config) {
  EntityGate g;
  g.candidates = candidates;
  if (candidates.rows() == 0) return g;
  g.sentence_shared = vecmat(sentence, params.sentence_proj);
  const Matrix shared = matmul(candidates, params.concept_proj);
  g.concept_shared.assign(shared.values().begin(), shared.values().end());
  Vector raw(candidates.rows());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = kernels::dot(shared.row(i), g.sentence_shared);
  g.decision = gate(raw, config);
  if (g.decision.selected) {
    const auto sel = *g.decision.selected;
    g.selected_vector.assign(candidates.row(sel).begin(), candidates.row(sel).end());
    kernels::scale(g.decision.scores[sel], g.selected_vector);
  }
  return g;
}

SelectedConcepts select_concepts(std::span<const double> sentence, const Matrix& head_candidates,
                                 const Matrix& tail_candidates, const ProjectionParams& params,
                                 const GateConfig& config) {
  SelectedConcepts out;
  if (head_candidates.rows() > 0) out.head = gate_entity(sentence, head_candidates, params, config);
  if (tail_candidates.rows() > 0) out.tail = gate_entity(sentence, tail_candidates, params, config);
  return out;
}

void gate_entity_backward(const EntityGate& g, std::span<const double> sentence, const ProjectionParams& params,
                          std::span<const double> d_selected, ProjectionParams& grads, std::span<double> d_sentence) {
  if (!g.decision.selected) return;
  const std::size_t sel = *g.decision.selected;
  const std::size_t n = g.candidates.rows();
  const std::size_t dp = params.concept_proj.cols();
  const auto& scores = g.decision.scores;

  // selected_vector = scores[sel] * v_c[sel]; v_c is a constant input.
  const double d_score = kernels::dot(d_selected, g.candidates.row(sel));
  if (d_score == 0.0) return;
  Vector d_raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    d_raw[i] = d_score * scores[sel] * ((i == sel ? 1.0 : 0.0) - scores[i]);
  }

  // raw[i] = c_i . s with c_i = v_c[i] P_c and s = sentence P_s.
  Vector d_s(dp, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> c_i(g.concept_shared.data() + i * dp, dp);
    kernels::axpy(d_raw[i], c_i, d_s);
    Vector d_c = g.sentence_shared;
    kernels::scale(d_raw[i], d_c);
    outer_acc(g.candidates.row(i), d_c, grads.concept_proj);
  }
  outer_acc(sentence, d_s, grads.sentence_proj);
  add_inplace(d_sentence, matvec(params.sentence_proj, d_s));
}

}  // namespace fsre
