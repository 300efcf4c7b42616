#include "fsre/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fsre {

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& g : groups) w = std::max(w, g.max_rel_error);
  return w;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

bool gates_have_margin(const PairTrace& trace, double alpha, double margin) {
  for (const auto& g : trace.gates) {
    if (!g) continue;
    for (double s : g->decision.scores) {
      if (std::abs(s - alpha) < margin) return false;
    }
  }
  return true;
}

bool selects_from_multiple(const PairTrace& trace) {
  return std::any_of(trace.gates.begin(), trace.gates.end(), [](const auto& g) {
    return g && g->decision.selected && g->decision.scores.size() > 1;
  });
}

}  // namespace

GradCheckFixture make_gradcheck_fixture(Variant variant, std::uint64_t seed) {
  SynthConfig synth;
  synth.relations = 2;
  synth.concepts = 3;
  synth.distractor_concepts = 3;
  synth.entities_per_concept = 2;
  synth.instances_per_relation = 3;
  synth.sentence_length = 4;
  synth.filler_vocab = 5;
  synth.concept_dim = 4;
  synth.max_concepts_per_entity = 3;

  ModelConfig config;
  config.variant = variant;
  config.encoder = {4, 8, 32};
  config.projection_dim = 4;
  config.concept_dim = 4;
  config.alpha = 0.7;

  for (std::uint64_t attempt = seed; attempt < seed + 10000; ++attempt) {
    auto rng = substream(attempt, "gradcheck-fixture");
    GradCheckFixture f{generate_synthetic(synth, rng), {}, {}, {}};
    config.seed = attempt;
    std::vector<std::string> relations;
    for (const auto& [rel, _] : f.bench.dataset) relations.push_back(rel);
    f.model = make_model(config, f.bench.dataset, relations, f.concepts());
    f.query = f.bench.dataset.begin()->second[0];
    f.support = f.bench.dataset.begin()->second[1];
    if (!uses_gate(variant)) return f;

    const auto q = prepare_instance(f.query, f.model, f.concepts());
    const auto s = prepare_instance(f.support, f.model, f.concepts());
    PairTrace trace;
    pair_forward(q, s, f.model, &trace);
    if (selects_from_multiple(trace) && gates_have_margin(trace, config.alpha, 1e-3)) return f;
  }
  throw std::runtime_error("no gradient-check fixture with a clear gate margin was found");
}

GradCheckReport check_pair_gradients(GradCheckFixture& f, const GradCheckOptions& options) {
  const auto concepts = f.concepts();
  const auto q = prepare_instance(f.query, f.model, concepts);
  const auto s = prepare_instance(f.support, f.model, concepts);
  const auto loss = [&] {
    const double logit = pair_forward(q, s, f.model);
    return 0.5 * (logit - 1.0) * (logit - 1.0);
  };

  PairTrace trace;
  const double logit = pair_forward(q, s, f.model, &trace);
  ModelParams grads = ModelParams::zeros(f.model.config, f.model.vocab.size());
  pair_backward(trace, f.model, logit - 1.0, grads);

  GradCheckReport report;
  report.variant = f.model.config.variant;
  report.tolerance = options.tolerance;
  auto params = f.model.params.tensors();
  const auto analytic = grads.tensors();
  for (std::size_t t = 0; t < params.size(); ++t) {
    GroupCheck group{params[t].first, 0.0, 0};
    auto values = params[t].second->values();
    const auto grad = analytic[t].second->values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = loss();
      values[i] = saved - options.step;
      const double minus = loss();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = grad[i] * (1.0 + options.corrupt);
      group.max_rel_error = std::max(group.max_rel_error, relative_error(a, numeric));
      ++group.entries;
    }
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace fsre
