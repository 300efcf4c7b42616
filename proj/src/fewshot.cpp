#include "fsre/fewshot.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fsre/errors.hpp"
#include "fsre/kernels.hpp"
#include "json.hpp"

namespace fsre {

// ---------------------------------------------------------------------------
// Enumerations

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table, const char* what) {
  for (const auto& [name, value] : table) {
    if (name == s) return value;
  }
  std::string options;
  for (const auto& [name, _] : table) options += (options.empty() ? "" : ", ") + std::string(name);
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(s) + "' (expected " + options +
                              ")");
}

template <typename E, std::size_t N>
std::string_view enum_name(E v, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, value] : table) {
    if (value == v) return name;
  }
  return "?";
}

constexpr std::array<std::pair<std::string_view, Variant>, 5> kVariantNames{{{"full", Variant::full},
                                                                              {"no_att", Variant::no_att},
                                                                              {"no_fusion", Variant::no_fusion},
                                                                              {"simple", Variant::simple},
                                                                              {"sentence_only", Variant::sentence_only}}};
constexpr std::array<std::pair<std::string_view, Aggregation>, 2> kAggregationNames{
    {{"mean", Aggregation::mean}, {"sum", Aggregation::sum}}};
constexpr std::array<std::pair<std::string_view, OptimizerKind>, 3> kOptimizerNames{
    {{"sgd", OptimizerKind::sgd}, {"momentum", OptimizerKind::momentum}, {"adam", OptimizerKind::adam}}};
constexpr std::array<std::pair<std::string_view, Pooling>, 2> kPoolingNames{
    {{"cls", Pooling::cls}, {"mean", Pooling::mean}}};

}  // namespace

std::string_view to_string(Variant v) { return enum_name(v, kVariantNames); }
std::string_view to_string(Aggregation a) { return enum_name(a, kAggregationNames); }
std::string_view to_string(OptimizerKind o) { return enum_name(o, kOptimizerNames); }
std::string_view to_string(Pooling p) { return enum_name(p, kPoolingNames); }
Variant parse_variant(std::string_view s) { return parse_enum(s, kVariantNames, "variant"); }
Aggregation parse_aggregation(std::string_view s) { return parse_enum(s, kAggregationNames, "aggregation"); }
OptimizerKind parse_optimizer(std::string_view s) { return parse_enum(s, kOptimizerNames, "optimizer"); }
Pooling parse_pooling(std::string_view s) { return parse_enum(s, kPoolingNames, "pooling"); }

bool uses_gate(Variant v) { return v == Variant::full || v == Variant::no_fusion; }
bool uses_fusion(Variant v) { return v == Variant::full || v == Variant::no_att; }
bool uses_concepts(Variant v) { return v != Variant::sentence_only; }

// ---------------------------------------------------------------------------
// Configuration and parameters

std::size_t ModelConfig::head_input_dim() const {
  return variant == Variant::no_fusion ? encoder.dim * (1 + kEntitySlots) : encoder.dim;
}

void validate(const ModelConfig& c) {
  if (c.encoder.dim == 0 || c.encoder.ff_dim == 0) throw std::invalid_argument("encoder dims must be positive");
  if (c.encoder.max_len < 5) throw std::invalid_argument("max_len too small for a pair sequence");
  if (c.projection_dim == 0) throw std::invalid_argument("projection_dim must be positive");
  if (c.fusion_heads == 0 || c.encoder.dim % c.fusion_heads != 0) {
    throw std::invalid_argument("fusion_heads must divide the encoder dim");
  }
  if (c.concept_dim == 0) throw std::invalid_argument("concept_dim must be positive");
  if (c.max_concepts == 0) throw std::invalid_argument("max_concepts must be positive");
  validate(GateConfig{c.alpha});
  if (!(c.learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (c.grad_clip < 0.0) throw std::invalid_argument("grad_clip must be non-negative");
}

ModelParams ModelParams::zeros(const ModelConfig& c, std::size_t vocab_size) {
  return {EncoderParams::zeros(c.encoder, vocab_size),
          ProjectionParams::zeros(c.concept_dim, c.encoder.dim, c.projection_dim),
          FusionParams::zeros(c.concept_dim, c.encoder.dim), Matrix(1, c.head_input_dim()), Matrix(1, 1)};
}

ModelParams ModelParams::init(const ModelConfig& c, std::size_t vocab_size, std::uint64_t seed) {
  auto enc_rng = substream(seed, "init/encoder");
  auto gate_rng = substream(seed, "init/gate");
  auto fusion_rng = substream(seed, "init/fusion");
  auto head_rng = substream(seed, "init/head");
  ModelParams p{EncoderParams::init(c.encoder, vocab_size, enc_rng),
                ProjectionParams::init(c.concept_dim, c.encoder.dim, c.projection_dim, gate_rng),
                FusionParams::init(c.concept_dim, c.encoder.dim, fusion_rng), Matrix(1, c.head_input_dim()),
                Matrix(1, 1)};
  std::normal_distribution<double> w(0.0, 1.0 / std::sqrt(static_cast<double>(c.head_input_dim())));
  for (auto& v : p.head_w.values()) v = w(head_rng);
  return p;
}

std::vector<std::pair<std::string, Matrix*>> ModelParams::tensors() {
  auto out = encoder.tensors();
  for (auto& t : projection.tensors()) out.push_back(t);
  for (auto& t : fusion.tensors()) out.push_back(t);
  out.emplace_back("head.w", &head_w);
  out.emplace_back("head.b", &head_b);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ModelParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<ModelParams*>(this)->tensors()) out.emplace_back(name, m);
  return out;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  const auto ta = a.tensors();
  const auto tb = b.tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].first != tb[i].first || !(*ta[i].second == *tb[i].second)) return false;
  }
  return true;
}

Model make_model(const ModelConfig& config, const Dataset& dataset, std::span<const std::string> train_relations,
                 const ConceptSource& concepts) {
  Model model{config, Vocab(), {}};
  if (model.config.concept_dim == 0) {
    if (!concepts.available()) throw std::invalid_argument("concept_dim is 0 and no embedding table was given");
    model.config.concept_dim = concepts.dim();
  }
  if (uses_concepts(config.variant) && concepts.available() && concepts.dim() != model.config.concept_dim) {
    throw std::invalid_argument("embedding table dim " + std::to_string(concepts.dim()) +
                                " does not match concept_dim " + std::to_string(model.config.concept_dim));
  }
  validate(model.config);
  std::vector<std::string> extra;
  if (config.variant == Variant::simple && concepts.index != nullptr) {
    std::set<std::string> names;
    for (const auto& [_, list] : concepts.index->entries()) names.insert(list.begin(), list.end());
    extra.assign(names.begin(), names.end());
  }
  model.vocab = Vocab::build(dataset, train_relations, extra, config.vocab_min_count);
  model.params = ModelParams::init(model.config, model.vocab.size(), config.seed);
  return model;
}

// ---------------------------------------------------------------------------
// Pair pipeline

PreparedInstance prepare_instance(const Instance& instance, const Model& model, const ConceptSource& concepts) {
  const auto& cfg = model.config;
  PreparedInstance p;
  p.entity_names = {instance.head_name, instance.tail_name};
  const bool with_concepts = uses_concepts(cfg.variant) && concepts.available();
  std::vector<TokenId> concept_tokens;
  if (with_concepts) {
    for (std::size_t e = 0; e < 2; ++e) {
      const auto& mention = p.entity_names[e];
      if (cfg.variant == Variant::simple) {
        const auto names = concepts.index->concepts_of(mention);
        const auto count = std::min(names.size(), cfg.max_concepts);
        for (std::size_t i = 0; i < count; ++i) {
          p.candidate_names[e].push_back(names[i]);
          concept_tokens.push_back(model.vocab.id(names[i]));
        }
        continue;
      }
      auto found = lookup_concepts(*concepts.index, *concepts.table, mention);
      if (found.size() > cfg.max_concepts) found.resize(cfg.max_concepts);
      for (auto& c : found) {
        p.candidate_names[e].push_back(c.name);
        p.candidates[e].append_row(c.embedding);
      }
    }
  }
  const std::size_t side_budget = (cfg.encoder.max_len - 3) / 2;
  if (concept_tokens.size() >= side_budget) throw ValidationError("concept tokens exceed the per-sentence budget");
  p.marked = mark_instance(instance, model.vocab, side_budget - concept_tokens.size());
  p.marked.insert(p.marked.end(), concept_tokens.begin(), concept_tokens.end());
  return p;
}

std::vector<TokenId> pair_ids(const PreparedInstance& query, const PreparedInstance& support, std::size_t max_len) {
  std::vector<TokenId> ids;
  ids.reserve(query.marked.size() + support.marked.size() + 3);
  ids.push_back(Vocab::kCls);
  ids.insert(ids.end(), query.marked.begin(), query.marked.end());
  ids.push_back(Vocab::kSep);
  ids.insert(ids.end(), support.marked.begin(), support.marked.end());
  ids.push_back(Vocab::kSep);
  if (ids.size() > max_len) {
    throw ValidationError("pair sequence of " + std::to_string(ids.size()) + " ids exceeds max_len " +
                          std::to_string(max_len));
  }
  return ids;
}

double pair_forward(const PreparedInstance& query, const PreparedInstance& support, const Model& model,
                    PairTrace* trace) {
  PairTrace local;
  PairTrace& tr = trace != nullptr ? *trace : local;
  const auto& cfg = model.config;
  const auto& params = model.params;
  const std::size_t d = cfg.encoder.dim;

  tr = PairTrace{};
  tr.ids = pair_ids(query, support, cfg.encoder.max_len);
  const Encoding enc = encode(tr.ids, params.encoder, tr.encoder);
  const std::size_t len = tr.ids.size();

  const std::array<const Matrix*, ModelConfig::kEntitySlots> candidates{
      &query.candidates[0], &query.candidates[1], &support.candidates[0], &support.candidates[1]};
  const GateConfig gate_cfg{cfg.alpha};

  if (uses_gate(cfg.variant)) {
    for (std::size_t e = 0; e < candidates.size(); ++e) {
      if (candidates[e]->rows() == 0) continue;
      tr.gates[e] = gate_entity(enc.sentence_embedding, *candidates[e], params.projection, gate_cfg);
    }
  }

  switch (cfg.variant) {
    case Variant::full:
    case Variant::no_att: {
      for (std::size_t e = 0; e < candidates.size(); ++e) {
        if (cfg.variant == Variant::full) {
          if (tr.gates[e] && tr.gates[e]->decision.selected) {
            tr.appended.push_back(tr.gates[e]->selected_vector);
            tr.appended_entity.push_back(e);
          }
          continue;
        }
        for (std::size_t i = 0; i < candidates[e]->rows(); ++i) {
          const auto row = candidates[e]->row(i);
          tr.appended.emplace_back(row.begin(), row.end());
          tr.appended_entity.push_back(e);
        }
      }
      const Matrix seq = append_concepts(enc.token_states, tr.appended, params.fusion);
      const FusedSequence fused = fuse(seq, params.fusion, len, cfg.fusion_heads, tr.fusion);
      tr.fused_rows = seq.rows();
      tr.head_input = pool_fused(fused, cfg.pooling);
      break;
    }
    case Variant::no_fusion: {
      tr.head_input = pool_rows(enc.token_states, cfg.pooling);
      for (std::size_t e = 0; e < candidates.size(); ++e) {
        Vector slot(d, 0.0);
        if (tr.gates[e] && tr.gates[e]->decision.selected) slot = vecmat(tr.gates[e]->selected_vector, params.fusion.adapter);
        tr.head_input.insert(tr.head_input.end(), slot.begin(), slot.end());
        tr.slot_vectors.push_back(std::move(slot));
      }
      break;
    }
    case Variant::simple:
    case Variant::sentence_only:
      tr.head_input = pool_rows(enc.token_states, cfg.pooling);
      break;
  }
  tr.logit = kernels::dot(params.head_w.row(0), tr.head_input) + params.head_b(0, 0);
  return tr.logit;
}

void pair_backward(const PairTrace& tr, const Model& model, double d_logit, ModelParams& grads) {
  const auto& cfg = model.config;
  const auto& params = model.params;
  const std::size_t d = cfg.encoder.dim;
  const std::size_t len = tr.ids.size();

  kernels::axpy(d_logit, tr.head_input, grads.head_w.row(0));
  grads.head_b(0, 0) += d_logit;
  Vector d_input(params.head_w.row(0).begin(), params.head_w.row(0).end());
  kernels::scale(d_logit, d_input);
  const std::span<const double> d_pooled(d_input.data(), d);

  const auto first_row = tr.encoder.x2.row(0);
  const Vector sentence(first_row.begin(), first_row.end());
  Vector d_sentence(d, 0.0);
  Matrix d_states;

  switch (cfg.variant) {
    case Variant::full:
    case Variant::no_att: {
      const Matrix d_fused = pool_rows_backward(tr.fused_rows, d_pooled, cfg.pooling);
      const Matrix d_seq = fuse_backward(tr.fusion, params.fusion, d_fused, grads.fusion);
      std::vector<Vector> d_concepts;
      d_states = append_concepts_backward(d_seq, len, tr.appended, params.fusion, grads.fusion, &d_concepts);
      if (cfg.variant == Variant::full) {
        for (std::size_t m = 0; m < tr.appended.size(); ++m) {
          const auto& g = *tr.gates[tr.appended_entity[m]];
          gate_entity_backward(g, sentence, params.projection, d_concepts[m], grads.projection, d_sentence);
        }
      }
      break;
    }
    case Variant::no_fusion: {
      d_states = pool_rows_backward(len, d_pooled, cfg.pooling);
      for (std::size_t e = 0; e < ModelConfig::kEntitySlots; ++e) {
        if (!tr.gates[e] || !tr.gates[e]->decision.selected) continue;
        const std::span<const double> d_slot(d_input.data() + d * (1 + e), d);
        const auto& selected = tr.gates[e]->selected_vector;
        outer_acc(selected, d_slot, grads.fusion.adapter);
        const Vector d_selected = matvec(params.fusion.adapter, d_slot);
        gate_entity_backward(*tr.gates[e], sentence, params.projection, d_selected, grads.projection, d_sentence);
      }
      break;
    }
    case Variant::simple:
    case Variant::sentence_only:
      d_states = pool_rows_backward(len, d_pooled, cfg.pooling);
      break;
  }
  add_inplace(d_states.row(0), d_sentence);
  encode_backward(tr.encoder, params.encoder, d_states, grads.encoder);
}

double pair_logit(const Instance& query, const Instance& support, const Model& model, const ConceptSource& concepts) {
  const auto q = prepare_instance(query, model, concepts);
  const auto s = prepare_instance(support, model, concepts);
  return pair_forward(q, s, model);
}

// ---------------------------------------------------------------------------
// Episodes

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

struct PreparedEpisode {
  std::vector<std::vector<PreparedInstance>> support;
  std::vector<PreparedInstance> queries;
};

PreparedEpisode prepare_episode(const Episode& episode, const Model& model, const ConceptSource& concepts) {
  PreparedEpisode p;
  p.support.resize(episode.support.size());
  for (std::size_t c = 0; c < episode.support.size(); ++c) {
    for (const auto& inst : episode.support[c]) p.support[c].push_back(prepare_instance(inst, model, concepts));
  }
  for (const auto& q : episode.queries) p.queries.push_back(prepare_instance(q.instance, model, concepts));
  return p;
}

EpisodeResult run_episode(const Episode& episode, const Model& model, const ConceptSource& concepts,
                          ModelParams* grads) {
  const auto prepared = prepare_episode(episode, model, concepts);
  const std::size_t n_way = episode.classes.size();
  const std::size_t n_queries = episode.queries.size();
  EpisodeResult result;
  if (n_queries == 0) return result;

  std::vector<std::vector<PairTrace>> traces(grads != nullptr ? n_way : 0);
  std::size_t correct = 0;
  for (std::size_t qi = 0; qi < n_queries; ++qi) {
    Vector logits(n_way, 0.0);
    for (std::size_t c = 0; c < n_way; ++c) {
      const auto& group = prepared.support[c];
      if (grads != nullptr) traces[c].resize(group.size());
      double acc = 0.0;
      for (std::size_t k = 0; k < group.size(); ++k) {
        acc += pair_forward(prepared.queries[qi], group[k], model, grads != nullptr ? &traces[c][k] : nullptr);
      }
      logits[c] = model.config.aggregation == Aggregation::mean ? acc / static_cast<double>(group.size()) : acc;
    }
    const std::size_t label = episode.queries[qi].label;
    const Vector probs = softmax(logits);
    result.loss -= std::log(std::max(probs[label], 1e-300));
    const std::size_t pred = argmax(logits);
    if (pred == label) ++correct;
    result.predictions.push_back(pred);

    if (grads != nullptr) {
      for (std::size_t c = 0; c < n_way; ++c) {
        double d_class = (probs[c] - (c == label ? 1.0 : 0.0)) / static_cast<double>(n_queries);
        if (model.config.aggregation == Aggregation::mean) d_class /= static_cast<double>(traces[c].size());
        for (const auto& tr : traces[c]) pair_backward(tr, model, d_class, *grads);
      }
    }
    result.logits.push_back(std::move(logits));
  }
  result.loss /= static_cast<double>(n_queries);
  result.accuracy = static_cast<double>(correct) / static_cast<double>(n_queries);
  return result;
}

}  // namespace

EpisodeResult episode_forward(const Episode& episode, const Model& model, const ConceptSource& concepts) {
  return run_episode(episode, model, concepts, nullptr);
}

EpisodeResult episode_gradient(const Episode& episode, const Model& model, const ConceptSource& concepts,
                               ModelParams& grads) {
  return run_episode(episode, model, concepts, &grads);
}

// ---------------------------------------------------------------------------
// Optimization

Optimizer::Optimizer(const ModelConfig& config) : config_(config) {}

void Optimizer::step(ModelParams& params, ModelParams& grads) {
  auto p = params.tensors();
  auto g = grads.tensors();
  if (config_.grad_clip > 0.0) {
    double norm2 = 0.0;
    for (const auto& [_, m] : g) norm2 += kernels::dot(m->values(), m->values());
    const double norm = std::sqrt(norm2);
    if (norm > config_.grad_clip) {
      for (auto& [_, m] : g) kernels::scale(config_.grad_clip / norm, m->values());
    }
  }
  ++steps_;
  const double lr = config_.learning_rate;
  switch (config_.optimizer) {
    case OptimizerKind::sgd:
      for (std::size_t i = 0; i < p.size(); ++i) kernels::axpy(-lr, g[i].second->values(), p[i].second->values());
      break;
    case OptimizerKind::momentum:
      if (first_.empty()) {
        for (const auto& [_, m] : p) first_.emplace_back(m->rows(), m->cols());
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto vel = first_[i].values();
        kernels::scale(config_.momentum, vel);
        kernels::axpy(1.0, g[i].second->values(), vel);
        kernels::axpy(-lr, vel, p[i].second->values());
      }
      break;
    case OptimizerKind::adam: {
      if (first_.empty()) {
        for (const auto& [_, m] : p) {
          first_.emplace_back(m->rows(), m->cols());
          second_.emplace_back(m->rows(), m->cols());
        }
      }
      const double b1 = config_.adam_beta1;
      const double b2 = config_.adam_beta2;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto w = p[i].second->values();
        const auto gr = g[i].second->values();
        auto m1 = first_[i].values();
        auto m2 = second_[i].values();
        for (std::size_t j = 0; j < w.size(); ++j) {
          m1[j] = b1 * m1[j] + (1.0 - b1) * gr[j];
          m2[j] = b2 * m2[j] + (1.0 - b2) * gr[j] * gr[j];
          w[j] -= lr * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + config_.adam_epsilon);
        }
      }
      break;
    }
  }
}

std::vector<TrainLogEntry> train(Model& model, const Dataset& dataset, std::span<const std::string> relations,
                                 const EpisodeSpec& spec, const ConceptSource& concepts,
                                 const TrainOptions& options) {
  validate(spec);
  std::vector<TrainLogEntry> log;
  if (model.config.max_episodes == 0) return log;
  if (options.fixed_episode == nullptr && relations.size() < spec.n_way) {
    throw SamplingError("training split has " + std::to_string(relations.size()) + " relations, need " +
                        std::to_string(spec.n_way));
  }
  auto rng = substream(model.config.seed, "train");
  Optimizer optimizer(model.config);
  ModelParams grads = ModelParams::zeros(model.config, model.vocab.size());
  log.reserve(model.config.max_episodes);
  for (std::size_t ep = 0; ep < model.config.max_episodes; ++ep) {
    const Episode sampled = options.fixed_episode != nullptr ? Episode{} : sample_episode(dataset, relations, spec, rng);
    const Episode& episode = options.fixed_episode != nullptr ? *options.fixed_episode : sampled;
    for (auto& [_, m] : grads.tensors()) m->fill(0.0);
    const auto result = episode_gradient(episode, model, concepts, grads);
    if (!std::isfinite(result.loss)) {
      throw TrainingError("non-finite loss at training episode " + std::to_string(ep) + " (seed " +
                          std::to_string(model.config.seed) + ")");
    }
    optimizer.step(model.params, grads);
    log.push_back({ep, result.loss, result.accuracy});
    if (options.on_episode && !options.on_episode(log.back())) break;
  }
  return log;
}

EvalReport evaluate(const Model& model, const Dataset& dataset, std::span<const std::string> relations,
                    const EpisodeSpec& spec, const ConceptSource& concepts, std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw std::invalid_argument("evaluate: episode count must be at least 1");
  auto rng = substream(seed, "eval");
  EvalReport report;
  report.episodes = episodes;
  report.per_episode.reserve(episodes);
  for (std::size_t i = 0; i < episodes; ++i) {
    const auto episode = sample_episode(dataset, relations, spec, rng);
    report.per_episode.push_back(episode_forward(episode, model, concepts).accuracy);
  }
  double sum = 0.0;
  for (double a : report.per_episode) sum += a;
  report.accuracy = sum / static_cast<double>(episodes);
  if (episodes > 1) {
    double ss = 0.0;
    for (double a : report.per_episode) ss += (a - report.accuracy) * (a - report.accuracy);
    const double sd = std::sqrt(ss / static_cast<double>(episodes - 1));
    report.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(episodes));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

std::string eval_report_json(const EvalReport& report, Variant variant, const EpisodeSpec& spec, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["variant"] = to_string(variant);
  j["n_way"] = spec.n_way;
  j["k_shot"] = spec.k_shot;
  j["episodes"] = report.episodes;
  j["seed"] = seed;
  j["accuracy"] = report.accuracy;
  j["ci95"] = report.ci95;
  return j.dump(2) + "\n";
}

std::string config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["variant"] = to_string(c.variant);
  j["dim"] = c.encoder.dim;
  j["ff_dim"] = c.encoder.ff_dim;
  j["max_len"] = c.encoder.max_len;
  j["concept_dim"] = c.concept_dim;
  j["projection_dim"] = c.projection_dim;
  j["fusion_heads"] = c.fusion_heads;
  j["alpha"] = c.alpha;
  j["aggregation"] = to_string(c.aggregation);
  j["pooling"] = to_string(c.pooling);
  j["optimizer"] = to_string(c.optimizer);
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_epsilon"] = c.adam_epsilon;
  j["grad_clip"] = c.grad_clip;
  j["max_episodes"] = c.max_episodes;
  j["seed"] = c.seed;
  j["max_concepts"] = c.max_concepts;
  j["vocab_min_count"] = c.vocab_min_count;
  return j.dump();
}

ModelConfig config_from_json(std::string_view json_text) {
  const auto j = nlohmann::json::parse(json_text);
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.encoder.dim = j.at("dim").get<std::size_t>();
  c.encoder.ff_dim = j.at("ff_dim").get<std::size_t>();
  c.encoder.max_len = j.at("max_len").get<std::size_t>();
  c.concept_dim = j.at("concept_dim").get<std::size_t>();
  c.projection_dim = j.at("projection_dim").get<std::size_t>();
  c.fusion_heads = j.at("fusion_heads").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
  c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.learning_rate = j.at("learning_rate").get<double>();
  c.momentum = j.at("momentum").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_epsilon = j.at("adam_epsilon").get<double>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.max_episodes = j.at("max_episodes").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.max_concepts = j.at("max_concepts").get<std::size_t>();
  c.vocab_min_count = j.at("vocab_min_count").get<std::size_t>();
  return c;
}

namespace {

constexpr std::string_view kCheckpointMagic = "FSRE-CHECKPOINT";
constexpr int kCheckpointVersion = 1;

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  std::string out;
  out += std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
  out += "config " + config_to_json(model.config) + "\n";
  out += "vocab " + std::to_string(model.vocab.size()) + "\n";
  for (const auto& t : model.vocab.tokens()) out += t + "\n";
  const auto tensors = model.params.tensors();
  out += "tensors " + std::to_string(tensors.size()) + "\n";
  char buf[32];
  for (const auto& [name, m] : tensors) {
    out += "tensor " + name + " " + std::to_string(m->rows()) + " " + std::to_string(m->cols()) + "\n";
    for (std::size_t r = 0; r < m->rows(); ++r) {
      const auto row = m->row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), row[c]);
        if (c > 0) out += ' ';
        out.append(buf, res.ptr);
      }
      out += '\n';
    }
  }
  return out;
}

Model parse_checkpoint(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  const auto next = [&](const char* what) {
    if (!std::getline(in, line)) throw ParseError(std::string("checkpoint truncated before ") + what);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return std::string_view(line);
  };
  const auto header = next("header");
  if (header != std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion)) {
    throw ParseError("unsupported checkpoint header '" + std::string(header) + "'");
  }
  auto cfg_line = next("config");
  if (!cfg_line.starts_with("config ")) throw ParseError("checkpoint: expected config line");
  Model model{config_from_json(cfg_line.substr(7)), Vocab(), {}};

  auto vocab_line = std::string(next("vocab"));
  std::size_t vocab_size = 0;
  if (std::sscanf(vocab_line.c_str(), "vocab %zu", &vocab_size) != 1) throw ParseError("checkpoint: bad vocab line");
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < vocab_size; ++i) tokens.emplace_back(next("vocab entries"));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (model.vocab.add(tokens[i]) != static_cast<TokenId>(i)) throw ParseError("checkpoint: vocabulary out of order");
  }

  model.params = ModelParams::zeros(model.config, model.vocab.size());
  auto tensors = model.params.tensors();
  auto count_line = std::string(next("tensor count"));
  std::size_t count = 0;
  if (std::sscanf(count_line.c_str(), "tensors %zu", &count) != 1 || count != tensors.size()) {
    throw ParseError("checkpoint: expected " + std::to_string(tensors.size()) + " tensors");
  }
  for (auto& [name, m] : tensors) {
    std::istringstream head{std::string(next("tensor header"))};
    std::string tag, got_name;
    std::size_t rows = 0, cols = 0;
    head >> tag >> got_name >> rows >> cols;
    if (tag != "tensor" || got_name != name || rows != m->rows() || cols != m->cols()) {
      throw ParseError("checkpoint: expected tensor " + name + " " + std::to_string(m->rows()) + "x" +
                       std::to_string(m->cols()) + ", found '" + line + "'");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row_text = next("tensor data");
      auto row = m->row(r);
      const char* p = row_text.data();
      const char* end = row_text.data() + row_text.size();
      for (std::size_t c = 0; c < cols; ++c) {
        while (p < end && *p == ' ') ++p;
        const auto res = std::from_chars(p, end, row[c]);
        if (res.ec != std::errc()) throw ParseError("checkpoint: bad value in tensor " + name);
        p = res.ptr;
      }
    }
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << serialize_checkpoint(model);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace fsre
