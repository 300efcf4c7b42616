#pragma once

// Pair-matching few-shot classifier: every query is encoded jointly with each
// support instance, the pair state is scored by a linear head, and class
// logits aggregate the K pair scores of each class.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fsre/conceptgate.hpp"
#include "fsre/conceptkb.hpp"
#include "fsre/corpus.hpp"
#include "fsre/encoder.hpp"
#include "fsre/fusion.hpp"
#include "fsre/random.hpp"
#include "fsre/tensor.hpp"

namespace fsre {

// full:          gate selects one concept per entity, fusion attends over it.
// no_att:        every candidate concept is appended to fusion, no gate.
// no_fusion:     gated concepts (adapted) are concatenated to the pooled state.
// simple:        concept names are appended as extra input tokens.
// sentence_only: no concept path.
enum class Variant { full, no_att, no_fusion, simple, sentence_only };
enum class Aggregation { mean, sum };
enum class OptimizerKind { sgd, momentum, adam };

inline constexpr std::array<Variant, 5> kAllVariants{Variant::full, Variant::no_att, Variant::no_fusion,
                                                      Variant::simple, Variant::sentence_only};

std::string_view to_string(Variant v);
std::string_view to_string(Aggregation a);
std::string_view to_string(OptimizerKind o);
std::string_view to_string(Pooling p);
Variant parse_variant(std::string_view s);
Aggregation parse_aggregation(std::string_view s);
OptimizerKind parse_optimizer(std::string_view s);
Pooling parse_pooling(std::string_view s);

bool uses_gate(Variant v);
bool uses_fusion(Variant v);
bool uses_concepts(Variant v);

struct ModelConfig {
  Variant variant = Variant::full;
  EncoderConfig encoder;
  std::size_t concept_dim = 0;  // taken from the embedding table when 0
  std::size_t projection_dim = 32;
  std::size_t fusion_heads = 1;
  double alpha = 0.7;
  Aggregation aggregation = Aggregation::mean;
  Pooling pooling = Pooling::mean;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip = 0.0;  // global-norm clip, 0 disables
  std::size_t max_episodes = 1000;
  std::uint64_t seed = 1;
  std::size_t max_concepts = ConceptIndex::kDefaultMaxConcepts;
  std::size_t vocab_min_count = 2;

  // Entity slots in the pair head input for no_fusion (query head/tail,
  // support head/tail).
  static constexpr std::size_t kEntitySlots = 4;

  std::size_t head_input_dim() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate(const ModelConfig& config);

struct ModelParams {
  EncoderParams encoder;
  ProjectionParams projection;
  FusionParams fusion;
  Matrix head_w;  // 1 x head_input_dim
  Matrix head_b;  // 1 x 1

  static ModelParams zeros(const ModelConfig& config, std::size_t vocab_size);
  // Each parameter group draws from its own substream of `seed`.
  static ModelParams init(const ModelConfig& config, std::size_t vocab_size, std::uint64_t seed);

  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

struct Model {
  ModelConfig config;
  Vocab vocab;
  ModelParams params;
};

struct ConceptSource {
  const ConceptIndex* index = nullptr;
  const EmbeddingTable* table = nullptr;

  bool available() const { return index != nullptr && table != nullptr; }
  std::size_t dim() const { return table != nullptr ? table->dim() : 0; }
};

// Builds vocabulary (train relations plus, for `simple`, concept names) and
// initial parameters from config.seed.
Model make_model(const ModelConfig& config, const Dataset& dataset, std::span<const std::string> train_relations,
                 const ConceptSource& concepts);

/// Per-instance inputs resolved once per episode.
struct PreparedInstance {
  std::vector<TokenId> marked;  // entity-marked ids, no [CLS]/[SEP]
  std::array<Matrix, 2> candidates;                    // head, tail: n x d_c
  std::array<std::vector<std::string>, 2> candidate_names;
  std::array<std::string, 2> entity_names;
};

PreparedInstance prepare_instance(const Instance& instance, const Model& model, const ConceptSource& concepts);

/// Everything the backward pass of one pair needs.
struct PairTrace {
  std::vector<TokenId> ids;
  EncoderTrace encoder;
  std::array<std::optional<EntityGate>, ModelConfig::kEntitySlots> gates;
  std::vector<Vector> appended;             // concept vectors before the adapter
  std::vector<std::size_t> appended_entity; // entity slot each appended row came from
  std::vector<Vector> slot_vectors;         // no_fusion: adapted slot vectors
  FusionTrace fusion;
  std::size_t fused_rows = 0;
  Vector head_input;
  double logit = 0.0;
};

std::vector<TokenId> pair_ids(const PreparedInstance& query, const PreparedInstance& support, std::size_t max_len);

double pair_forward(const PreparedInstance& query, const PreparedInstance& support, const Model& model,
                    PairTrace* trace = nullptr);
void pair_backward(const PairTrace& trace, const Model& model, double d_logit, ModelParams& grads);

double pair_logit(const Instance& query, const Instance& support, const Model& model, const ConceptSource& concepts);

struct EpisodeResult {
  std::vector<Vector> logits;  // one N-vector per query
  std::vector<std::size_t> predictions;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);

EpisodeResult episode_forward(const Episode& episode, const Model& model, const ConceptSource& concepts);
// Forward plus backward; accumulates d(mean loss)/d(params) into `grads`.
EpisodeResult episode_gradient(const Episode& episode, const Model& model, const ConceptSource& concepts,
                               ModelParams& grads);

class Optimizer {
 public:
  explicit Optimizer(const ModelConfig& config);
  void step(ModelParams& params, ModelParams& grads);

 private:
  ModelConfig config_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  std::size_t steps_ = 0;
};

struct TrainLogEntry {
  std::size_t episode = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainOptions {
  // Called after every episode; return false to stop early.
  std::function<bool(const TrainLogEntry&)> on_episode;
  // Train on this episode every step instead of sampling.
  const Episode* fixed_episode = nullptr;
};

// Episodes are drawn from the "train" substream of config.seed. Throws
// TrainingError on a non-finite loss.
std::vector<TrainLogEntry> train(Model& model, const Dataset& dataset, std::span<const std::string> relations,
                                 const EpisodeSpec& spec, const ConceptSource& concepts,
                                 const TrainOptions& options = {});

struct EvalReport {
  double accuracy = 0.0;
  double ci95 = 0.0;  // normal-approximation half-width
  std::size_t episodes = 0;
  std::vector<double> per_episode;
};

// Episodes come from the "eval" substream of `seed`.
EvalReport evaluate(const Model& model, const Dataset& dataset, std::span<const std::string> relations,
                    const EpisodeSpec& spec, const ConceptSource& concepts, std::size_t episodes, std::uint64_t seed);

// {variant, n_way, k_shot, episodes, seed, accuracy, ci95}, pretty-printed.
std::string eval_report_json(const EvalReport& report, Variant variant, const EpisodeSpec& spec, std::uint64_t seed);

// Text archive: a versioned header, the model config as one JSON line, the
// vocabulary, then each tensor as `tensor <name> <rows> <cols>` followed by
// its row-major values.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Model& model);
Model parse_checkpoint(std::string_view text);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(std::string_view json_text);

}  // namespace fsre
