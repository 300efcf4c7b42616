#pragma once

// FewRel-format data, relation splits, episode sampling, and the synthetic
// concept-determined benchmark.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fsre/conceptkb.hpp"
#include "fsre/random.hpp"

namespace fsre {

/// Half-open token interval [begin, end).
struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct Instance {
  std::vector<std::string> tokens;
  TokenSpan head;
  TokenSpan tail;
  std::string head_name;
  std::string tail_name;
  std::string relation;

  friend bool operator==(const Instance&, const Instance&) = default;
};

// Throws ValidationError naming `where` when an invariant fails.
void validate(const Instance& instance, const std::string& where = "instance");

/// Relation id -> instances, ordered by relation id.
using Dataset = std::map<std::string, std::vector<Instance>>;

Dataset load_fewrel(const std::filesystem::path& path);
Dataset parse_fewrel(std::string_view json_text, std::string_view source = "<string>");
std::string dump_fewrel(const Dataset& dataset);
void save_fewrel(const Dataset& dataset, const std::filesystem::path& path);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
};

// FewRel's published relations re-split for training, validation, and testing.
inline constexpr SplitSizes kFewRelSplit{50, 14, 16};

/// Relation ids per partition, each list sorted.
struct RelationSplit {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;

  friend bool operator==(const RelationSplit&, const RelationSplit&) = default;
};

// Seeded uniform shuffle of the sorted relation ids, cut into three buckets.
RelationSplit split_relations(const Dataset& dataset, std::uint64_t seed, SplitSizes sizes);

struct EpisodeSpec {
  std::size_t n_way = 5;
  std::size_t k_shot = 1;
  std::size_t q_queries = 5;
};

void validate(const EpisodeSpec& spec);

struct Query {
  Instance instance;
  std::size_t label = 0;
};

struct Episode {
  std::vector<std::string> classes;
  std::vector<std::vector<Instance>> support;
  std::vector<Query> queries;
};

// Queries are assigned to classes round-robin (query i belongs to class
// i mod N) and then shuffled, so each class needs K + ceil(q / N) instances.
Episode sample_episode(const Dataset& dataset, std::span<const std::string> relations, const EpisodeSpec& spec,
                       Rng& rng);

struct SynthConfig {
  std::size_t relations = 48;
  std::size_t concepts = 8;             // determining concepts
  std::size_t distractor_concepts = 8;  // never determine a relation
  std::size_t entities_per_concept = 20; // per (relation, role) slot, used round-robin
  std::size_t instances_per_relation = 20;
  std::size_t sentence_length = 8;      // tokens, including both mentions
  std::size_t filler_vocab = 64;
  std::size_t concept_dim = 16;
  double concept_norm = 1.0;            // expected Euclidean norm of a concept vector
  std::size_t max_concepts_per_entity = 3;
};

struct SyntheticBenchmark {
  Dataset dataset;
  std::vector<ConceptTriple> triples;
  ConceptIndex index{ConceptIndex::kDefaultMaxConcepts};
  EmbeddingTable embeddings;
  // relation id -> (head concept, tail concept)
  std::map<std::string, std::pair<std::string, std::string>> relation_concepts;
  // entity name -> its determining concept
  std::map<std::string, std::string> determining_concept;
};

// Each relation is tied to a distinct (head concept, tail concept) pair of
// determining concepts. Entities are fresh per (relation, role) slot, assigned
// to that slot's instances round-robin, and carry
// their determining concept plus up to max_concepts_per_entity - 1 distractor
// concepts. Filler tokens are drawn uniformly and independently of the label.
SyntheticBenchmark generate_synthetic(const SynthConfig& config, Rng& rng);

}  // namespace fsre
