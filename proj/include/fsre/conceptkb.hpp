#pragma once

// Entity -> concept knowledge base built from (Entity, IsA, Concept) triples,
// plus the pre-trained concept embedding table.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fsre/tensor.hpp"

namespace fsre {

// Lowercase, trim, and collapse internal whitespace runs to one space.
std::string normalize_entity(std::string_view mention);

struct ConceptTriple {
  std::string entity;
  std::string concept_name;
  std::optional<double> confidence;
};

class ConceptIndex {
 public:
  static constexpr std::size_t kDefaultMaxConcepts = 8;

  explicit ConceptIndex(std::size_t max_concepts = kDefaultMaxConcepts);

  // Builds the index: entities normalized, duplicates merged (keeping the
  // highest confidence), each list sorted by descending confidence then
  // concept name and capped at max_concepts. Missing confidence counts as 0.
  static ConceptIndex from_triples(std::span<const ConceptTriple> triples,
                                   std::size_t max_concepts = kDefaultMaxConcepts);

  // Empty span for unknown entities. The mention is normalized first.
  std::span<const std::string> concepts_of(std::string_view mention) const;

  std::size_t max_concepts() const { return max_concepts_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Sorted by entity for deterministic iteration.
  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

 private:
  std::size_t max_concepts_;
  std::map<std::string, std::vector<std::string>> entries_;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

  // Throws ValidationError when the vector length differs from dim().
  void insert(std::string token, Vector vec);
  const Vector* find(std::string_view token) const;

  // Tokens in insertion order.
  const std::vector<std::string>& tokens() const { return order_; }

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, Vector> vectors_;
  std::vector<std::string> order_;
};

struct ConceptCandidate {
  std::string name;
  Vector embedding;
};

// Lines are `entity<TAB>concept[<TAB>confidence]`; blank lines are skipped.
ConceptIndex load_triples(const std::filesystem::path& path,
                          std::size_t max_concepts = ConceptIndex::kDefaultMaxConcepts);
ConceptIndex parse_triples(std::string_view text, std::size_t max_concepts = ConceptIndex::kDefaultMaxConcepts,
                           std::string_view source = "<string>");
void save_triples(std::span<const ConceptTriple> triples, const std::filesystem::path& path);

// word2vec text format: `count dim` header, then `token v1 ... v_dim` rows.
EmbeddingTable load_embeddings(const std::filesystem::path& path);
EmbeddingTable parse_embeddings(std::string_view text, std::string_view source = "<string>");
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

// Candidate concepts for a mention, in index order. A concept without its own
// row is replaced by the mean of its underscore-separated words when every
// word has a row; otherwise it is dropped.
std::vector<ConceptCandidate> lookup_concepts(const ConceptIndex& index, const EmbeddingTable& table,
                                              std::string_view entity_mention);

}  // namespace fsre
