#pragma once

// Single-block transformer encoder over entity-marked token sequences.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fsre/corpus.hpp"
#include "fsre/random.hpp"
#include "fsre/tensor.hpp"

namespace fsre {

using TokenId = int;

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kCls = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kHeadOpen = 3;
  static constexpr TokenId kHeadClose = 4;
  static constexpr TokenId kTailOpen = 5;
  static constexpr TokenId kTailClose = 6;
  static constexpr TokenId kUnk = 7;
  static constexpr std::size_t kReserved = 8;

  Vocab();

  // Returns the existing id when the token is already present.
  TokenId add(std::string_view token);
  // kUnk for unknown tokens.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Tokens occurring at least `min_count` times in the given relations'
  // instances, in sorted order, plus every `extra` token.
  static Vocab build(const Dataset& dataset, std::span<const std::string> relations,
                     std::span<const std::string> extra = {}, std::size_t min_count = 1);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

enum class Pooling { cls, mean };

struct EncoderConfig {
  std::size_t dim = 64;
  std::size_t ff_dim = 128;
  std::size_t max_len = 128;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct EncoderParams {
  Matrix token_embedding;     // |V| x d
  Matrix position_embedding;  // L_max x d
  Matrix wq, wk, wv, wo;      // d x d
  Matrix ff_in;               // d x d_ff
  Matrix ff_out;              // d_ff x d

  static EncoderParams zeros(const EncoderConfig& config, std::size_t vocab_size);
  static EncoderParams init(const EncoderConfig& config, std::size_t vocab_size, Rng& rng);

  std::size_t dim() const { return wq.rows(); }
  std::size_t max_len() const { return position_embedding.rows(); }

  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
};

struct Encoding {
  Matrix token_states;       // L x d
  Vector sentence_embedding; // state at position 0
};

// Marked tokens of one instance without [CLS]/[SEP]:
//   ... [HEAD] head tokens [/HEAD] ... [TAIL] tail tokens [/TAIL] ...
// When the result exceeds `budget`, tokens outside both spans are trimmed
// (right side first); throws ValidationError when the spans alone do not fit.
std::vector<TokenId> mark_instance(const Instance& instance, const Vocab& vocab, std::size_t budget);

// [CLS] marked tokens [SEP], at most max_len ids.
std::vector<TokenId> tokenize_and_mark(const Instance& instance, const Vocab& vocab, std::size_t max_len);

// Intermediate values kept for the backward pass.
struct EncoderTrace {
  std::vector<TokenId> ids;
  Matrix x0, q, k, v, attention, mixed, x1, ff_pre, ff_act, x2;
};

Encoding encode(std::span<const TokenId> ids, const EncoderParams& params);
Encoding encode(std::span<const TokenId> ids, const EncoderParams& params, EncoderTrace& trace);

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(token_states).
void encode_backward(const EncoderTrace& trace, const EncoderParams& params, const Matrix& d_states,
                     EncoderParams& grads);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace fsre
