#include "fsre/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>

#include "fsre/errors.hpp"
#include "fsre/kernels.hpp"

namespace fsre {

Vocab::Vocab() {
  for (const char* t : {"[PAD]", "[CLS]", "[SEP]", "[HEAD]", "[/HEAD]", "[TAIL]", "[/TAIL]", "[UNK]"}) add(t);
}

TokenId Vocab::add(std::string_view token) {
  const std::string key(token);
  if (const auto it = ids_.find(key); it != ids_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(key);
  ids_.emplace(key, id);
  return id;
}

TokenId Vocab::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

Vocab Vocab::build(const Dataset& dataset, std::span<const std::string> relations, std::span<const std::string> extra,
                   std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& rel : relations) {
    const auto it = dataset.find(rel);
    if (it == dataset.end()) continue;
    for (const auto& inst : it->second) {
      for (const auto& t : inst.tokens) ++counts[t];
    }
  }
  std::set<std::string> keep(extra.begin(), extra.end());
  for (const auto& [t, n] : counts) {
    if (n >= min_count) keep.insert(t);
  }
  Vocab vocab;
  for (const auto& t : keep) vocab.add(t);
  return vocab;
}

namespace {

void gaussian_fill(Matrix& m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : m.values()) v = dist(rng);
}

}  // namespace

EncoderParams EncoderParams::zeros(const EncoderConfig& c, std::size_t vocab_size) {
  if (c.dim == 0 || c.ff_dim == 0 || c.max_len < 2) throw std::invalid_argument("invalid encoder configuration");
  return EncoderParams{Matrix(vocab_size, c.dim), Matrix(c.max_len, c.dim), Matrix(c.dim, c.dim),
                       Matrix(c.dim, c.dim),      Matrix(c.dim, c.dim),     Matrix(c.dim, c.dim),
                       Matrix(c.dim, c.ff_dim),   Matrix(c.ff_dim, c.dim)};
}

EncoderParams EncoderParams::init(const EncoderConfig& c, std::size_t vocab_size, Rng& rng) {
  auto p = zeros(c, vocab_size);
  const double emb = 1.0 / std::sqrt(static_cast<double>(c.dim));
  gaussian_fill(p.token_embedding, emb, rng);
  gaussian_fill(p.position_embedding, emb, rng);
  for (auto* w : {&p.wq, &p.wk, &p.wv, &p.wo, &p.ff_in}) gaussian_fill(*w, 1.0 / std::sqrt(double(c.dim)), rng);
  gaussian_fill(p.ff_out, 1.0 / std::sqrt(static_cast<double>(c.ff_dim)), rng);
  return p;
}

std::vector<std::pair<std::string, Matrix*>> EncoderParams::tensors() {
  return {{"encoder.token_embedding", &token_embedding},
          {"encoder.position_embedding", &position_embedding},
          {"encoder.wq", &wq},
          {"encoder.wk", &wk},
          {"encoder.wv", &wv},
          {"encoder.wo", &wo},
          {"encoder.ff_in", &ff_in},
          {"encoder.ff_out", &ff_out}};
}

std::vector<std::pair<std::string, const Matrix*>> EncoderParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<EncoderParams*>(this)->tensors()) out.emplace_back(name, m);
  return out;
}

std::vector<TokenId> mark_instance(const Instance& instance, const Vocab& vocab, std::size_t budget) {
  validate(instance);
  const auto& h = instance.head;
  const auto& t = instance.tail;

  const std::size_t n = instance.tokens.size();
  const std::size_t lo = std::min(h.begin, t.begin);
  const std::size_t hi = std::max(h.end, t.end);
  constexpr std::size_t kMarkers = 4;
  if (hi - lo + kMarkers > budget) {
    throw ValidationError("entity spans need " + std::to_string(hi - lo + kMarkers) + " ids, only " +
                          std::to_string(budget) + " available");
  }
  // Widen [lo, hi) to the budget: right side first, then left.
  std::size_t room = budget - kMarkers - (hi - lo);
  std::size_t end = hi + std::min(room, n - hi);
  room -= end - hi;
  std::size_t begin = lo - std::min(room, lo);

  std::vector<TokenId> ids;
  ids.reserve(end - begin + kMarkers);
  for (std::size_t i = begin; i < end; ++i) {
    if (i == h.begin) ids.push_back(Vocab::kHeadOpen);
    if (i == t.begin) ids.push_back(Vocab::kTailOpen);
    ids.push_back(vocab.id(instance.tokens[i]));
    if (i + 1 == h.end) ids.push_back(Vocab::kHeadClose);
    if (i + 1 == t.end) ids.push_back(Vocab::kTailClose);
  }
  return ids;
}

std::vector<TokenId> tokenize_and_mark(const Instance& instance, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 2) throw ValidationError("max_len must leave room for [CLS] and [SEP]");
  std::vector<TokenId> ids{Vocab::kCls};
  const auto body = mark_instance(instance, vocab, max_len - 2);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(Vocab::kSep);
  return ids;
}

double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_derivative(double x) {
  constexpr double c = 0.7978845608028654;
  const double t = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

Encoding encode(std::span<const TokenId> ids, const EncoderParams& params) {
  EncoderTrace trace;
  return encode(ids, params, trace);
}

Encoding encode(std::span<const TokenId> ids, const EncoderParams& params, EncoderTrace& tr) {
  const std::size_t len = ids.size();
  const std::size_t d = params.dim();
  if (len > params.max_len()) {
    throw ValidationError("sequence of " + std::to_string(len) + " ids exceeds max_len " +
                          std::to_string(params.max_len()));
  }
  tr.ids.assign(ids.begin(), ids.end());
  tr.x0 = Matrix(len, d);
  for (std::size_t i = 0; i < len; ++i) {
    const auto id = static_cast<std::size_t>(ids[i]);
    if (id >= params.token_embedding.rows()) throw std::out_of_range("token id outside embedding table");
    auto row = tr.x0.row(i);
    std::copy_n(params.token_embedding.row(id).begin(), d, row.begin());
    add_inplace(row, params.position_embedding.row(i));
  }
  tr.q = matmul(tr.x0, params.wq);
  tr.k = matmul(tr.x0, params.wk);
  tr.v = matmul(tr.x0, params.wv);

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  tr.attention = matmul_nt(tr.q, tr.k);
  for (std::size_t i = 0; i < len; ++i) {
    auto row = tr.attention.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < len; ++j) {
      if (ids[j] == Vocab::kPad) continue;
      row[j] *= inv_sqrt_d;
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      if (ids[j] == Vocab::kPad) {
        row[j] = 0.0;
        continue;
      }
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    if (sum > 0.0) kernels::scale(1.0 / sum, row);  // every key is padding: the row stays zero
  }
  tr.mixed = matmul(tr.attention, tr.v);
  tr.x1 = matmul(tr.mixed, params.wo);
  add_inplace(tr.x1, tr.x0);

  tr.ff_pre = matmul(tr.x1, params.ff_in);
  tr.ff_act = tr.ff_pre;
  for (auto& v : tr.ff_act.values()) v = gelu(v);
  tr.x2 = matmul(tr.ff_act, params.ff_out);
  add_inplace(tr.x2, tr.x1);

  Encoding out;
  out.token_states = tr.x2;
  if (len > 0) out.sentence_embedding.assign(tr.x2.row(0).begin(), tr.x2.row(0).end());
  return out;
}

void encode_backward(const EncoderTrace& tr, const EncoderParams& params, const Matrix& d_states,
                     EncoderParams& grads) {
  const std::size_t len = tr.ids.size();
  const std::size_t d = params.dim();
  if (len == 0) return;

  // x2 = x1 + gelu(x1 ff_in) ff_out
  matmul_tn_acc(tr.ff_act, d_states, grads.ff_out);
  Matrix d_act = matmul_nt(d_states, params.ff_out);
  for (std::size_t i = 0; i < d_act.size(); ++i) d_act.data()[i] *= gelu_derivative(tr.ff_pre.data()[i]);
  matmul_tn_acc(tr.x1, d_act, grads.ff_in);
  Matrix d_x1 = d_states;
  matmul_nt_acc(d_act, params.ff_in, d_x1);

  // x1 = x0 + (A v) wo
  matmul_tn_acc(tr.mixed, d_x1, grads.wo);
  const Matrix d_mixed = matmul_nt(d_x1, params.wo);
  Matrix d_x0 = d_x1;

  Matrix d_attn = matmul_nt(d_mixed, tr.v);
  Matrix d_v(len, d);
  matmul_tn_acc(tr.attention, d_mixed, d_v);

  // Row-wise softmax Jacobian; masked entries have zero weight and stay zero.
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Matrix d_scores(len, len);
  for (std::size_t i = 0; i < len; ++i) {
    const auto a = tr.attention.row(i);
    const auto g = d_attn.row(i);
    const double inner = kernels::dot(a, g);
    auto out = d_scores.row(i);
    for (std::size_t j = 0; j < len; ++j) out[j] = a[j] * (g[j] - inner) * inv_sqrt_d;
  }
  const Matrix d_q = matmul(d_scores, tr.k);
  Matrix d_k(len, d);
  matmul_tn_acc(d_scores, tr.q, d_k);

  matmul_tn_acc(tr.x0, d_q, grads.wq);
  matmul_tn_acc(tr.x0, d_k, grads.wk);
  matmul_tn_acc(tr.x0, d_v, grads.wv);
  matmul_nt_acc(d_q, params.wq, d_x0);
  matmul_nt_acc(d_k, params.wk, d_x0);
  matmul_nt_acc(d_v, params.wv, d_x0);

  for (std::size_t i = 0; i < len; ++i) {
    add_inplace(grads.token_embedding.row(static_cast<std::size_t>(tr.ids[i])), d_x0.row(i));
    add_inplace(grads.position_embedding.row(i), d_x0.row(i));
  }
}

}  // namespace fsre
