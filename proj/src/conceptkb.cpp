#include "fsre/conceptkb.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fsre/errors.hpp"

namespace fsre {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      return parts;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

// Iterates lines, tracking 1-based line numbers, stripping a trailing CR.
template <typename F>
void for_each_line(std::string_view text, F&& fn) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (end == text.size() && line.empty()) break;
    fn(line_no, line);
    start = end + 1;
  }
}

}  // namespace

std::string normalize_entity(std::string_view mention) {
  std::string out;
  out.reserve(mention.size());
  bool pending_space = false;
  for (unsigned char c : mention) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

ConceptIndex::ConceptIndex(std::size_t max_concepts) : max_concepts_(max_concepts) {
  if (max_concepts_ == 0) throw std::invalid_argument("ConceptIndex: max_concepts must be positive");
}

ConceptIndex ConceptIndex::from_triples(std::span<const ConceptTriple> triples, std::size_t max_concepts) {
  ConceptIndex index(max_concepts);
  std::map<std::string, std::map<std::string, double>> merged;
  for (const auto& t : triples) {
    auto entity = normalize_entity(t.entity);
    auto concept_name = std::string(trim(t.concept_name));
    if (entity.empty() || concept_name.empty()) {
      throw ValidationError("concept triple with empty entity or concept");
    }
    const double conf = t.confidence.value_or(0.0);
    auto& slot = merged[entity];
    auto [it, inserted] = slot.emplace(std::move(concept_name), conf);
    if (!inserted) it->second = std::max(it->second, conf);
  }
  for (auto& [entity, concepts] : merged) {
    std::vector<std::pair<std::string, double>> ranked(concepts.begin(), concepts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (ranked.size() > max_concepts) ranked.resize(max_concepts);
    auto& out = index.entries_[entity];
    for (auto& r : ranked) out.push_back(std::move(r.first));
  }
  return index;
}

std::span<const std::string> ConceptIndex::concepts_of(std::string_view mention) const {
  const auto it = entries_.find(normalize_entity(mention));
  if (it == entries_.end()) return {};
  return it->second;
}

EmbeddingTable::EmbeddingTable(std::size_t dim) : dim_(dim) {
  if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
}

void EmbeddingTable::insert(std::string token, Vector vec) {
  if (vec.size() != dim_) {
    throw ValidationError("embedding for '" + token + "' has " + std::to_string(vec.size()) +
                          " values, expected " + std::to_string(dim_));
  }
  auto [it, inserted] = vectors_.insert_or_assign(token, std::move(vec));
  if (inserted) order_.push_back(std::move(token));
}

const Vector* EmbeddingTable::find(std::string_view token) const {
  const auto it = vectors_.find(std::string(token));
  return it == vectors_.end() ? nullptr : &it->second;
}

ConceptIndex parse_triples(std::string_view text, std::size_t max_concepts, std::string_view source) {
  std::vector<ConceptTriple> triples;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    if (trim(line).empty()) return;
    const auto fields = split(line, '\t');
    const auto where = std::string(source) + ":" + std::to_string(line_no);
    if (fields.size() < 2 || fields.size() > 3) {
      throw ParseError(where + ": expected 2 or 3 tab-separated fields, got " + std::to_string(fields.size()));
    }
    ConceptTriple t{std::string(fields[0]), std::string(fields[1]), std::nullopt};
    if (fields.size() == 3) {
      const auto conf = parse_double(fields[2]);
      if (!conf || *conf < 0.0) {
        throw ParseError(where + ": confidence '" + std::string(fields[2]) + "' is not a non-negative number");
      }
      t.confidence = conf;
    }
    if (normalize_entity(t.entity).empty() || trim(t.concept_name).empty()) {
      throw ParseError(where + ": empty entity or concept");
    }
    triples.push_back(std::move(t));
  });
  return ConceptIndex::from_triples(triples, max_concepts);
}

ConceptIndex load_triples(const std::filesystem::path& path, std::size_t max_concepts) {
  return parse_triples(read_file(path), max_concepts, path.string());
}

void save_triples(std::span<const ConceptTriple> triples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.precision(17);
  for (const auto& t : triples) {
    out << t.entity << '\t' << t.concept_name;
    if (t.confidence) out << '\t' << *t.confidence;
    out << '\n';
  }
}

EmbeddingTable parse_embeddings(std::string_view text, std::string_view source) {
  std::optional<EmbeddingTable> table;
  std::size_t expected = 0;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto where = std::string(source) + ":" + std::to_string(line_no);
    std::istringstream fields{std::string(line)};
    std::vector<std::string> parts;
    for (std::string p; fields >> p;) parts.push_back(std::move(p));
    if (!table) {
      if (parts.size() != 2) throw ParseError(where + ": header must be `vocab_size dim`");
      std::size_t count = 0, dim = 0;
      const auto r1 = std::from_chars(parts[0].data(), parts[0].data() + parts[0].size(), count);
      const auto r2 = std::from_chars(parts[1].data(), parts[1].data() + parts[1].size(), dim);
      if (r1.ec != std::errc() || r2.ec != std::errc() || r1.ptr != parts[0].data() + parts[0].size() ||
          r2.ptr != parts[1].data() + parts[1].size() || dim == 0) {
        throw ParseError(where + ": header must be `vocab_size dim` with positive dim");
      }
      expected = count;
      table.emplace(dim);
      return;
    }
    if (parts.empty()) return;
    if (parts.size() != table->dim() + 1) {
      throw ParseError(where + ": expected " + std::to_string(table->dim()) + " values after token, got " +
                       std::to_string(parts.size() - 1));
    }
    Vector vec;
    vec.reserve(table->dim());
    for (std::size_t i = 1; i < parts.size(); ++i) {
      const auto v = parse_double(parts[i]);
      if (!v) throw ParseError(where + ": '" + parts[i] + "' is not a number");
      vec.push_back(*v);
    }
    table->insert(std::move(parts[0]), std::move(vec));
  });
  if (!table) throw ParseError(std::string(source) + ": missing header line");
  if (table->size() != expected) {
    throw ParseError(std::string(source) + ": header declares " + std::to_string(expected) + " rows, found " +
                     std::to_string(table->size()));
  }
  return *std::move(table);
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(read_file(path), path.string());
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << table.size() << ' ' << table.dim() << '\n';
  char buf[32];
  for (const auto& token : table.tokens()) {
    out << token;
    for (double v : *table.find(token)) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), v);
      out << ' ' << std::string_view(buf, res.ptr - buf);
    }
    out << '\n';
  }
}

std::vector<ConceptCandidate> lookup_concepts(const ConceptIndex& index, const EmbeddingTable& table,
                                              std::string_view entity_mention) {
  std::vector<ConceptCandidate> out;
  for (const auto& concept_name : index.concepts_of(entity_mention)) {
    if (const auto* vec = table.find(concept_name)) {
      out.push_back({concept_name, *vec});
      continue;
    }
    const auto words = split(concept_name, '_');
    Vector mean(table.dim(), 0.0);
    std::size_t used = 0;
    bool complete = true;
    for (const auto w : words) {
      if (w.empty()) continue;
      const auto* wv = table.find(w);
      if (wv == nullptr) {
        complete = false;
        break;
      }
      add_inplace(mean, *wv);
      ++used;
    }
    if (!complete || used == 0) continue;
    for (auto& v : mean) v /= static_cast<double>(used);
    out.push_back({concept_name, std::move(mean)});
  }
  return out;
}

}  // namespace fsre
