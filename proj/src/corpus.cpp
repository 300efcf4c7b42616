#include "fsre/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fsre/errors.hpp"
#include "json.hpp"

namespace fsre {
namespace {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// FewRel descriptor: [name, id, [[p0, p1, ...], ...]]. The span is the leading
// contiguous run of the first position list.
TokenSpan parse_descriptor(const json& desc, std::size_t n_tokens, std::string* name, const std::string& where) {
  if (!desc.is_array() || desc.size() < 3 || !desc[0].is_string() || !desc[2].is_array() || desc[2].empty() ||
      !desc[2][0].is_array() || desc[2][0].empty()) {
    throw ParseError(where + ": entity descriptor must be [name, id, [[positions...]]]");
  }
  *name = desc[0].get<std::string>();
  const auto& positions = desc[2][0];
  std::vector<long long> idx;
  for (const auto& p : positions) {
    if (!p.is_number_integer()) throw ParseError(where + ": entity position is not an integer");
    idx.push_back(p.get<long long>());
  }
  for (long long i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= n_tokens) {
      throw ValidationError(where + ": entity position " + std::to_string(i) + " out of bounds for " +
                            std::to_string(n_tokens) + " tokens");
    }
  }
  std::size_t end = 1;
  while (end < idx.size() && idx[end] == idx[end - 1] + 1) ++end;
  return {static_cast<std::size_t>(idx[0]), static_cast<std::size_t>(idx[end - 1]) + 1};
}

json descriptor(const std::string& name, TokenSpan span) {
  json positions = json::array();
  for (std::size_t i = span.begin; i < span.end; ++i) positions.push_back(i);
  return json::array({name, "", json::array({positions})});
}

}  // namespace

void validate(const Instance& instance, const std::string& where) {
  if (instance.tokens.empty()) throw ValidationError(where + ": empty token list");
  if (instance.relation.empty()) throw ValidationError(where + ": empty relation id");
  const auto n = instance.tokens.size();
  for (const auto& [label, span] : {std::pair{"head", instance.head}, std::pair{"tail", instance.tail}}) {
    if (!(span.begin < span.end && span.end <= n)) {
      throw ValidationError(where + ": " + label + " span [" + std::to_string(span.begin) + "," +
                            std::to_string(span.end) + ") invalid for " + std::to_string(n) + " tokens");
    }
  }
}

Dataset parse_fewrel(std::string_view json_text, std::string_view source) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(source) + ": " + e.what());
  }
  if (!root.is_object()) throw ParseError(std::string(source) + ": top level must be an object keyed by relation");
  Dataset dataset;
  for (const auto& [relation, records] : root.items()) {
    const auto rel_where = std::string(source) + ": relation '" + relation + "'";
    if (!records.is_array()) throw ParseError(rel_where + ": value must be an array of records");
    auto& out = dataset[relation];
    out.reserve(records.size());
    for (std::size_t r = 0; r < records.size(); ++r) {
      const auto where = rel_where + " record " + std::to_string(r);
      const auto& rec = records[r];
      if (!rec.is_object() || !rec.contains("tokens") || !rec.contains("h") || !rec.contains("t")) {
        throw ParseError(where + ": record needs 'tokens', 'h' and 't'");
      }
      Instance inst;
      inst.relation = relation;
      if (!rec["tokens"].is_array()) throw ParseError(where + ": 'tokens' must be an array");
      for (const auto& tok : rec["tokens"]) {
        if (!tok.is_string()) throw ParseError(where + ": token is not a string");
        inst.tokens.push_back(tok.get<std::string>());
      }
      inst.head = parse_descriptor(rec["h"], inst.tokens.size(), &inst.head_name, where + " head");
      inst.tail = parse_descriptor(rec["t"], inst.tokens.size(), &inst.tail_name, where + " tail");
      validate(inst, where);
      out.push_back(std::move(inst));
    }
  }
  return dataset;
}

Dataset load_fewrel(const std::filesystem::path& path) { return parse_fewrel(read_file(path), path.string()); }

std::string dump_fewrel(const Dataset& dataset) {
  json root = json::object();
  for (const auto& [relation, instances] : dataset) {
    json records = json::array();
    for (const auto& inst : instances) {
      records.push_back({{"tokens", inst.tokens},
                         {"h", descriptor(inst.head_name, inst.head)},
                         {"t", descriptor(inst.tail_name, inst.tail)}});
    }
    root[relation] = std::move(records);
  }
  return root.dump();
}

void save_fewrel(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << dump_fewrel(dataset) << '\n';
}

RelationSplit split_relations(const Dataset& dataset, std::uint64_t seed, SplitSizes sizes) {
  if (sizes.train + sizes.valid + sizes.test != dataset.size()) {
    throw SamplingError("split sizes " + std::to_string(sizes.train) + "/" + std::to_string(sizes.valid) + "/" +
                        std::to_string(sizes.test) + " do not sum to " + std::to_string(dataset.size()) +
                        " relations");
  }
  std::vector<std::string> ids;
  ids.reserve(dataset.size());
  for (const auto& [relation, _] : dataset) ids.push_back(relation);
  auto rng = substream(seed, "split");
  std::shuffle(ids.begin(), ids.end(), rng);

  RelationSplit split;
  const auto cut = [&](std::size_t from, std::size_t count) {
    std::vector<std::string> part(ids.begin() + static_cast<std::ptrdiff_t>(from),
                                  ids.begin() + static_cast<std::ptrdiff_t>(from + count));
    std::sort(part.begin(), part.end());
    return part;
  };
  split.train = cut(0, sizes.train);
  split.valid = cut(sizes.train, sizes.valid);
  split.test = cut(sizes.train + sizes.valid, sizes.test);
  return split;
}

void validate(const EpisodeSpec& spec) {
  if (spec.n_way < 2) throw SamplingError("n_way must be at least 2");
  if (spec.k_shot < 1) throw SamplingError("k_shot must be positive");
  if (spec.q_queries < 1) throw SamplingError("q_queries must be positive");
}

Episode sample_episode(const Dataset& dataset, std::span<const std::string> relations, const EpisodeSpec& spec,
                       Rng& rng) {
  validate(spec);
  if (relations.size() < spec.n_way) {
    throw SamplingError("cannot sample " + std::to_string(spec.n_way) + " classes from " +
                        std::to_string(relations.size()) + " relations");
  }
  std::vector<std::string> pool(relations.begin(), relations.end());
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(spec.n_way);

  Episode episode;
  episode.classes = pool;
  episode.support.resize(spec.n_way);
  for (std::size_t c = 0; c < spec.n_way; ++c) {
    const std::size_t queries_here = spec.q_queries / spec.n_way + (c < spec.q_queries % spec.n_way ? 1 : 0);
    const auto it = dataset.find(pool[c]);
    if (it == dataset.end()) throw SamplingError("relation '" + pool[c] + "' is not in the dataset");
    const auto& instances = it->second;
    const std::size_t needed = spec.k_shot + queries_here;
    if (instances.size() < needed) {
      throw SamplingError("relation '" + pool[c] + "' has " + std::to_string(instances.size()) +
                          " instances, episode needs " + std::to_string(needed));
    }
    std::vector<std::size_t> order(instances.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < spec.k_shot; ++k) episode.support[c].push_back(instances[order[k]]);
    for (std::size_t q = 0; q < queries_here; ++q) {
      episode.queries.push_back({instances[order[spec.k_shot + q]], c});
    }
  }
  std::shuffle(episode.queries.begin(), episode.queries.end(), rng);
  return episode;
}

SyntheticBenchmark generate_synthetic(const SynthConfig& config, Rng& rng) {
  if (config.concepts == 0 || config.relations == 0) throw ValidationError("synthetic: need relations and concepts");
  if (config.relations > config.concepts * config.concepts) {
    throw ValidationError("synthetic: " + std::to_string(config.relations) + " relations exceed the " +
                          std::to_string(config.concepts * config.concepts) + " available concept pairs");
  }
  if (config.sentence_length < 2) throw ValidationError("synthetic: sentence_length must be at least 2");
  if (config.filler_vocab == 0 && config.sentence_length > 2) {
    throw ValidationError("synthetic: filler_vocab must be positive");
  }
  if (config.max_concepts_per_entity == 0) throw ValidationError("synthetic: max_concepts_per_entity must be positive");
  if (config.entities_per_concept == 0 || config.instances_per_relation == 0) {
    throw ValidationError("synthetic: entities_per_concept and instances_per_relation must be positive");
  }

  const auto numbered = [](const char* prefix, std::size_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, i);
    return std::string(buf);
  };

  SyntheticBenchmark bench;
  bench.embeddings = EmbeddingTable(config.concept_dim);

  std::normal_distribution<double> gauss(0.0, config.concept_norm / std::sqrt(static_cast<double>(config.concept_dim)));
  std::vector<std::string> determining, distractors;
  for (std::size_t c = 0; c < config.concepts; ++c) determining.push_back(numbered("c", c, 1));
  for (std::size_t c = 0; c < config.distractor_concepts; ++c) distractors.push_back(numbered("g", c, 1));
  for (const auto* group : {&determining, &distractors}) {
    for (const auto& name : *group) {
      Vector v(config.concept_dim);
      for (auto& x : v) x = gauss(rng);
      bench.embeddings.insert(name, std::move(v));
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t h = 0; h < config.concepts; ++h) {
    for (std::size_t t = 0; t < config.concepts; ++t) pairs.emplace_back(h, t);
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);

  std::uniform_real_distribution<double> confidence(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> n_concepts(
      1, std::min(config.max_concepts_per_entity, 1 + config.distractor_concepts));
  std::size_t entity_counter = 0;
  const auto make_entities = [&](const std::string& concept_name) {
    std::vector<std::string> names;
    for (std::size_t e = 0; e < config.entities_per_concept; ++e) {
      auto name = "e" + std::to_string(entity_counter++);
      bench.triples.push_back({name, concept_name, confidence(rng)});
      std::vector<std::string> extra = distractors;
      std::shuffle(extra.begin(), extra.end(), rng);
      extra.resize(n_concepts(rng) - 1);
      for (const auto& d : extra) bench.triples.push_back({name, d, confidence(rng)});
      bench.determining_concept[name] = concept_name;
      names.push_back(std::move(name));
    }
    return names;
  };

  const int rel_width = static_cast<int>(std::to_string(config.relations - 1).size());
  std::uniform_int_distribution<std::size_t> filler(0, config.filler_vocab == 0 ? 0 : config.filler_vocab - 1);
  std::uniform_int_distribution<std::size_t> position(0, config.sentence_length - 1);
  for (std::size_t r = 0; r < config.relations; ++r) {
    const auto relation = numbered("R", r, rel_width);
    const auto& head_concept = determining[pairs[r].first];
    const auto& tail_concept = determining[pairs[r].second];
    bench.relation_concepts[relation] = {head_concept, tail_concept};
    const auto heads = make_entities(head_concept);
    const auto tails = make_entities(tail_concept);

    auto& instances = bench.dataset[relation];
    for (std::size_t i = 0; i < config.instances_per_relation; ++i) {
      Instance inst;
      inst.relation = relation;
      inst.head_name = heads[i % heads.size()];
      inst.tail_name = tails[i % tails.size()];
      const std::size_t hp = position(rng);
      std::size_t tp = position(rng);
      while (tp == hp) tp = position(rng);
      inst.tokens.resize(config.sentence_length);
      for (std::size_t t = 0; t < config.sentence_length; ++t) {
        if (t == hp) {
          inst.tokens[t] = inst.head_name;
        } else if (t == tp) {
          inst.tokens[t] = inst.tail_name;
        } else {
          inst.tokens[t] = numbered("w", filler(rng), 1);
        }
      }
      inst.head = {hp, hp + 1};
      inst.tail = {tp, tp + 1};
      instances.push_back(std::move(inst));
    }
  }
  bench.index = ConceptIndex::from_triples(bench.triples, std::max<std::size_t>(config.max_concepts_per_entity, 1));
  return bench;
}

}  // namespace fsre
