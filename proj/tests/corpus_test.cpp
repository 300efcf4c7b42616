#include "doctest.h"

#include <stdexcept>
#include <algorithm>
#include <filesystem>
#include <set>
#include <string>

#include "fsre/corpus.hpp"
#include "fsre/errors.hpp"

using namespace fsre;

namespace {
const std::filesystem::path kFixtures = FSRE_FIXTURE_DIR;

Dataset numbered_dataset(std::size_t relations, std::size_t per_relation) {
  Dataset d;
  for (std::size_t r = 0; r < relations; ++r) {
    const auto rel = "R" + std::to_string(100 + r);
    for (std::size_t i = 0; i < per_relation; ++i) {
      d[rel].push_back({{"a" + std::to_string(i), "b", "c"}, {0, 1}, {2, 3}, "a", "c", rel});
    }
  }
  return d;
}

// Shuffle oracle mirroring the documented split: sorted ids, seeded shuffle
// from the "split" substream, cut in order.
RelationSplit oracle_split(const Dataset& d, std::uint64_t seed, SplitSizes s) {
  std::vector<std::string> ids;
  for (const auto& [k, _] : d) ids.push_back(k);
  auto rng = substream(seed, "split");
  std::shuffle(ids.begin(), ids.end(), rng);
  RelationSplit out;
  out.train.assign(ids.begin(), ids.begin() + s.train);
  out.valid.assign(ids.begin() + s.train, ids.begin() + s.train + s.valid);
  out.test.assign(ids.begin() + s.train + s.valid, ids.end());
  for (auto* v : {&out.train, &out.valid, &out.test}) std::sort(v->begin(), v->end());
  return out;
}
}  // namespace

TEST_CASE("FewRel fixture loads") {
  const auto d = load_fewrel(kFixtures / "fewrel_small.json");
  REQUIRE(d.size() == 2);
  CHECK(d.at("P17").size() == 3);
  CHECK(d.at("P26").size() == 3);

  const auto& ny = d.at("P17")[2];
  CHECK(ny.head == TokenSpan{3, 5});
  CHECK(ny.tail == TokenSpan{8, 10});
  CHECK(ny.head_name == "new york");
  CHECK(ny.relation == "P17");

  // Only the first position list is used.
  CHECK(d.at("P26")[2].tail == TokenSpan{4, 6});
}

TEST_CASE("FewRel round trip") {
  const auto d = load_fewrel(kFixtures / "fewrel_small.json");
  CHECK(parse_fewrel(dump_fewrel(d)) == d);
}

TEST_CASE("FewRel errors") {
  const std::string oob =
      R"({"R": [{"tokens": ["a","b"], "h": ["a","",[[0]]], "t": ["x","",[[2]]]}]})";
  try {
    parse_fewrel(oob, "bad.json");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'R'") != std::string::npos);
    CHECK(msg.find("record 0") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_fewrel("{not json"), ParseError);
  try {
    parse_fewrel(R"({"P1": [{"tokens": ["a"]}]})");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("'P1' record 0") != std::string::npos);
  }
  CHECK_THROWS_AS(load_fewrel("/no/such/fewrel.json"), std::runtime_error);
}

TEST_CASE("split_relations") {
  const auto d = numbered_dataset(80, 1);
  const auto s = split_relations(d, 7, kFewRelSplit);
  CHECK(s.train.size() == 50);
  CHECK(s.valid.size() == 14);
  CHECK(s.test.size() == 16);
  CHECK(s == oracle_split(d, 7, kFewRelSplit));
  CHECK(s == split_relations(d, 7, kFewRelSplit));
  CHECK_FALSE(s == split_relations(d, 8, kFewRelSplit));

  std::set<std::string> all;
  for (const auto* part : {&s.train, &s.valid, &s.test}) all.insert(part->begin(), part->end());
  CHECK(all.size() == 80);

  const auto everything = split_relations(d, 7, {80, 0, 0});
  CHECK(everything.train.size() == 80);
  CHECK(everything.test.empty());
  CHECK_THROWS_AS(split_relations(d, 7, {50, 14, 15}), SamplingError);

  // Only the relation id set matters, not the instances.
  CHECK(split_relations(numbered_dataset(80, 3), 7, kFewRelSplit) == s);
}

TEST_CASE("sample_episode shapes") {
  const auto d = numbered_dataset(12, 6);
  std::vector<std::string> rels;
  for (const auto& [k, _] : d) rels.push_back(k);

  for (const auto& spec : {EpisodeSpec{5, 1, 5}, EpisodeSpec{10, 1, 10}, EpisodeSpec{3, 2, 7}}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto rng = substream(seed, "eval");
      const auto e = sample_episode(d, rels, spec, rng);
      CHECK(e.classes.size() == spec.n_way);
      CHECK(std::set(e.classes.begin(), e.classes.end()).size() == spec.n_way);
      REQUIRE(e.support.size() == spec.n_way);
      for (std::size_t c = 0; c < spec.n_way; ++c) {
        CHECK(e.support[c].size() == spec.k_shot);
        for (const auto& s : e.support[c]) CHECK(s.relation == e.classes[c]);
      }
      CHECK(e.queries.size() == spec.q_queries);
      for (const auto& q : e.queries) {
        REQUIRE(q.label < spec.n_way);
        CHECK(q.instance.relation == e.classes[q.label]);
        for (const auto& s : e.support[q.label]) CHECK_FALSE(s == q.instance);
      }
    }
  }
}

TEST_CASE("sample_episode determinism and exhaustion") {
  const auto d = numbered_dataset(6, 4);
  std::vector<std::string> rels;
  for (const auto& [k, _] : d) rels.push_back(k);
  auto r1 = substream(3, "train");
  auto r2 = substream(3, "train");
  const auto a = sample_episode(d, rels, {5, 1, 5}, r1);
  const auto b = sample_episode(d, rels, {5, 1, 5}, r2);
  CHECK(a.classes == b.classes);
  CHECK(a.support == b.support);
  REQUIRE(a.queries.size() == b.queries.size());
  for (std::size_t i = 0; i < a.queries.size(); ++i) {
    CHECK(a.queries[i].instance == b.queries[i].instance);
    CHECK(a.queries[i].label == b.queries[i].label);
  }

  auto exhausted = numbered_dataset(2, 1);
  std::vector<std::string> two{"R100", "R101"};
  auto rng = substream(0, "eval");
  try {
    sample_episode(exhausted, two, {2, 1, 2}, rng);
    FAIL("expected a sampling error");
  } catch (const SamplingError& e) {
    CHECK(std::string(e.what()).find("'R10") != std::string::npos);
  }
  CHECK_THROWS_AS(sample_episode(d, rels, {7, 1, 1}, rng), SamplingError);
  CHECK_THROWS_AS(sample_episode(d, rels, {1, 1, 1}, rng), SamplingError);
}

TEST_CASE("synthetic benchmark construction") {
  SynthConfig cfg;
  cfg.relations = 5;
  cfg.concepts = 4;
  cfg.distractor_concepts = 3;
  cfg.entities_per_concept = 4;
  cfg.instances_per_relation = 6;
  auto rng = substream(1, "synthetic");
  const auto b = generate_synthetic(cfg, rng);

  CHECK(b.dataset.size() == 5);
  std::set<std::pair<std::string, std::string>> pairs;
  for (const auto& [rel, p] : b.relation_concepts) pairs.insert(p);
  CHECK(pairs.size() == 5);

  for (const auto& [rel, instances] : b.dataset) {
    CHECK(instances.size() == 6);
    for (const auto& inst : instances) {
      validate(inst);
      CHECK(inst.tokens.size() == cfg.sentence_length);
      const auto concepts = b.index.concepts_of(inst.head_name);
      CHECK(concepts.size() >= 1);
      CHECK(concepts.size() <= 3);
      const auto& det = b.determining_concept.at(inst.head_name);
      CHECK(det == b.relation_concepts.at(rel).first);
      CHECK(std::count(concepts.begin(), concepts.end(), det) == 1);
      for (const auto& c : concepts) {
        if (c != det) CHECK(c[0] == 'g');
        CHECK(b.embeddings.find(c) != nullptr);
      }
      CHECK(b.determining_concept.at(inst.tail_name) == b.relation_concepts.at(rel).second);
    }
  }

  cfg.relations = 17;
  CHECK_THROWS_AS(generate_synthetic(cfg, rng), ValidationError);
}

TEST_CASE("synthetic fillers do not depend on the relation") {
  SynthConfig cfg;
  cfg.relations = 4;
  cfg.concepts = 2;
  cfg.instances_per_relation = 400;
  cfg.filler_vocab = 4;
  auto rng = substream(9, "synthetic");
  const auto b = generate_synthetic(cfg, rng);
  // Each filler token should appear at about the same rate in every relation.
  for (const auto& [rel, instances] : b.dataset) {
    std::map<std::string, double> freq;
    double total = 0;
    for (const auto& inst : instances) {
      for (std::size_t t = 0; t < inst.tokens.size(); ++t) {
        if (t >= inst.head.begin && t < inst.head.end) continue;
        if (t >= inst.tail.begin && t < inst.tail.end) continue;
        ++freq[inst.tokens[t]];
        ++total;
      }
    }
    CHECK(freq.size() == 4);
    for (const auto& [tok, n] : freq) CHECK(n / total == doctest::Approx(0.25).epsilon(0.15));
  }
}
