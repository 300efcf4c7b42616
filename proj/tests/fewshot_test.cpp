#include "doctest.h"

#include <stdexcept>
#include <algorithm>
#include <cmath>
#include <filesystem>

#include "fsre/errors.hpp"
#include "fsre/fewshot.hpp"
#include "fsre/gradcheck.hpp"

using namespace fsre;

namespace {

struct Setup {
  SyntheticBenchmark bench;
  RelationSplit split;
  ConceptSource concepts() const { return {&bench.index, &bench.embeddings}; }
};

Setup small_setup(std::uint64_t seed = 1) {
  SynthConfig sc;
  sc.relations = 16;
  sc.concepts = 6;
  sc.distractor_concepts = 4;
  sc.instances_per_relation = 10;
  sc.entities_per_concept = 10;
  sc.sentence_length = 6;
  sc.filler_vocab = 12;
  sc.concept_dim = 8;
  auto rng = substream(seed, "synthetic");
  Setup s{generate_synthetic(sc, rng), {}};
  s.split = split_relations(s.bench.dataset, seed, {10, 0, 6});
  return s;
}

ModelConfig small_config(Variant v, std::uint64_t seed = 1) {
  ModelConfig c;
  c.variant = v;
  c.encoder = {8, 16, 40};
  c.projection_dim = 8;
  c.concept_dim = 8;
  c.seed = seed;
  return c;
}

Episode episode_from(const Setup& s, EpisodeSpec spec, std::uint64_t seed) {
  auto rng = substream(seed, "eval");
  return sample_episode(s.bench.dataset, s.split.train, spec, rng);
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (auto v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK_THROWS(parse_variant("bogus"));
  CHECK(parse_pooling("cls") == Pooling::cls);
  CHECK(parse_aggregation("sum") == Aggregation::sum);
  CHECK(parse_optimizer("adam") == OptimizerKind::adam);
  CHECK(uses_gate(Variant::full));
  CHECK(uses_gate(Variant::no_fusion));
  CHECK_FALSE(uses_gate(Variant::no_att));
  CHECK_FALSE(uses_concepts(Variant::sentence_only));
}

TEST_CASE("pair logit composes encode, gate, fuse, and pool") {
  auto fx = make_gradcheck_fixture(Variant::full, 0);
  const auto& m = fx.model;
  const auto logit = pair_logit(fx.query, fx.support, m, fx.concepts());

  // Oracle: run each module by hand.
  const auto q = prepare_instance(fx.query, m, fx.concepts());
  const auto s = prepare_instance(fx.support, m, fx.concepts());
  std::vector<TokenId> ids{Vocab::kCls};
  ids.insert(ids.end(), q.marked.begin(), q.marked.end());
  ids.push_back(Vocab::kSep);
  ids.insert(ids.end(), s.marked.begin(), s.marked.end());
  ids.push_back(Vocab::kSep);
  const auto enc = encode(ids, m.params.encoder);
  std::vector<Vector> selected;
  for (const auto* side : {&q, &s}) {
    for (std::size_t e = 0; e < 2; ++e) {
      if (side->candidates[e].rows() == 0) continue;
      const auto g = gate_entity(enc.sentence_embedding, side->candidates[e], m.params.projection, {m.config.alpha});
      if (g.decision.selected) selected.push_back(g.selected_vector);
    }
  }
  CHECK_FALSE(selected.empty());
  const auto seq = append_concepts(enc.token_states, selected, m.params.fusion);
  const auto fused = fuse(seq, m.params.fusion, ids.size(), m.config.fusion_heads);
  const auto pooled = pool_fused(fused, m.config.pooling);
  double expected = m.params.head_b(0, 0);
  for (std::size_t i = 0; i < pooled.size(); ++i) expected += m.params.head_w(0, i) * pooled[i];
  CHECK(logit == doctest::Approx(expected).epsilon(1e-12));

  // Equal inputs give equal logits.
  CHECK(pair_logit(fx.query, fx.query, m, fx.concepts()) == pair_logit(fx.query, fx.query, m, fx.concepts()));
}

TEST_CASE("zero pair head scores every pair as 0") {
  for (auto v : kAllVariants) {
    auto fx = make_gradcheck_fixture(v, 0);
    fx.model.params.head_w.fill(0.0);
    fx.model.params.head_b.fill(0.0);
    CHECK(pair_logit(fx.query, fx.support, fx.model, fx.concepts()) == 0.0);
  }
}

TEST_CASE("pair sequences that exceed max_len are rejected") {
  const auto s = small_setup();
  auto cfg = small_config(Variant::sentence_only);
  auto model = make_model(cfg, s.bench.dataset, s.split.train, s.concepts());
  const auto& inst = s.bench.dataset.begin()->second[0];
  model.config.encoder.max_len = 12;  // per-side budget 4 cannot hold two marked entities
  CHECK_THROWS_AS(pair_logit(inst, inst, model, s.concepts()), ValidationError);
}

TEST_CASE("episode forward shapes and aggregation") {
  const auto s = small_setup();
  auto model = make_model(small_config(Variant::full), s.bench.dataset, s.split.train, s.concepts());
  const auto e = episode_from(s, {5, 1, 5}, 3);
  const auto r = episode_forward(e, model, s.concepts());
  REQUIRE(r.logits.size() == 5);
  for (const auto& l : r.logits) {
    CHECK(l.size() == 5);
    CHECK(all_finite(l));
  }
  for (std::size_t i = 0; i < 5; ++i) CHECK(r.predictions[i] == argmax(r.logits[i]));

  // K = 2: class score is the mean of the two pair logits.
  const auto e2 = episode_from(s, {3, 2, 3}, 4);
  const auto r2 = episode_forward(e2, model, s.concepts());
  for (std::size_t qi = 0; qi < e2.queries.size(); ++qi) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double a = pair_logit(e2.queries[qi].instance, e2.support[c][0], model, s.concepts());
      const double b = pair_logit(e2.queries[qi].instance, e2.support[c][1], model, s.concepts());
      CHECK(r2.logits[qi][c] == doctest::Approx((a + b) / 2).epsilon(1e-12));
    }
  }
  model.config.aggregation = Aggregation::sum;
  const auto r3 = episode_forward(e2, model, s.concepts());
  CHECK(r3.logits[0][0] == doctest::Approx(2 * r2.logits[0][0]).epsilon(1e-12));
}

TEST_CASE("zeroed head gives loss ln N") {
  const auto s = small_setup();
  auto model = make_model(small_config(Variant::full), s.bench.dataset, s.split.train, s.concepts());
  model.params.head_w.fill(0.0);
  for (std::size_t n : {2u, 5u}) {
    const auto r = episode_forward(episode_from(s, {n, 1, n}, 5), model, s.concepts());
    CHECK(r.loss == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));
  }
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax(Vector{1, 3, 3}) == 1);
  CHECK(argmax(Vector{0, 0, 0}) == 0);
}

TEST_CASE("class permutation and duplicate supports") {
  const auto s = small_setup();
  const auto model = make_model(small_config(Variant::full), s.bench.dataset, s.split.train, s.concepts());
  const auto e = episode_from(s, {4, 1, 4}, 6);
  const auto base = episode_forward(e, model, s.concepts());

  const std::vector<std::size_t> perm{2, 0, 3, 1};  // new class i = old class perm[i]
  Episode p = e;
  for (std::size_t i = 0; i < 4; ++i) {
    p.classes[i] = e.classes[perm[i]];
    p.support[i] = e.support[perm[i]];
  }
  for (auto& q : p.queries) q.label = static_cast<std::size_t>(std::find(perm.begin(), perm.end(), q.label) - perm.begin());
  const auto permuted = episode_forward(p, model, s.concepts());
  for (std::size_t qi = 0; qi < e.queries.size(); ++qi)
    for (std::size_t i = 0; i < 4; ++i) CHECK(permuted.logits[qi][i] == base.logits[qi][perm[i]]);
  CHECK(permuted.accuracy == base.accuracy);
  CHECK(permuted.loss == doctest::Approx(base.loss).epsilon(1e-12));

  Episode dup = e;
  for (auto& group : dup.support) group.push_back(group.front());
  const auto d = episode_forward(dup, model, s.concepts());
  for (std::size_t qi = 0; qi < e.queries.size(); ++qi)
    for (std::size_t c = 0; c < 4; ++c) CHECK(d.logits[qi][c] == doctest::Approx(base.logits[qi][c]).epsilon(1e-12));
}

TEST_CASE("sentence_only ignores concept data") {
  const auto s = small_setup();
  const auto model = make_model(small_config(Variant::sentence_only), s.bench.dataset, s.split.train, s.concepts());
  const auto e = episode_from(s, {5, 1, 5}, 7);
  const auto with = episode_forward(e, model, s.concepts());

  ConceptIndex other = ConceptIndex::from_triples(std::vector<ConceptTriple>{{"e1", "g0", 1.0}});
  const ConceptSource altered{&other, &s.bench.embeddings};
  const auto without = episode_forward(e, model, {});
  const auto changed = episode_forward(e, model, altered);
  CHECK(with.logits == without.logits);
  CHECK(with.logits == changed.logits);

  // Building the model without concepts yields the same parameters too.
  const auto bare = make_model(small_config(Variant::sentence_only), s.bench.dataset, s.split.train, {});
  CHECK(bare.params == model.params);
}

TEST_CASE("entities without concepts fall back to the sentence path") {
  auto s = small_setup();
  const ConceptIndex empty;
  const ConceptSource none{&empty, &s.bench.embeddings};
  const auto full = make_model(small_config(Variant::full), s.bench.dataset, s.split.train, s.concepts());
  const auto& inst = s.bench.dataset.begin()->second[0];
  const auto q = prepare_instance(inst, full, none);
  CHECK(q.candidates[0].rows() == 0);
  PairTrace tr;
  pair_forward(q, q, full, &tr);
  CHECK(tr.appended.empty());
  for (const auto& g : tr.gates) CHECK_FALSE(g.has_value());
}

TEST_CASE("pair gradients match finite differences for every variant") {
  for (auto v : kAllVariants) {
    CAPTURE(to_string(v));
    auto fx = make_gradcheck_fixture(v, 0);
    const auto report = check_pair_gradients(fx);
    CHECK(report.passed());
    CHECK(report.worst() <= 1e-4);
    CHECK(report.groups.size() == fx.model.params.tensors().size());
  }
  auto fx = make_gradcheck_fixture(Variant::full, 0);
  GradCheckOptions bad;
  bad.corrupt = 0.01;
  CHECK_FALSE(check_pair_gradients(fx, bad).passed());
}

TEST_CASE("training") {
  const auto s = small_setup();

  SUBCASE("zero episodes leave parameters unchanged") {
    auto cfg = small_config(Variant::full);
    cfg.max_episodes = 0;
    auto model = make_model(cfg, s.bench.dataset, s.split.train, s.concepts());
    const auto before = model.params;
    CHECK(train(model, s.bench.dataset, s.split.train, {5, 1, 5}, s.concepts()).empty());
    CHECK(model.params == before);
  }

  SUBCASE("a repeated episode is fit exactly") {
    auto cfg = small_config(Variant::full);
    cfg.optimizer = OptimizerKind::adam;
    cfg.learning_rate = 1e-2;
    cfg.max_episodes = 300;
    auto model = make_model(cfg, s.bench.dataset, s.split.train, s.concepts());
    const auto e = episode_from(s, {5, 1, 5}, 8);
    TrainOptions opts;
    opts.fixed_episode = &e;
    const auto log = train(model, s.bench.dataset, s.split.train, {5, 1, 5}, s.concepts(), opts);
    CHECK(log.back().accuracy == 1.0);
    CHECK(episode_forward(e, model, s.concepts()).accuracy == 1.0);
  }

  SUBCASE("deterministic for a fixed seed, and early stop works") {
    auto cfg = small_config(Variant::no_att);
    cfg.max_episodes = 5;
    auto a = make_model(cfg, s.bench.dataset, s.split.train, s.concepts());
    auto b = a;
    const auto la = train(a, s.bench.dataset, s.split.train, {5, 1, 5}, s.concepts());
    const auto lb = train(b, s.bench.dataset, s.split.train, {5, 1, 5}, s.concepts());
    CHECK(a.params == b.params);
    REQUIRE(la.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(la[i].loss == lb[i].loss);

    auto c = make_model(cfg, s.bench.dataset, s.split.train, s.concepts());
    TrainOptions stop;
    stop.on_episode = [](const TrainLogEntry& e) { return e.episode < 1; };
    CHECK(train(c, s.bench.dataset, s.split.train, {5, 1, 5}, s.concepts(), stop).size() == 2);
  }

  SUBCASE("non-finite loss aborts with the episode and seed") {
    auto cfg = small_config(Variant::full, 42);
    auto model = make_model(cfg, s.bench.dataset, s.split.train, s.concepts());
    model.params.head_b(0, 0) = std::nan("");
    try {
      train(model, s.bench.dataset, s.split.train, {5, 1, 5}, s.concepts());
      FAIL("expected a training error");
    } catch (const TrainingError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("episode 0") != std::string::npos);
      CHECK(msg.find("seed 42") != std::string::npos);
    }
  }

  SUBCASE("every optimizer reduces the loss on a fixed episode") {
    for (auto opt : {OptimizerKind::sgd, OptimizerKind::momentum, OptimizerKind::adam}) {
      auto cfg = small_config(Variant::full);
      cfg.optimizer = opt;
      cfg.learning_rate = opt == OptimizerKind::adam ? 1e-2 : 0.05;
      cfg.grad_clip = 5.0;
      cfg.max_episodes = 40;
      auto model = make_model(cfg, s.bench.dataset, s.split.train, s.concepts());
      const auto e = episode_from(s, {5, 1, 5}, 9);
      TrainOptions opts;
      opts.fixed_episode = &e;
      const auto log = train(model, s.bench.dataset, s.split.train, {5, 1, 5}, s.concepts(), opts);
      CHECK(log.back().loss < log.front().loss);
    }
  }
}

TEST_CASE("evaluation") {
  const auto s = small_setup();
  const auto model = make_model(small_config(Variant::full), s.bench.dataset, s.split.train, s.concepts());
  const auto a = evaluate(model, s.bench.dataset, s.split.test, {5, 1, 5}, s.concepts(), 20, 3);
  const auto b = evaluate(model, s.bench.dataset, s.split.test, {5, 1, 5}, s.concepts(), 20, 3);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.ci95 == b.ci95);
  CHECK(a.per_episode.size() == 20);
  CHECK(a.ci95 > 0.0);
  CHECK_THROWS(evaluate(model, s.bench.dataset, s.split.test, {5, 1, 5}, s.concepts(), 0, 3));
}

TEST_CASE("ten-way episodes are no easier than five-way ones") {
  // Median over seeds of briefly trained models.
  std::vector<double> diffs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthConfig sc;
    sc.relations = 30;
    sc.concepts = 6;
    sc.instances_per_relation = 12;
    sc.entities_per_concept = 12;
    sc.sentence_length = 6;
    sc.filler_vocab = 12;
    sc.concept_dim = 8;
    auto rng = substream(seed, "synthetic");
    const auto bench = generate_synthetic(sc, rng);
    const auto split = split_relations(bench.dataset, seed, {18, 0, 12});
    const ConceptSource cs{&bench.index, &bench.embeddings};
    auto cfg = small_config(Variant::full, seed);
    cfg.optimizer = OptimizerKind::adam;
    cfg.learning_rate = 3e-3;
    cfg.max_episodes = 150;
    auto model = make_model(cfg, bench.dataset, split.train, cs);
    train(model, bench.dataset, split.train, {5, 1, 5}, cs);
    const double five = evaluate(model, bench.dataset, split.test, {5, 1, 5}, cs, 60, seed).accuracy;
    const double ten = evaluate(model, bench.dataset, split.test, {10, 1, 10}, cs, 60, seed).accuracy;
    diffs.push_back(five - ten);
  }
  std::sort(diffs.begin(), diffs.end());
  CHECK(diffs[2] >= 0.0);
}

TEST_CASE("checkpoints round trip") {
  const auto s = small_setup();
  auto cfg = small_config(Variant::no_fusion);
  cfg.max_episodes = 3;
  auto model = make_model(cfg, s.bench.dataset, s.split.train, s.concepts());
  train(model, s.bench.dataset, s.split.train, {5, 1, 5}, s.concepts());

  const auto text = serialize_checkpoint(model);
  const auto back = parse_checkpoint(text);
  CHECK(back.config == model.config);
  CHECK(back.vocab == model.vocab);
  CHECK(back.params == model.params);
  CHECK(serialize_checkpoint(back) == text);

  const auto path = std::filesystem::temp_directory_path() / "fsre_ckpt_test.txt";
  save_checkpoint(model, path);
  CHECK(load_checkpoint(path).params == model.params);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(parse_checkpoint("NOT-A-CHECKPOINT\n"), ParseError);
  CHECK(config_from_json(config_to_json(cfg)) == cfg);
}

TEST_CASE("config validation") {
  auto cfg = small_config(Variant::full);
  CHECK_NOTHROW(validate(cfg));
  cfg.alpha = 0.0;
  CHECK_THROWS(validate(cfg));
  cfg = small_config(Variant::full);
  cfg.fusion_heads = 3;
  CHECK_THROWS(validate(cfg));
  cfg = small_config(Variant::no_fusion);
  CHECK(cfg.head_input_dim() == 5 * cfg.encoder.dim);
}
