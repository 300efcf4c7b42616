#include "doctest.h"

#include <stdexcept>
#include <filesystem>
#include <string>

#include "fsre/conceptkb.hpp"
#include "fsre/errors.hpp"

using namespace fsre;

namespace {
const std::filesystem::path kFixtures = FSRE_FIXTURE_DIR;

std::vector<std::string> names(const std::vector<ConceptCandidate>& c) {
  std::vector<std::string> out;
  for (const auto& x : c) out.push_back(x.name);
  return out;
}
}  // namespace

TEST_CASE("normalize_entity") {
  CHECK(normalize_entity("  Bill \t Gates ") == "bill gates");
  CHECK(normalize_entity("MICROSOFT") == "microsoft");
  CHECK(normalize_entity("") == "");
}

TEST_CASE("triples are ordered by confidence and capped") {
  const auto idx = parse_triples("Microsoft\tcompany\t0.9\nMicrosoft\tvendor\t0.5\n");
  const auto c = idx.concepts_of("Microsoft");
  REQUIRE(c.size() == 2);
  CHECK(c[0] == "company");
  CHECK(c[1] == "vendor");

  SUBCASE("duplicate line collapses") {
    const auto dup = parse_triples("a\tx\t0.3\na\tx\t0.3\n");
    CHECK(dup.concepts_of("a").size() == 1);
  }
  SUBCASE("cap keeps the most confident") {
    const auto capped = parse_triples("e\tlow\t0.1\ne\thigh\t0.9\ne\tmid\t0.5\n", 1);
    REQUIRE(capped.concepts_of("e").size() == 1);
    CHECK(capped.concepts_of("e")[0] == "high");
  }
  SUBCASE("equal confidence falls back to name order") {
    const auto tie = parse_triples("e\tzeta\ne\talpha\n");
    CHECK(tie.concepts_of("e")[0] == "alpha");
  }
  SUBCASE("empty input is an empty index") { CHECK(parse_triples("").empty()); }
}

TEST_CASE("triple parse errors carry the line number") {
  try {
    parse_triples("a\tb\t0.5\nc\td\tnotanumber\n", 8, "kb.tsv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("kb.tsv:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_triples("a\tb\t-1\n"), ParseError);
  CHECK_THROWS_AS(parse_triples("only-one-field\n"), ParseError);
}

TEST_CASE("embedding table") {
  const auto t = parse_embeddings("3 4\na 1 2 3 4\nb 0.5 0 0 0\nc -1 -1 -1 -1\n");
  CHECK(t.dim() == 4);
  CHECK(t.size() == 3);
  REQUIRE(t.find("b") != nullptr);
  CHECK(*t.find("b") == Vector{0.5, 0, 0, 0});
  CHECK(t.find("zz") == nullptr);

  try {
    parse_embeddings("3 4\na 1 2 3 4\nb 1 2 3\nc 1 1 1 1\n", "emb.txt");
    FAIL("expected an arity error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("emb.txt:3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_embeddings("2 2\na 1 1\n"), ParseError);
  CHECK_THROWS_AS(parse_embeddings(""), ParseError);

  EmbeddingTable manual(2);
  CHECK_THROWS_AS(manual.insert("x", {1.0}), ValidationError);
}

TEST_CASE("file fixtures and lookup") {
  const auto idx = load_triples(kFixtures / "triples.tsv");
  const auto table = load_embeddings(kFixtures / "embeddings.txt");

  // File rows come back exactly.
  REQUIRE(table.find("person") != nullptr);
  CHECK(*table.find("person") == Vector{0.125, -0.375, 2.5, -1});

  const auto ms = lookup_concepts(idx, table, "Microsoft");
  CHECK(names(ms) == std::vector<std::string>{"company", "vendor", "client"});
  CHECK(ms[0].embedding == *table.find("company"));

  const auto bg = lookup_concepts(idx, table, "bill GATES");
  CHECK(names(bg) == std::vector<std::string>{"person", "billionaire", "entrepreneur"});

  CHECK(lookup_concepts(idx, table, "zzz").empty());

  // chief_executive has no row of its own: mean of "chief" and "executive".
  const auto paris = lookup_concepts(idx, table, "Paris");
  REQUIRE(paris.size() == 1);
  const auto& chief = *table.find("chief");
  const auto& exec = *table.find("executive");
  for (std::size_t i = 0; i < 4; ++i) CHECK(paris[0].embedding[i] == doctest::Approx((chief[i] + exec[i]) / 2));

  for (const auto& c : bg) CHECK(c.embedding.size() == table.dim());
  CHECK(names(lookup_concepts(idx, table, "Microsoft")) == names(ms));
}

TEST_CASE("concepts without any embedding are dropped") {
  const auto idx = parse_triples("x\tunknown_thing\t0.9\nx\tcompany\t0.1\n");
  const auto table = parse_embeddings("1 2\ncompany 1 0\n");
  const auto got = lookup_concepts(idx, table, "x");
  REQUIRE(got.size() == 1);
  CHECK(got[0].name == "company");
}

TEST_CASE("triples and embeddings survive a save/load cycle") {
  const auto dir = std::filesystem::temp_directory_path() / "fsre_kb_test";
  std::filesystem::create_directories(dir);
  std::vector<ConceptTriple> triples{{"Alpha", "one", 0.25}, {"alpha", "two", std::nullopt}};
  save_triples(triples, dir / "t.tsv");
  const auto idx = load_triples(dir / "t.tsv");
  CHECK(idx.concepts_of("alpha").size() == 2);
  CHECK(idx.concepts_of("alpha")[0] == "one");

  EmbeddingTable t(3);
  t.insert("v", {0.1, 1.0 / 3.0, -2e-17});
  save_embeddings(t, dir / "e.txt");
  const auto back = load_embeddings(dir / "e.txt");
  CHECK(*back.find("v") == *t.find("v"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("missing files name the path") {
  try {
    load_embeddings("/nonexistent/embeddings.txt");
    FAIL("expected failure");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("/nonexistent/embeddings.txt") != std::string::npos);
  }
}
