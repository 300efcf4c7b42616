#pragma once

// Central finite-difference check of the pair pipeline's analytic gradients.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fsre/corpus.hpp"
#include "fsre/fewshot.hpp"

namespace fsre {

struct GroupCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t entries = 0;
};

struct GradCheckReport {
  Variant variant = Variant::full;
  double tolerance = 1e-4;
  std::vector<GroupCheck> groups;

  double worst() const;
  bool passed() const { return worst() <= tolerance; }
};

// |a - n| / max(|a|, |n|, floor); the floor keeps entries whose true gradient
// is (near) zero from dividing roundoff by roundoff.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// A tiny (d = 4) model and one query/support pair whose gates select
/// concepts with a clear margin from alpha, so the hard mask is constant
/// under the finite-difference steps.
struct GradCheckFixture {
  SyntheticBenchmark bench;
  Model model;
  Instance query;
  Instance support;

  ConceptSource concepts() const { return {&bench.index, &bench.embeddings}; }
};

GradCheckFixture make_gradcheck_fixture(Variant variant, std::uint64_t seed = 0);

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Test hook: multiplies every analytic gradient by (1 + corrupt).
  double corrupt = 0.0;
};

// Loss = 0.5 * (pair_logit - 1)^2 over every parameter entry.
GradCheckReport check_pair_gradients(GradCheckFixture& fixture, const GradCheckOptions& options = {});

}  // namespace fsre
