#include <doctest.h>

#include "ammsm/search.hpp"

using namespace ammsm;

namespace {

// Quantized distance to a planted optimum, smooth and separable.
double planted_fitness(const Candidate& c, const Candidate& target) {
  double d = std::abs(c.alpha - target.alpha);
  for (std::size_t i = 0; i < c.ratios.size(); ++i) d += std::abs(c.ratios[i] - target.ratios[i]);
  return d;
}

}  // namespace

TEST_CASE("sample_config is deterministic and space-closed") {
  SearchSpace space;
  space.n_ratio_slots = 5;
  Rng a(0), b(0);
  for (int i = 0; i < 50; ++i) {
    const auto ca = sample_config(space, a);
    const auto cb = sample_config(space, b);
    CHECK(ca == cb);
    CHECK(in_space(space, ca));
  }
}

TEST_CASE("sampling is uniform per slot within 3 sigma") {
  SearchSpace space;
  space.n_ratio_slots = 1;
  Rng rng(1234);
  std::map<double, int> ratio_counts;
  std::map<double, int> alpha_counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto c = sample_config(space, rng);
    ++ratio_counts[c.ratios[0]];
    ++alpha_counts[c.alpha];
  }
  const double sigma8 = std::sqrt(n * (1.0 / 8) * (7.0 / 8));
  for (double r : space.ratio_choices) CHECK(std::abs(ratio_counts[r] - n / 8.0) < 3 * sigma8);
  const double sigma7 = std::sqrt(n * (1.0 / 7) * (6.0 / 7));
  for (double a : space.alpha_choices) CHECK(std::abs(alpha_counts[a] - n / 7.0) < 3 * sigma7);
}

TEST_CASE("evolve finds a planted optimum on a small space") {
  SearchSpace space;
  space.n_ratio_slots = 2;  // 8 * 8 * 7 = 448 <= 512 points
  REQUIRE(space.n_points() <= 512);

  // exhaustive-enumeration optimum as the oracle
  Candidate target;
  target.ratios = {0.3, 0.7};
  target.alpha = 2.5;
  double best_possible = 1e300;
  Candidate best_enum;
  for (double r0 : space.ratio_choices)
    for (double r1 : space.ratio_choices)
      for (double a : space.alpha_choices) {
        Candidate c{{r0, r1}, a};
        const double f = planted_fitness(c, target);
        if (f < best_possible) {
          best_possible = f;
          best_enum = c;
        }
      }
  CHECK(best_enum == target);

  GaParams params;  // population 16, generations 10, elite 2, tournament 3, mutation 0.2
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto res = evolve(space, [&](const Candidate& c) { return planted_fitness(c, target); }, params, rng);
    if (res.best.config == best_enum) ++hits;
    // elitism: per-generation best is monotone non-increasing
    for (std::size_t g = 1; g < res.generation_best.size(); ++g)
      CHECK(res.generation_best[g] <= res.generation_best[g - 1]);
    // closure: every evaluated candidate lies in the quantized space
    for (const auto& e : res.log) CHECK(in_space(space, Candidate::from_json(e.at("config"))));
  }
  CHECK(hits >= 9);
}

TEST_CASE("constant fitness keeps a generation-0 member as best") {
  SearchSpace space;
  space.n_ratio_slots = 3;
  GaParams params;
  Rng rng(7);
  auto res = evolve(space, [](const Candidate&) { return 1.0; }, params, rng);
  CHECK(res.best.fitness == 1.0);
  // the best record was set during generation 0
  bool found_in_gen0 = false;
  for (const auto& e : res.log) {
    if (e.at("generation") != 0) break;
    if (Candidate::from_json(e.at("config")) == res.best.config) found_in_gen0 = true;
  }
  CHECK(found_in_gen0);
}

TEST_CASE("non-finite fitness is quarantined as +inf and logged") {
  SearchSpace space;
  space.n_ratio_slots = 1;
  GaParams params;
  params.population = 8;
  params.generations = 2;
  Rng rng(9);
  auto res = evolve(space,
                    [](const Candidate& c) {
                      if (c.ratios[0] == 0.5) return std::numeric_limits<double>::quiet_NaN();
                      return c.alpha;
                    },
                    params, rng);
  CHECK(std::isfinite(res.best.fitness));
  CHECK(res.best.config.alpha == 1.0);
  bool saw_nonfinite = false;
  for (const auto& e : res.log) saw_nonfinite = saw_nonfinite || e.at("fitness").is_string();
  CHECK(saw_nonfinite);
}

TEST_CASE("identical seeds give identical search trajectories") {
  SearchSpace space;
  space.n_ratio_slots = 4;
  GaParams params;
  auto fit = [](const Candidate& c) {
    double acc = c.alpha;
    for (double r : c.ratios) acc += r * r;
    return acc;
  };
  Rng a(42), b(42);
  auto ra = evolve(space, fit, params, a);
  auto rb = evolve(space, fit, params, b);
  CHECK(ra.best.config == rb.best.config);
  CHECK(ra.best.fitness == rb.best.fitness);
  REQUIRE(ra.log.size() == rb.log.size());
  for (std::size_t i = 0; i < ra.log.size(); ++i) CHECK(ra.log[i] == rb.log[i]);
}
