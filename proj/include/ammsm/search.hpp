#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <vector>

#include <json.hpp>

#include "ammsm/common.hpp"
#include "ammsm/rng.hpp"

// Evolutionary search over the quantized (sparsity ratios, alpha) space:
// elitist GA with tournament selection, one-point crossover on the ratio
// vector (alpha rides as the final gene), and per-slot resampling mutation.
// Fitness is validation classification loss; lower is better.

namespace ammsm {

struct SearchSpace {
  std::vector<double> ratio_choices{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  std::vector<double> alpha_choices{1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
  Index n_ratio_slots = 5;

  std::size_t n_points() const {
    double n = static_cast<double>(alpha_choices.size());
    for (Index i = 0; i < n_ratio_slots; ++i) n *= static_cast<double>(ratio_choices.size());
    return static_cast<std::size_t>(n);
  }
};

struct Candidate {
  std::vector<double> ratios;
  double alpha = 1.0;

  bool operator==(const Candidate& o) const { return ratios == o.ratios && alpha == o.alpha; }

  nlohmann::json to_json() const { return {{"ratios", ratios}, {"alpha", alpha}}; }

  static Candidate from_json(const nlohmann::json& j) {
    Candidate c;
    c.ratios = j.at("ratios").get<std::vector<double>>();
    c.alpha = j.at("alpha").get<double>();
    return c;
  }

  std::string key() const {
    std::string k;
    for (double r : ratios) k += std::to_string(r) + ",";
    k += std::to_string(alpha);
    return k;
  }
};

inline bool in_space(const SearchSpace& space, const Candidate& c) {
  if (static_cast<Index>(c.ratios.size()) != space.n_ratio_slots) return false;
  for (double r : c.ratios)
    if (std::find(space.ratio_choices.begin(), space.ratio_choices.end(), r) == space.ratio_choices.end())
      return false;
  return std::find(space.alpha_choices.begin(), space.alpha_choices.end(), c.alpha) != space.alpha_choices.end();
}

// Uniform independent draw per slot; deterministic under a fixed generator.
inline Candidate sample_config(const SearchSpace& space, Rng& rng) {
  Candidate c;
  c.ratios.resize(static_cast<std::size_t>(space.n_ratio_slots));
  for (auto& r : c.ratios)
    r = space.ratio_choices[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(space.ratio_choices.size()) - 1))];
  c.alpha = space.alpha_choices[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(space.alpha_choices.size()) - 1))];
  return c;
}

struct FitnessRecord {
  Candidate config;
  double fitness = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
};

struct GaParams {
  Index population = 16;
  Index generations = 10;
  Index elite = 2;
  Index tournament = 3;
  double mutation_rate = 0.2;

  void validate() const {
    require_config(population >= 2 && generations >= 1, "GaParams: population/generations too small");
    require_config(elite >= 0 && elite < population, "GaParams: elite must be in [0, population)");
    require_config(tournament >= 1 && tournament <= population, "GaParams: bad tournament size");
    require_config(mutation_rate >= 0.0 && mutation_rate <= 1.0, "GaParams: mutation rate outside [0,1]");
  }
};

struct EvolveResult {
  FitnessRecord best;
  std::vector<nlohmann::json> log;  // one entry per evaluation
  std::vector<double> generation_best;
};

inline EvolveResult evolve(const SearchSpace& space, const std::function<double(const Candidate&)>& fitness_fn,
                           const GaParams& params, Rng& rng, std::uint64_t seed_tag = 0) {
  params.validate();
  EvolveResult res;
  std::map<std::string, double> memo;
  Index generation = 0;
  auto evaluate = [&](const Candidate& c) {
    const std::string key = c.key();
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    double f = fitness_fn(c);
    if (!std::isfinite(f)) {
      res.log.push_back({{"generation", generation},
                         {"config", c.to_json()},
                         {"fitness", "non-finite"},
                         {"seed", seed_tag}});
      f = std::numeric_limits<double>::infinity();
    } else {
      res.log.push_back(
          {{"generation", generation}, {"config", c.to_json()}, {"fitness", f}, {"seed", seed_tag}});
    }
    memo.emplace(key, f);
    if (f < res.best.fitness) res.best = {c, f, seed_tag};
    return f;
  };

  struct Member {
    Candidate c;
    double f;
  };
  std::vector<Member> pop;
  for (Index i = 0; i < params.population; ++i) {
    Candidate c = sample_config(space, rng);
    pop.push_back({c, evaluate(c)});
  }
  auto by_fitness = [](const Member& a, const Member& b) { return a.f < b.f; };
  std::stable_sort(pop.begin(), pop.end(), by_fitness);
  res.generation_best.push_back(pop.front().f);

  auto tournament_pick = [&]() -> const Candidate& {
    std::size_t best = static_cast<std::size_t>(rng.uniform_int(0, params.population - 1));
    for (Index t = 1; t < params.tournament; ++t) {
      const std::size_t k = static_cast<std::size_t>(rng.uniform_int(0, params.population - 1));
      if (pop[k].f < pop[best].f) best = k;
    }
    return pop[best].c;
  };

  auto breed = [&]() {
    const Candidate& pa = tournament_pick();
    const Candidate& pb = tournament_pick();
    Candidate child;
    child.ratios = pa.ratios;
    // one-point crossover over the ratio vector; alpha rides with the tail
    if (space.n_ratio_slots > 0) {
      const Index cut = static_cast<Index>(rng.uniform_int(0, space.n_ratio_slots - 1)) + 1;
      for (Index i = cut; i < space.n_ratio_slots; ++i)
        child.ratios[static_cast<std::size_t>(i)] = pb.ratios[static_cast<std::size_t>(i)];
    }
    child.alpha = pb.alpha;
    for (auto& r : child.ratios)
      if (rng.uniform() < params.mutation_rate)
        r = space.ratio_choices[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(space.ratio_choices.size()) - 1))];
    if (rng.uniform() < params.mutation_rate)
      child.alpha = space.alpha_choices[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(space.alpha_choices.size()) - 1))];
    return child;
  };

  for (generation = 1; generation <= params.generations; ++generation) {
    std::vector<Member> next(pop.begin(), pop.begin() + params.elite);  // elitism
    while (static_cast<Index>(next.size()) < params.population) {
      Candidate child = breed();
      // retry a few times rather than stacking clones of converged members
      for (int attempt = 0; attempt < 8; ++attempt) {
        const bool dup = std::any_of(next.begin(), next.end(), [&](const Member& m) { return m.c == child; });
        if (!dup) break;
        child = breed();
      }
      next.push_back({child, evaluate(child)});
    }
    pop = std::move(next);
    std::stable_sort(pop.begin(), pop.end(), by_fitness);
    res.generation_best.push_back(pop.front().f);
  }
  return res;
}

}  // namespace ammsm
