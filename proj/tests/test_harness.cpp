#include <doctest.h>

#include "ammsm/harness.hpp"

using namespace ammsm;

namespace {

Dataset make_ds(Index subjects, Index spp, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_subjects = subjects;
  spec.n_classes = 3;
  spec.samples_per_subject_per_class = spp;
  spec.resolution = 16;
  spec.seed = seed;
  return Dataset{3, generate_dataset(spec)};
}

// Closed-form dense FLOP count for one backbone forward, derived from the
// layer dimensions alone (2 FLOPs per multiply-accumulate; GEMM-class ops
// only, matching what the registry instruments).
double dense_backbone_flops(const StageConfig& cfg, Index resolution) {
  double total = 0;
  Index h = resolution / 4;
  // stem: 4x4 stride-4 conv
  total += 2.0 * h * h * (4.0 * 4.0 * cfg.in_channels) * cfg.channels[0];
  for (Index i = 0; i < cfg.n_stages(); ++i) {
    const double c = static_cast<double>(cfg.channels[static_cast<std::size_t>(i)]);
    const double l = static_cast<double>(h) * h;
    for (Index j = 0; j < cfg.layers[static_cast<std::size_t>(i)]; ++j) {
      total += 2.0 * (2.0 * l * 9.0 * c);  // two depthwise 3x3 convs
      if (cfg.kind_of(i, j) == BlockKind::kSSSD) {
        const double ds = static_cast<double>(cfg.d_state);
        total += 2.0 * l * c * c;             // wx
        total += 2.0 * l * c;                 // wa
        total += 2.0 * 2.0 * l * c * ds;      // wb, wc
        total += 4.0 * l * ds * c;            // per-head accumulate + readout
        total += 2.0 * l * c * c;             // wo
      } else {
        total += 2.0 * l * c * (3.0 * c);     // wqkv
        total += 4.0 * l * l * c;             // QK^T and attn V over all heads
        total += 2.0 * l * c * c;             // wo
      }
      total += 2.0 * l * c * (4.0 * c) * 2.0;  // FFN expand + project
    }
    if (i + 1 < cfg.n_stages()) {
      const double c_next = static_cast<double>(cfg.channels[static_cast<std::size_t>(i + 1)]);
      total += 2.0 * (h / 2.0) * (h / 2.0) * (2.0 * 2.0 * c) * c_next;
      h /= 2;
    }
  }
  return total;
}

}  // namespace

TEST_CASE("run_loso with a perfect oracle trainer scores 1.0") {
  const Dataset ds = make_ds(4, 2, 1);
  TrainFn perfect = [](const Dataset& d, const std::vector<std::size_t>&, Index, Index, std::uint64_t,
                       nlohmann::json*) -> PredictFn {
    return [](const Sample& s) { return s.label; };
  };
  const auto res = run_loso(ds, perfect, 7);
  CHECK(res.folds.size() == 4);
  CHECK(res.uf1_pooled == 1.0);
  CHECK(res.uar_pooled == 1.0);
}

TEST_CASE("majority-class trainer scores 1/3 UAR on balanced data") {
  const Dataset ds = make_ds(4, 2, 2);
  TrainFn majority = [](const Dataset&, const std::vector<std::size_t>&, Index, Index, std::uint64_t,
                        nlohmann::json*) -> PredictFn {
    return [](const Sample&) { return Index{0}; };
  };
  const auto res = run_loso(ds, majority, 7);
  CHECK(res.uar_pooled == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(res.uf1_pooled == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("fold results are independent of worker count and rerun-identical") {
  const Dataset ds = make_ds(5, 1, 3);
  // a deterministic fake trainer that depends on the fold seed
  TrainFn seeded = [](const Dataset& d, const std::vector<std::size_t>&, Index, Index subject,
                      std::uint64_t fold_seed, nlohmann::json*) -> PredictFn {
    return [fold_seed](const Sample& s) {
      Rng rng(fold_seed ^ static_cast<std::uint64_t>(s.label * 77 + s.subject));
      return static_cast<Index>(rng.uniform_int(0, 2));
    };
  };
  const auto a = run_loso(ds, seeded, 11, 1);
  const auto b = run_loso(ds, seeded, 11, 2);
  const auto c = run_loso(ds, seeded, 11, 1);
  CHECK(a.pooled.counts == b.pooled.counts);
  CHECK(a.pooled.counts == c.pooled.counts);
  for (std::size_t f = 0; f < a.folds.size(); ++f) {
    CHECK(a.folds[f].subject == b.folds[f].subject);
    CHECK(a.folds[f].cm.counts == b.folds[f].cm.counts);
  }
}

TEST_CASE("a failing fold aborts with the fold id") {
  const Dataset ds = make_ds(3, 1, 4);
  TrainFn flaky = [](const Dataset&, const std::vector<std::size_t>&, Index fold, Index, std::uint64_t,
                     nlohmann::json*) -> PredictFn {
    if (fold == 1) throw NumericError("synthetic failure");
    return [](const Sample& s) { return s.label; };
  };
  try {
    run_loso(ds, flaky, 5);
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("fold 1") != std::string::npos);
  }
}

TEST_CASE("full pipeline trainer end to end on a tiny dataset") {
  const Dataset ds = make_ds(3, 2, 5);
  PipelineOptions opt;
  opt.model.stages.layers = {1, 1};
  opt.model.stages.channels = {8, 16};
  opt.model.stages.d_state = 4;
  opt.model.stages.heads = 2;
  opt.model.magnifier_base = 4;
  opt.model.spatial_base = 4;
  opt.sched.adaptive_epochs = 1;
  opt.sched.finetune_epochs = 1;
  opt.sched.lr = 1e-3;
  opt.sched.batch_size = 8;
  opt.ga.population = 4;
  opt.ga.generations = 1;
  opt.ga.elite = 1;
  opt.ga.tournament = 2;
  std::vector<FoldArtifacts> artifacts;
  const auto res = run_loso(ds, make_pipeline_trainer<float>(opt, &artifacts), 99);
  CHECK(res.folds.size() == 3);
  CHECK(res.pooled.total() == static_cast<std::int64_t>(ds.samples.size()));
  REQUIRE(artifacts.size() == 3);
  const SearchSpace space = opt.search_space();
  for (const auto& a : artifacts) {
    CHECK(in_space(space, a.best));
    CHECK(!a.search_log.empty());
    CHECK(!a.checkpoint.empty());
  }
  // determinism end to end
  std::vector<FoldArtifacts> artifacts2;
  const auto res2 = run_loso(ds, make_pipeline_trainer<float>(opt, &artifacts2), 99, 2);
  CHECK(res2.pooled.counts == res.pooled.counts);
  for (std::size_t f = 0; f < artifacts.size(); ++f) CHECK(artifacts2[f].best == artifacts[f].best);
}

TEST_CASE("dense bench flops match the closed-form count") {
  StageConfig cfg = StageConfig::desk();
  const auto rows = bench_backbone(cfg, 64, {{"dense", {}}}, 1, 0, 3);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].flops_total == doctest::Approx(dense_backbone_flops(cfg, 64)).epsilon(1e-9));
}

TEST_CASE("uniform 0.5 sparsity halves ssd flops when every stage splits evenly") {
  StageConfig cfg;
  cfg.layers = {1, 2};
  cfg.channels = {8, 16};
  cfg.d_state = 4;
  cfg.heads = 2;
  // 64 -> stage 1 at 16x16 (16 windows), stage 2 at 8x8 (4 windows)
  const auto rows = bench_backbone(cfg, 64,
                                   {{"dense", {}},
                                    {"half", std::vector<double>(static_cast<std::size_t>(cfg.ratio_slots()), 0.5)}},
                                   3, 1, 3);
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].flops_ssd == doctest::Approx(rows[0].flops_ssd * 0.5).epsilon(1e-9));
  CHECK(rows[1].flops_total < rows[0].flops_total);
}
