#pragma once

#include <chrono>
#include <memory>
#include <thread>

#include "ammsm/metrics.hpp"
#include "ammsm/train.hpp"

// LOSO protocol runner and the efficiency bench. Folds are seeded by subject
// so results do not depend on worker count or execution order; metrics are
// computed on the confusion matrix pooled across folds.

namespace ammsm {

using PredictFn = std::function<Index(const Sample&)>;
// trainer(ds, train_ids, fold_index, test_subject, fold_seed, extra_out) -> predictor
using TrainFn = std::function<PredictFn(const Dataset&, const std::vector<std::size_t>&, Index, Index,
                                        std::uint64_t, nlohmann::json*)>;

struct LosoResult {
  struct Fold {
    Index subject = 0;
    ConfusionMatrix cm;
    nlohmann::json extra;
  };
  std::vector<Fold> folds;
  ConfusionMatrix pooled;
  double uf1_pooled = 0;
  double uar_pooled = 0;
};

inline LosoResult run_loso(const Dataset& ds, const TrainFn& trainer, std::uint64_t seed, Index workers = 1) {
  const auto splits = loso_splits(ds);
  LosoResult res;
  res.folds.resize(splits.size());
  res.pooled = ConfusionMatrix(ds.n_classes);
  workers = std::max<Index>(1, std::min<Index>(workers, static_cast<Index>(splits.size())));

  std::vector<std::exception_ptr> errors(splits.size());
  auto run_fold = [&](std::size_t f) {
    try {
      const auto& sp = splits[f];
      const std::uint64_t fold_seed = Rng(seed).fork(0xF01D + static_cast<std::uint64_t>(sp.subject)).next_u64();
      LosoResult::Fold fold;
      fold.subject = sp.subject;
      fold.cm = ConfusionMatrix(ds.n_classes);
      PredictFn predict = trainer(ds, sp.train_ids, static_cast<Index>(f), sp.subject, fold_seed, &fold.extra);
      for (std::size_t id : sp.test_ids) fold.cm.add(ds.samples[id].label, predict(ds.samples[id]));
      res.folds[f] = std::move(fold);
    } catch (...) {
      errors[f] = std::current_exception();
    }
  };

  if (workers == 1) {
    for (std::size_t f = 0; f < splits.size(); ++f) run_fold(f);
  } else {
    std::vector<std::thread> pool;
    for (Index w = 0; w < workers; ++w)
      pool.emplace_back([&, w]() {
        for (std::size_t f = static_cast<std::size_t>(w); f < splits.size(); f += static_cast<std::size_t>(workers))
          run_fold(f);
      });
    for (auto& t : pool) t.join();
  }
  for (std::size_t f = 0; f < splits.size(); ++f) {
    if (errors[f]) {
      try {
        std::rethrow_exception(errors[f]);
      } catch (const Error& e) {
        throw Error("fold " + std::to_string(f) + " (subject " + std::to_string(splits[f].subject) +
                    ") failed: " + e.what());
      }
    }
    res.pooled += res.folds[f].cm;
  }
  res.uf1_pooled = uf1(res.pooled, /*exclude_empty=*/true);
  res.uar_pooled = uar(res.pooled, /*exclude_empty=*/true);
  return res;
}

// ---------------------------------------------------------------------------
// full pipeline trainer: adaptive training -> evolutionary search -> finetune

struct PipelineOptions {
  ModelConfig model;
  TrainSchedule sched;
  GaParams ga;
  double val_fraction = 0.2;  // fraction of training subjects held out for fitness
  Index val_cap = 32;         // max validation samples per fitness evaluation
  std::vector<double> alpha_choices{1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0};
  std::vector<double> ratio_choices{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};

  SearchSpace search_space() const {
    SearchSpace sp;
    sp.ratio_choices = ratio_choices;
    sp.alpha_choices = alpha_choices;
    sp.n_ratio_slots = model.sa_enabled ? model.stages.ratio_slots() : 0;
    return sp;
  }
};

// Artifacts a fold leaves behind (checkpoint + search log), exposed so the
// CLI can write them to the output directory.
struct FoldArtifacts {
  Candidate best;
  double best_fitness = 0;
  std::vector<nlohmann::json> search_log;
  std::map<std::string, Tensor<float>> checkpoint;
};

template <typename S>
struct TrainedFold {
  std::shared_ptr<AmmsmModel<S>> model;
  FoldArtifacts artifacts;
  std::vector<double> adaptive_losses, finetune_losses;
};

template <typename S>
TrainedFold<S> train_fold(const PipelineOptions& opt, const Dataset& ds, const std::vector<std::size_t>& train_ids,
                          std::uint64_t fold_seed) {
  Rng root(fold_seed);
  TrainedFold<S> out;
  Rng init_rng = root.fork(1);
  out.model = std::make_shared<AmmsmModel<S>>(AmmsmModel<S>::make(opt.model, init_rng));

  // hold out a fraction of training subjects for search fitness
  std::vector<Index> subjects;
  for (std::size_t id : train_ids)
    if (std::find(subjects.begin(), subjects.end(), ds.samples[id].subject) == subjects.end())
      subjects.push_back(ds.samples[id].subject);
  std::sort(subjects.begin(), subjects.end());
  Rng split_rng = root.fork(2);
  for (std::size_t i = subjects.size(); i > 1; --i)
    std::swap(subjects[i - 1], subjects[static_cast<std::size_t>(split_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(
                                                         opt.val_fraction * static_cast<double>(subjects.size()))));
  std::vector<Index> val_subjects(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> adapt_ids, val_ids;
  for (std::size_t id : train_ids) {
    if (std::find(val_subjects.begin(), val_subjects.end(), ds.samples[id].subject) != val_subjects.end())
      val_ids.push_back(id);
    else
      adapt_ids.push_back(id);
  }
  if (static_cast<Index>(val_ids.size()) > opt.val_cap) val_ids.resize(static_cast<std::size_t>(opt.val_cap));

  const SearchSpace space = opt.search_space();
  ModelTrainer<S> trainer(*out.model, opt.sched);
  Rng adapt_rng = root.fork(3);
  out.adaptive_losses = adaptive_train(trainer, ds, adapt_ids, space, opt.sched.adaptive_epochs, adapt_rng);

  auto fitness = [&](const Candidate& c) {
    double acc = 0;
    for (std::size_t id : val_ids) {
      const Sample& sm = ds.samples[id];
      auto o = out.model->forward(cast<S>(sm.flow), cast<S>(sm.onset), sm.label, c.alpha, c.ratios);
      acc += static_cast<double>(o.l_cls.value());
    }
    return acc / static_cast<double>(val_ids.size());
  };
  Rng ga_rng = root.fork(4);
  auto evo = evolve(space, fitness, opt.ga, ga_rng, fold_seed);
  out.artifacts.best = evo.best.config;
  out.artifacts.best_fitness = evo.best.fitness;
  out.artifacts.search_log = std::move(evo.log);

  Rng ft_rng = root.fork(5);
  out.finetune_losses =
      finetune(trainer, ds, train_ids, out.artifacts.best, opt.sched.finetune_epochs, ft_rng);

  out.model->visit_params([&](const std::string& name, Tensor<S>& t) {
    out.artifacts.checkpoint.emplace(name, cast<float>(t));
  });
  return out;
}

template <typename S>
TrainFn make_pipeline_trainer(const PipelineOptions& opt,
                              std::vector<FoldArtifacts>* artifact_sink = nullptr) {
  auto sink = artifact_sink;
  return [opt, sink](const Dataset& ds, const std::vector<std::size_t>& train_ids, Index fold_index,
                     Index /*test_subject*/, std::uint64_t fold_seed, nlohmann::json* extra) -> PredictFn {
    TrainedFold<S> fold = train_fold<S>(opt, ds, train_ids, fold_seed);
    if (extra) {
      (*extra)["best_config"] = fold.artifacts.best.to_json();
      (*extra)["best_fitness"] = fold.artifacts.best_fitness;
      (*extra)["adaptive_loss"] = fold.adaptive_losses;
      (*extra)["finetune_loss"] = fold.finetune_losses;
    }
    if (sink) {
      if (static_cast<Index>(sink->size()) <= fold_index) sink->resize(static_cast<std::size_t>(fold_index) + 1);
      (*sink)[static_cast<std::size_t>(fold_index)] = fold.artifacts;
    }
    auto model = fold.model;
    const Candidate best = fold.artifacts.best;
    return [model, best](const Sample& s) -> Index {
      return model->predict(cast<S>(s.flow), cast<S>(s.onset), best.alpha, best.ratios);
    };
  };
}

// ---------------------------------------------------------------------------
// efficiency bench over the temporal backbone (the component sparsity
// targets; magnifier and spatial stream are sparsity-independent)

struct BenchRow {
  std::string name;
  std::vector<double> ratios;  // empty = dense build (selection compiled out)
  double flops_total = 0;
  double flops_ssd = 0;
  double wall_ms_median = 0;
};

inline std::vector<BenchRow> bench_backbone(const StageConfig& cfg, Index resolution,
                                            const std::vector<std::pair<std::string, std::vector<double>>>& variants,
                                            Index timed_batches, Index warmup, std::uint64_t seed) {
  require_config(resolution > 0 && resolution % 16 == 0, "bench: resolution must be a positive multiple of 16");
  Rng rng(seed);
  auto bb = TemporalBackbone<float>::make(cfg, rng);
  Tensor<float> flow({resolution, resolution, cfg.in_channels});
  for (auto& v : flow.data()) v = static_cast<float>(rng.normal(0.0, 1.0));
  std::vector<BenchRow> rows;
  for (const auto& [name, ratios] : variants) {
    BenchRow row;
    row.name = name;
    row.ratios = ratios;
    bb.sparse_enabled = !ratios.empty();
    auto& m = Metrics::instance();
    m.reset();
    bb.forward(flow, ratios);
    row.flops_total = m.total_flops();
    row.flops_ssd = m.flops_matching("/ssd");
    m.set_enabled(false);
    for (Index i = 0; i < warmup; ++i) bb.forward(flow, ratios);
    std::vector<double> times;
    for (Index i = 0; i < timed_batches; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      bb.forward(flow, ratios);
      const auto t1 = std::chrono::steady_clock::now();
      times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    m.set_enabled(true);
    std::sort(times.begin(), times.end());
    row.wall_ms_median = times[times.size() / 2];
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ammsm
