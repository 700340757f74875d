#pragma once

#include <iomanip>
#include <sstream>

#include "ammsm/model.hpp"
#include "ammsm/optim.hpp"
#include "ammsm/search.hpp"
#include "ammsm/synth.hpp"

// Training phases: adaptive training resamples a (ratios, alpha) candidate
// per batch so the model tolerates the whole search space; fine-tuning holds
// the searched best candidate fixed. The epoch counter is global across
// phases, so the Eq.-2 magnification weight anneals over the full budget.

namespace ammsm {

struct TrainSchedule {
  Index adaptive_epochs = 20;
  Index finetune_epochs = 10;
  double lr = 1e-3;
  double weight_decay = 0.05;
  Index batch_size = 16;
  bool cosine = true;

  Index total_epochs() const { return adaptive_epochs + finetune_epochs; }

  void validate() const {
    require_config(adaptive_epochs >= 0 && finetune_epochs >= 0 && total_epochs() > 0,
                   "TrainSchedule: epoch counts must be non-negative and total positive");
    require_config(lr > 0 && batch_size > 0, "TrainSchedule: lr and batch size must be positive");
  }
};

template <typename S>
class ModelTrainer {
 public:
  ModelTrainer(AmmsmModel<S>& model, const TrainSchedule& sched)
      : model_(&model), sched_(sched), opt_(sched.lr, sched.weight_decay) {
    sched.validate();
    params_ = model.named_params();
  }

  Index epoch() const { return epoch_; }
  void set_epoch(Index e) { epoch_ = e; }
  const std::vector<double>& loss_weight_trace() const { return weight_trace_; }

  // One optimizer step over a batch with a fixed candidate; returns the mean
  // total loss. Throws NumericError with (epoch, batch, config) diagnostics
  // if any sample loss is non-finite.
  double step_batch(const Dataset& ds, const std::vector<std::size_t>& batch_ids, const Candidate& cand,
                    Index batch_index) {
    std::vector<std::vector<S>> grads(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i)
      grads[i].assign(static_cast<std::size_t>(params_[i].second->numel()), S(0));
    const LossSchedule ls{epoch_, sched_.total_epochs()};
    double batch_loss = 0;
    for (std::size_t id : batch_ids) {
      const Sample& sm = ds.samples[id];
      GradTape<S> tape;
      TapeScope<S> scope(&tape);
      model_->watch_all(tape);
      Tensor<S> total;
      try {
        auto out = model_->forward(cast<S>(sm.flow), cast<S>(sm.onset), sm.label, cand.alpha, cand.ratios);
        total = total_loss(out.l_cls, out.l_mag, ls);
        if (!std::isfinite(static_cast<double>(total.value()))) throw NumericError("non-finite total loss");
      } catch (const NumericError& e) {
        std::ostringstream os;
        os << e.what() << " at epoch " << epoch_ << " batch " << batch_index << " sample " << sm.id << " config "
           << cand.to_json().dump();
        throw NumericError(os.str());
      }
      batch_loss += static_cast<double>(total.value());
      tape.backward(total);
      for (std::size_t i = 0; i < params_.size(); ++i) {
        const Tensor<S>& p = *params_[i].second;
        if (!tape.tracks(p) || !tape.has_grad(p.node)) continue;
        const auto& g = tape.grad_buffer(p.node);
        auto& acc = grads[i];
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
      }
    }
    weight_trace_.push_back(loss_weight(ls));
    std::vector<Tensor<S>*> ptrs;
    ptrs.reserve(params_.size());
    for (auto& [n, p] : params_) ptrs.push_back(p);
    const double lr_now = sched_.cosine ? cosine_lr(sched_.lr, epoch_, sched_.total_epochs()) : sched_.lr;
    opt_.step(ptrs, grads, 1.0 / static_cast<double>(batch_ids.size()), lr_now);
    return batch_loss / static_cast<double>(batch_ids.size());
  }

  // One pass over `ids` at the current epoch; candidates come from
  // `next_candidate`, called once per batch.
  double run_epoch(const Dataset& ds, std::vector<std::size_t> ids, Rng& shuffle_rng,
                   const std::function<Candidate(Index batch)>& next_candidate) {
    for (std::size_t i = ids.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(ids[i - 1], ids[j]);
    }
    double total = 0;
    Index batches = 0;
    for (std::size_t off = 0; off < ids.size(); off += static_cast<std::size_t>(sched_.batch_size)) {
      const std::size_t end = std::min(ids.size(), off + static_cast<std::size_t>(sched_.batch_size));
      const std::vector<std::size_t> batch(ids.begin() + static_cast<std::ptrdiff_t>(off),
                                           ids.begin() + static_cast<std::ptrdiff_t>(end));
      total += step_batch(ds, batch, next_candidate(batches), batches) * static_cast<double>(batch.size());
      ++batches;
    }
    ++epoch_;
    return ids.empty() ? 0.0 : total / static_cast<double>(ids.size());
  }

 private:
  AmmsmModel<S>* model_;
  TrainSchedule sched_;
  AdamW<S> opt_;
  std::vector<std::pair<std::string, Tensor<S>*>> params_;
  Index epoch_ = 0;
  std::vector<double> weight_trace_;
};

// Initial phase: a fresh candidate is drawn per batch. Returns per-epoch mean
// training losses.
template <typename S>
std::vector<double> adaptive_train(ModelTrainer<S>& trainer, const Dataset& ds,
                                   const std::vector<std::size_t>& train_ids, const SearchSpace& space,
                                   Index adaptive_epochs, Rng& rng) {
  std::vector<double> losses;
  for (Index e = 0; e < adaptive_epochs; ++e) {
    Rng shuffle = rng.fork(static_cast<std::uint64_t>(2 * e));
    Rng config_rng = rng.fork(static_cast<std::uint64_t>(2 * e + 1));
    losses.push_back(trainer.run_epoch(ds, train_ids, shuffle,
                                       [&](Index) { return sample_config(space, config_rng); }));
  }
  return losses;
}

// Final phase: epochs continue the global counter; the candidate never
// changes (instrumented via the finetune_config_changes counter).
template <typename S>
std::vector<double> finetune(ModelTrainer<S>& trainer, const Dataset& ds, const std::vector<std::size_t>& train_ids,
                             const Candidate& best, Index finetune_epochs, Rng& rng) {
  std::vector<double> losses;
  bool have_prev = false;
  Candidate prev;
  auto fixed = [&](Index) {
    if (have_prev && !(prev == best)) Metrics::instance().count("finetune_config_changes");
    prev = best;
    have_prev = true;
    Metrics::instance().count("finetune_batches");
    return best;
  };
  for (Index e = 0; e < finetune_epochs; ++e) {
    Rng shuffle = rng.fork(static_cast<std::uint64_t>(1000 + e));
    losses.push_back(trainer.run_epoch(ds, train_ids, shuffle, fixed));
  }
  return losses;
}

}  // namespace ammsm
