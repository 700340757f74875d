#pragma once

#include <algorithm>
#include <iostream>
#include <vector>

#include "ammsm/common.hpp"
#include "ammsm/synth.hpp"

// MER2019-style evaluation: UF1 = (1/C) sum_i 2 TP_i / (2 TP_i + FP_i + FN_i)
// and UAR = (1/C) sum_i TP_i / n_i, over a confusion matrix. Metrics are
// computed on the matrix pooled across LOSO folds; a class absent from the
// pool (n_i == 0) is excluded from both averages with a warning, since UAR
// is undefined there.

namespace ammsm {

struct ConfusionMatrix {
  Index n_classes = 0;
  std::vector<std::int64_t> counts;  // row: true class, col: predicted

  explicit ConfusionMatrix(Index c = 0) : n_classes(c), counts(static_cast<std::size_t>(c * c), 0) {}

  void add(Index truth, Index pred) {
    require(truth >= 0 && truth < n_classes && pred >= 0 && pred < n_classes,
            "ConfusionMatrix: class index out of range");
    ++counts[static_cast<std::size_t>(truth * n_classes + pred)];
  }

  std::int64_t at(Index truth, Index pred) const {
    return counts[static_cast<std::size_t>(truth * n_classes + pred)];
  }

  std::int64_t tp(Index i) const { return at(i, i); }

  std::int64_t support(Index i) const {  // n_i
    std::int64_t s = 0;
    for (Index j = 0; j < n_classes; ++j) s += at(i, j);
    return s;
  }

  std::int64_t fp(Index i) const {
    std::int64_t s = 0;
    for (Index j = 0; j < n_classes; ++j)
      if (j != i) s += at(j, i);
    return s;
  }

  std::int64_t fn(Index i) const { return support(i) - tp(i); }

  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto v : counts) s += v;
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    require(n_classes == o.n_classes, "ConfusionMatrix: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }
};

// `exclude_empty` enables the pooled-matrix rule: classes with n_i == 0 are
// dropped from the average with a warning. The strict form treats them as a
// contract violation.
inline double uf1(const ConfusionMatrix& cm, bool exclude_empty = false) {
  require(cm.n_classes > 0 && cm.total() > 0, "uf1: empty confusion matrix");
  double acc = 0;
  Index used = 0;
  for (Index i = 0; i < cm.n_classes; ++i) {
    const std::int64_t tp = cm.tp(i), fp = cm.fp(i), fn = cm.fn(i);
    if (cm.support(i) == 0) {
      if (!exclude_empty)
        require(cm.support(i) + fp > 0, "uf1: class " + std::to_string(i) + " has no samples and no predictions");
      else {
        std::cerr << "[metrics] warning: class " << i << " absent from pooled matrix, excluded from UF1\n";
        continue;
      }
    }
    acc += static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
    ++used;
  }
  require(used > 0, "uf1: no classes with samples");
  return acc / static_cast<double>(used);
}

inline double uar(const ConfusionMatrix& cm, bool exclude_empty = false) {
  require(cm.n_classes > 0 && cm.total() > 0, "uar: empty confusion matrix");
  double acc = 0;
  Index used = 0;
  for (Index i = 0; i < cm.n_classes; ++i) {
    const std::int64_t n_i = cm.support(i);
    if (n_i == 0) {
      if (!exclude_empty)
        throw ContractViolation("uar: class " + std::to_string(i) + " has no test samples (n_i == 0)");
      std::cerr << "[metrics] warning: class " << i << " absent from pooled matrix, excluded from UAR\n";
      continue;
    }
    acc += static_cast<double>(cm.tp(i)) / static_cast<double>(n_i);
    ++used;
  }
  require(used > 0, "uar: no classes with samples");
  return acc / static_cast<double>(used);
}

struct LOSOSplit {
  Index subject = 0;
  std::vector<std::size_t> train_ids;  // indices into the dataset sample list
  std::vector<std::size_t> test_ids;
};

inline std::vector<LOSOSplit> loso_splits(const Dataset& ds) {
  std::vector<Index> subjects;
  for (const auto& s : ds.samples)
    if (std::find(subjects.begin(), subjects.end(), s.subject) == subjects.end()) subjects.push_back(s.subject);
  require_config(subjects.size() >= 2, "loso_splits: need at least 2 subjects, got " + std::to_string(subjects.size()));
  std::sort(subjects.begin(), subjects.end());
  std::vector<LOSOSplit> splits;
  for (Index subj : subjects) {
    LOSOSplit sp;
    sp.subject = subj;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      if (ds.samples[i].subject == subj)
        sp.test_ids.push_back(i);
      else
        sp.train_ids.push_back(i);
    }
    splits.push_back(std::move(sp));
  }
  return splits;
}

}  // namespace ammsm
