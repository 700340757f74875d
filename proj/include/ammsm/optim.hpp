#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ammsm/tensor.hpp"

namespace ammsm {

// AdamW with decoupled weight decay. Parameter order is fixed by the model's
// visit order; gradient buffers are accumulated by the caller (sum over the
// batch) and scaled here.
template <typename S>
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  double base_lr() const { return lr_; }

  // params[i] and grads[i] are parallel; grads are sums, scale divides them.
  void step(const std::vector<Tensor<S>*>& params, const std::vector<std::vector<S>>& grads, double scale,
            double lr_now) {
    if (state_m_.empty()) {
      state_m_.resize(params.size());
      state_v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        state_m_[i].assign(static_cast<std::size_t>(params[i]->numel()), 0.0);
        state_v_[i].assign(static_cast<std::size_t>(params[i]->numel()), 0.0);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->data();
      auto& m = state_m_[i];
      auto& v = state_v_[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = static_cast<double>(g[j]) * scale;
        m[j] = b1_ * m[j] + (1.0 - b1_) * gj;
        v[j] = b2_ * v[j] + (1.0 - b2_) * gj * gj;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        const double upd = mhat / (std::sqrt(vhat) + eps_) + wd_ * static_cast<double>(p[j]);
        p[j] = static_cast<S>(static_cast<double>(p[j]) - lr_now * upd);
      }
    }
  }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> state_m_, state_v_;
};

inline double cosine_lr(double base, Index epoch, Index total_epochs) {
  if (total_epochs <= 1) return base;
  const double x = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * x));
}

}  // namespace ammsm
