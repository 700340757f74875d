#pragma once

#include "ammsm/nn.hpp"

// Motion magnification: a depth-2 U-shaped net maps (flow, alpha-map) to a
// magnified flow field, trained against |alpha * OF_ori - OF_mag| averaged
// over all entries, with the magnification term annealed to zero over the
// full epoch budget.

namespace ammsm {

// Constant broadcast of the magnification factor, H x W x 1.
template <typename S>
Tensor<S> make_alpha_map(S alpha, Index h, Index w, S alpha_min = S(1), S alpha_max = S(4)) {
  require_config(alpha >= alpha_min && alpha <= alpha_max,
                 "make_alpha_map: alpha " + std::to_string(static_cast<double>(alpha)) + " outside [" +
                     std::to_string(static_cast<double>(alpha_min)) + ", " +
                     std::to_string(static_cast<double>(alpha_max)) + "]");
  require_config(h > 0 && w > 0, "make_alpha_map: non-positive spatial dims");
  return Tensor<S>::full({h, w, 1}, alpha);
}

// The net predicts a residual on top of the input flow: with the final 1x1
// zero-initialized, OF_mag starts exactly at OF_ori and training shapes the
// delta toward alpha-scaled, class-relevant motion. Predicting the full field
// from the half-res decoder instead washes out the sub-window motion the
// classifier needs.
template <typename S>
struct MagnifierNet {
  Conv<S> enc1;  // 3 -> c,  3x3 s2
  Conv<S> enc2;  // c -> 2c, 3x3 s2
  Conv<S> dec1;  // 3c -> c, 3x3 s1 (skip concat with enc1)
  Conv<S> out;   // c -> 2,  1x1, zero-initialized residual head

  static MagnifierNet make(Index base, Rng& rng, bool zero_init_final = true) {
    MagnifierNet m;
    m.enc1 = Conv<S>::make(3, 3, 3, base, 2, 1, rng);
    m.enc2 = Conv<S>::make(3, 3, base, 2 * base, 2, 1, rng);
    m.dec1 = Conv<S>::make(3, 3, 3 * base, base, 1, 1, rng);
    m.out = Conv<S>::make(1, 1, base, 2, 1, 0, rng, zero_init_final);
    return m;
  }

  Tensor<S> forward(const Tensor<S>& flow, const Tensor<S>& amap) const {
    require(flow.rank() == 3 && flow.dim(2) == 2, "magnify: flow must be [H,W,2], got " + shape_str(flow.shape()));
    require(amap.rank() == 3 && amap.dim(2) == 1, "magnify: alpha map must be [H,W,1], got " + shape_str(amap.shape()));
    require(flow.dim(0) == amap.dim(0) && flow.dim(1) == amap.dim(1),
            "magnify: spatial mismatch between flow " + shape_str(flow.shape()) + " and alpha map " +
                shape_str(amap.shape()));
    require(flow.dim(0) % 4 == 0 && flow.dim(1) % 4 == 0,
            "magnify: flow dims must be divisible by 4, got " + shape_str(flow.shape()));
    FlopScope scope("magnifier");
    Tensor<S> x = concat<S>({flow, amap}, 2);      // [H,W,3]
    Tensor<S> a1 = relu(enc1(x));                  // [H/2,W/2,c]
    Tensor<S> a2 = relu(enc2(a1));                 // [H/4,W/4,2c]
    Tensor<S> up = upsample2x(a2);                 // [H/2,W/2,2c]
    Tensor<S> d = relu(dec1(concat<S>({up, a1}, 2)));
    return add(flow, out(upsample2x(d)));          // [H,W,2]
  }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    enc1.visit_params(p + "/enc1", f);
    enc2.visit_params(p + "/enc2", f);
    dec1.visit_params(p + "/dec1", f);
    out.visit_params(p + "/out", f);
  }
};

template <typename S>
Tensor<S> magnify(const Tensor<S>& of_ori, const Tensor<S>& amap, const MagnifierNet<S>& net) {
  return net.forward(of_ori, amap);
}

// |alpha * OF_ori - OF_mag|, reduced as the mean absolute deviation over all
// H*W*2 entries so the loss scale is resolution-invariant.
template <typename S>
Tensor<S> mag_loss(const Tensor<S>& of_ori, const Tensor<S>& of_mag, S alpha) {
  require(of_ori.shape() == of_mag.shape(), "mag_loss: shape mismatch between " + shape_str(of_ori.shape()) +
                                                " and " + shape_str(of_mag.shape()));
  return mean_abs(sub(scale(of_ori, alpha), of_mag));
}

struct LossSchedule {
  Index epoch;         // e, 0-based
  Index total_epochs;  // e_r, over all phases

  void validate() const {
    require_config(total_epochs > 0, "LossSchedule: total epoch count must be positive");
    require(epoch >= 0 && epoch <= total_epochs,
            "LossSchedule: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total_epochs) + "]");
  }
};

// (e_r - e) / e_r
inline double loss_weight(const LossSchedule& sched) {
  sched.validate();
  return static_cast<double>(sched.total_epochs - sched.epoch) / static_cast<double>(sched.total_epochs);
}

// L = L_cls + ((e_r - e)/e_r) * L_mag
template <typename S>
Tensor<S> total_loss(const Tensor<S>& l_cls, const Tensor<S>& l_mag, const LossSchedule& sched) {
  require(l_cls.numel() == 1 && l_mag.numel() == 1, "total_loss: losses must be scalar");
  if (!std::isfinite(static_cast<double>(l_cls.value())) || !std::isfinite(static_cast<double>(l_mag.value())))
    throw NumericError("total_loss: non-finite loss input");
  require(l_cls.value() >= S(0) && l_mag.value() >= S(0), "total_loss: losses must be non-negative");
  return add(l_cls, scale(l_mag, static_cast<S>(loss_weight(sched))));
}

}  // namespace ammsm
