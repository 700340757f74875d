#pragma once

#include "ammsm/backbone.hpp"
#include "ammsm/classifier.hpp"
#include "ammsm/magnifier.hpp"

// Full two-stream model: magnifier -> temporal backbone with the spatial
// stream fused in at the end of stage 2 -> pooled head. The AMM and sparse
// selection components can each be disabled for ablations; disabling AMM
// feeds the raw flow to the backbone and zeroes the magnification loss.

namespace ammsm {

struct ModelConfig {
  StageConfig stages;
  Index n_classes = 3;
  Index magnifier_base = 16;
  Index spatial_base = 16;
  bool amm_enabled = true;
  bool sa_enabled = true;
  double alpha_min = 1.0;
  double alpha_max = 4.0;

  void validate() const {
    stages.validate();
    require_config(n_classes >= 2, "ModelConfig: need at least two classes");
    require_config(magnifier_base > 0 && spatial_base > 0, "ModelConfig: non-positive widths");
    require_config(alpha_min >= 1.0 && alpha_max >= alpha_min, "ModelConfig: bad alpha range");
  }
};

template <typename S>
struct AmmsmModel {
  ModelConfig cfg;
  MagnifierNet<S> magnifier;
  TemporalBackbone<S> temporal;
  SpatialNet<S> spatial;
  Conv<S> fusion_proj;  // 1x1, spatial channels -> temporal stage-2 channels
  ClassifierHead<S> head;

  static AmmsmModel make(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    AmmsmModel m;
    m.cfg = cfg;
    m.magnifier = MagnifierNet<S>::make(cfg.magnifier_base, rng);
    m.temporal = TemporalBackbone<S>::make(cfg.stages, rng);
    m.temporal.sparse_enabled = cfg.sa_enabled;
    m.spatial = SpatialNet<S>::make(cfg.spatial_base, rng);
    const Index fuse_stage = std::min<Index>(1, cfg.stages.n_stages() - 1);
    m.fusion_proj = Conv<S>::make(1, 1, m.spatial.out_channels(),
                                  cfg.stages.channels[static_cast<std::size_t>(fuse_stage)], 1, 0, rng);
    m.head = ClassifierHead<S>::make(cfg.stages.channels.back(), cfg.n_classes, rng);
    return m;
  }

  void visit_params(const ParamVisitor<S>& f) {
    if (cfg.amm_enabled) magnifier.visit_params("magnifier", f);
    temporal.visit_params("temporal", f);
    spatial.visit_params("spatial", f);
    fusion_proj.visit_params("fusion", f);
    head.visit_params("head", f);
  }

  void watch_all(GradTape<S>& tape) {
    visit_params([&tape](const std::string&, Tensor<S>& t) { tape.watch(t); });
  }

  std::vector<std::pair<std::string, Tensor<S>*>> named_params() {
    std::vector<std::pair<std::string, Tensor<S>*>> out;
    visit_params([&out](const std::string& n, Tensor<S>& t) { out.emplace_back(n, &t); });
    return out;
  }

  struct Output {
    Tensor<S> logits;
    Tensor<S> l_cls;   // scalar; undefined when label < 0
    Tensor<S> l_mag;   // scalar, zero when AMM is disabled
    Tensor<S> of_mag;  // flow fed to the backbone
  };

  Output forward(const Tensor<S>& flow, const Tensor<S>& onset, Index label, double alpha,
                 const std::vector<double>& ratios) const {
    Output o;
    if (cfg.amm_enabled) {
      const Tensor<S> amap = make_alpha_map<S>(static_cast<S>(alpha), flow.dim(0), flow.dim(1),
                                               static_cast<S>(cfg.alpha_min), static_cast<S>(cfg.alpha_max));
      o.of_mag = magnifier.forward(flow, amap);
    } else {
      o.of_mag = flow;
    }
    const Tensor<S> spatial_feat = spatial.forward(onset);
    auto fusion = [&](const Tensor<S>& t) { return fuse(t, spatial_feat, fusion_proj); };
    auto bb = temporal.forward(o.of_mag, ratios, fusion);
    {
      FlopScope scope("head");
      o.logits = head.forward(bb.pooled);
    }
    if (label >= 0) o.l_cls = cls_loss(o.logits, label);
    o.l_mag = cfg.amm_enabled ? mag_loss(flow, o.of_mag, static_cast<S>(alpha)) : Tensor<S>::scalar(S(0));
    return o;
  }

  Index predict(const Tensor<S>& flow, const Tensor<S>& onset, double alpha,
                const std::vector<double>& ratios) const {
    auto o = forward(flow, onset, -1, alpha, ratios);
    const auto lg = o.logits.data();
    Index best = 0;
    for (Index i = 1; i < o.logits.dim(0); ++i)
      if (lg[i] > lg[best]) best = i;
    return best;
  }
};

}  // namespace ammsm
