#pragma once

#include <optional>

#include "ammsm/nn.hpp"

// Spatial stream and classification head. A small from-scratch residual CNN
// reads the onset frame; its output is projected 1x1 and added into the
// temporal stream at the end of stage 2; the head is global average pool
// plus one linear layer.

namespace ammsm {

template <typename S>
struct ResBlock {
  Conv<S> c1;  // 3x3, stride s
  Conv<S> c2;  // 3x3, stride 1
  std::optional<Conv<S>> proj;  // 1x1 stride-s shortcut when shape changes

  static ResBlock make(Index cin, Index cout, Index stride, Rng& rng) {
    ResBlock b;
    b.c1 = Conv<S>::make(3, 3, cin, cout, stride, 1, rng);
    b.c2 = Conv<S>::make(3, 3, cout, cout, 1, 1, rng);
    if (stride != 1 || cin != cout) b.proj = Conv<S>::make(1, 1, cin, cout, stride, 0, rng);
    return b;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> h = c2(relu(c1(x)));
    Tensor<S> sc = proj ? (*proj)(x) : x;
    return relu(add(h, sc));
  }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    c1.visit_params(p + "/c1", f);
    c2.visit_params(p + "/c2", f);
    if (proj) proj->visit_params(p + "/proj", f);
  }
};

// Total stride 8 so the output resolution matches the temporal stream at the
// end of stage 2 (stem /4, one downsample).
template <typename S>
struct SpatialNet {
  Conv<S> stem;        // 3x3 s2, 3 -> c
  ResBlock<S> stage1;  // c -> c, s2
  ResBlock<S> stage2;  // c -> 2c, s2

  static SpatialNet make(Index base, Rng& rng) {
    SpatialNet n;
    n.stem = Conv<S>::make(3, 3, 3, base, 2, 1, rng);
    n.stage1 = ResBlock<S>::make(base, base, 2, rng);
    n.stage2 = ResBlock<S>::make(base, 2 * base, 2, rng);
    return n;
  }

  Index out_channels() const { return stem.w.dim(3) * 2; }

  Tensor<S> forward(const Tensor<S>& img) const {
    require(img.rank() == 3 && img.dim(2) == 3,
            "spatial_forward: expects [H,W,3] onset image, got " + shape_str(img.shape()));
    require(img.dim(0) % 8 == 0 && img.dim(1) % 8 == 0,
            "spatial_forward: image dims must be divisible by 8, got " + shape_str(img.shape()));
    FlopScope scope("spatial");
    return stage2.forward(stage1.forward(relu(stem(img))));
  }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    stem.visit_params(p + "/stem", f);
    stage1.visit_params(p + "/stage1", f);
    stage2.visit_params(p + "/stage2", f);
  }
};

// Spatial features pass a 1x1 projection to the temporal channel count, then
// elementwise addition; the result re-enters the temporal stream.
template <typename S>
Tensor<S> fuse(const Tensor<S>& temporal, const Tensor<S>& spatial, const Conv<S>& proj) {
  require(temporal.rank() == 3 && spatial.rank() == 3, "fuse: expects [H,W,C] maps");
  require(temporal.dim(0) == spatial.dim(0) && temporal.dim(1) == spatial.dim(1),
          "fuse: spatial dims differ between temporal " + shape_str(temporal.shape()) + " and spatial " +
              shape_str(spatial.shape()));
  FlopScope scope("fusion");
  Tensor<S> projected = proj(spatial);
  require(projected.dim(2) == temporal.dim(2),
          "fuse: projection output channels " + std::to_string(projected.dim(2)) + " do not match temporal " +
              std::to_string(temporal.dim(2)));
  return add(temporal, projected);
}

template <typename S>
struct ClassifierHead {
  Dense<S> fc;

  // zero-initialized: logits start at 0 so the loss opens at ln(n_classes)
  static ClassifierHead make(Index in_dim, Index n_classes, Rng& rng) {
    ClassifierHead h;
    h.fc = Dense<S>::make(in_dim, n_classes, rng, /*zero_init=*/true);
    return h;
  }

  // pooled: [C] -> logits [n_classes]
  Tensor<S> forward(const Tensor<S>& pooled) const {
    require(pooled.rank() == 1 && pooled.dim(0) == fc.w.dim(0),
            "classify: pooled feature dim " + shape_str(pooled.shape()) + " does not match head input " +
                std::to_string(fc.w.dim(0)));
    return reshape(fc(reshape(pooled, {1, pooled.dim(0)})), {fc.w.dim(1)});
  }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) { fc.visit_params(p + "/fc", f); }
};

// -log softmax(logits)[label]
template <typename S>
Tensor<S> cls_loss(const Tensor<S>& logits, Index label) {
  return cross_entropy(logits, label);
}

}  // namespace ammsm
