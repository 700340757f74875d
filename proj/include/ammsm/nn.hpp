#pragma once

#include <functional>
#include <optional>
#include <string>

#include "ammsm/ops.hpp"
#include "ammsm/rng.hpp"

// Small parameterized layers. Each layer owns its tensors and exposes
// visit_params so trainers, checkpoints, and tapes can walk one canonical
// set of (name, tensor) pairs in a stable order.

namespace ammsm {

template <typename S>
using ParamVisitor = std::function<void(const std::string&, Tensor<S>&)>;

namespace init {

template <typename S>
Tensor<S> he_normal(Shape shape, Index fan_in, Rng& rng) {
  Tensor<S> t(shape);
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<S>(rng.normal(0.0, std));
  return t;
}

template <typename S>
Tensor<S> glorot_uniform(Shape shape, Index fan_in, Index fan_out, Rng& rng) {
  Tensor<S> t(shape);
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.data()) v = static_cast<S>(rng.uniform(-lim, lim));
  return t;
}

}  // namespace init

template <typename S>
struct Conv {
  Tensor<S> w;  // [kh,kw,cin,cout]
  Tensor<S> b;  // [cout]
  Index stride = 1, pad = 0;

  static Conv make(Index kh, Index kw, Index cin, Index cout, Index stride, Index pad, Rng& rng,
                   bool zero_init = false) {
    Conv c;
    c.stride = stride;
    c.pad = pad;
    c.w = zero_init ? Tensor<S>::zeros({kh, kw, cin, cout}) : init::he_normal<S>({kh, kw, cin, cout}, kh * kw * cin, rng);
    c.b = Tensor<S>::zeros({cout});
    return c;
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, w, b, stride, pad); }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    f(p + "/w", w);
    f(p + "/b", b);
  }
};

template <typename S>
struct DwConv {
  Tensor<S> w;  // [kh,kw,c]
  Tensor<S> b;  // [c]

  static DwConv make(Index kh, Index kw, Index c, Rng& rng) {
    DwConv d;
    d.w = init::he_normal<S>({kh, kw, c}, kh * kw, rng);
    d.b = Tensor<S>::zeros({c});
    return d;
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return dwconv2d(x, w, b); }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    f(p + "/w", w);
    f(p + "/b", b);
  }
};

template <typename S>
struct Dense {
  Tensor<S> w;  // [din,dout]
  Tensor<S> b;  // [dout]

  static Dense make(Index din, Index dout, Rng& rng, bool zero_init = false) {
    Dense d;
    d.w = zero_init ? Tensor<S>::zeros({din, dout}) : init::glorot_uniform<S>({din, dout}, din, dout, rng);
    d.b = Tensor<S>::zeros({dout});
    return d;
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, w, b); }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    f(p + "/w", w);
    f(p + "/b", b);
  }
};

template <typename S>
struct LayerNorm {
  Tensor<S> gamma, beta;

  static LayerNorm make(Index d) {
    LayerNorm n;
    n.gamma = Tensor<S>::full({d}, S(1));
    n.beta = Tensor<S>::zeros({d});
    return n;
  }

  Tensor<S> operator()(const Tensor<S>& x) const { return layernorm(x, gamma, beta); }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    f(p + "/gamma", gamma);
    f(p + "/beta", beta);
  }
};

}  // namespace ammsm
