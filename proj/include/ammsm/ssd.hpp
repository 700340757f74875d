#pragma once

#include "ammsm/nn.hpp"

// State-space-duality sequence mixing, Y = C (B^T (X * 1/A)), read literally
// as one non-causal global aggregation: per head, a d_state x d_head
// accumulator H = sum_t b_t (x_t / a_t)^T followed by the per-token readout
// y_t = c_t^T H. Cost is linear in the token count. B and C are shared
// across heads; the gate a_t is one positive scalar per token (softplus).

namespace ammsm {

template <typename S>
struct SSDParams {
  Index d = 0, d_state = 0, heads = 1;
  Dense<S> wx;  // d -> d
  Dense<S> wa;  // d -> 1
  Dense<S> wb;  // d -> d_state
  Dense<S> wc;  // d -> d_state
  Dense<S> wo;  // d -> d

  static SSDParams make(Index d, Index d_state, Index heads, Rng& rng) {
    require_config(d % heads == 0, "SSDParams: d=" + std::to_string(d) + " not divisible by heads=" +
                                       std::to_string(heads));
    SSDParams p;
    p.d = d;
    p.d_state = d_state;
    p.heads = heads;
    p.wx = Dense<S>::make(d, d, rng);
    p.wa = Dense<S>::make(d, 1, rng);
    p.wb = Dense<S>::make(d, d_state, rng);
    p.wc = Dense<S>::make(d, d_state, rng);
    p.wo = Dense<S>::make(d, d, rng);
    // the global aggregation sums over all kept tokens with no length
    // normalization, so B/C start small to keep the residual branch tame
    for (auto& v : p.wb.w.data()) v *= S(0.2);
    for (auto& v : p.wc.w.data()) v *= S(0.2);
    // softplus(0.54) ~ 1, so gates start near the identity scale
    p.wa.b.data()[0] = S(0.5413);
    return p;
  }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    wx.visit_params(p + "/wx", f);
    wa.visit_params(p + "/wa", f);
    wb.visit_params(p + "/wb", f);
    wc.visit_params(p + "/wc", f);
    wo.visit_params(p + "/wo", f);
  }
};

// The Eq.-level mixing on already-generated streams. x:[L,d], a:[L,1] (>0),
// b:[L,d_state], c:[L,d_state].
template <typename S>
Tensor<S> ssd_mix(const Tensor<S>& x, const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& c, Index heads) {
  const Index l = x.dim(0), d = x.dim(1);
  require(l > 0, "ssd_mix: empty token list");
  require(d % heads == 0, "ssd_mix: head count does not divide feature dim");
  for (S v : a.data())
    if (!(v > S(0))) throw NumericError("ssd_mix: non-positive gate value");
  const Index dh = d / heads;
  Tensor<S> xa = div(x, a);       // [L,d]
  Tensor<S> bt = transpose(b);    // [d_state, L]
  std::vector<Tensor<S>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    Tensor<S> xh = slice(xa, {0, h * dh}, {l, dh});  // [L,dh]
    Tensor<S> acc = matmul(bt, xh);                  // [d_state, dh]
    outs.push_back(matmul(c, acc));                  // [L, dh]
  }
  return heads == 1 ? outs[0] : concat(outs, 1);
}

// u:[L,d] -> [L,d]
template <typename S>
Tensor<S> ssd_core(const Tensor<S>& u, const SSDParams<S>& p) {
  require(u.rank() == 2 && u.dim(1) == p.d,
          "ssd_core: expected [L," + std::to_string(p.d) + "], got " + shape_str(u.shape()));
  Tensor<S> x = p.wx(u);
  Tensor<S> a = softplus(p.wa(u));
  Tensor<S> b = p.wb(u);
  Tensor<S> c = p.wc(u);
  return p.wo(ssd_mix(x, a, b, c, p.heads));
}

// Brute-force reading of the same equation, y_t = sum_s (c_t . b_s)(x_s/a_s),
// evaluated with plain scalar loops (quadratic in L) and its own projection
// arithmetic. Kept deliberately independent of the ops/tape path.
template <typename S>
Tensor<S> ssd_core_oracle(const Tensor<S>& u, const SSDParams<S>& p) {
  const Index l = u.dim(0), d = p.d, ds = p.d_state, heads = p.heads, dh = d / heads;
  auto project = [&](const Dense<S>& lay, Index dout) {
    std::vector<double> out(static_cast<std::size_t>(l * dout), 0.0);
    const auto w = lay.w.data();
    const auto b = lay.b.data();
    const auto pu = u.data();
    for (Index t = 0; t < l; ++t)
      for (Index j = 0; j < dout; ++j) {
        double acc = static_cast<double>(b[j]);
        for (Index i = 0; i < d; ++i)
          acc += static_cast<double>(pu[t * d + i]) * static_cast<double>(w[i * dout + j]);
        out[static_cast<std::size_t>(t * dout + j)] = acc;
      }
    return out;
  };
  const auto x = project(p.wx, d);
  auto a = project(p.wa, 1);
  for (auto& v : a) v = v > 30.0 ? v : std::log1p(std::exp(v));
  const auto bstream = project(p.wb, ds);
  const auto cstream = project(p.wc, ds);
  std::vector<double> y(static_cast<std::size_t>(l * d), 0.0);
  for (Index h = 0; h < heads; ++h) {
    for (Index t = 0; t < l; ++t) {
      for (Index s = 0; s < l; ++s) {
        double cb = 0;
        for (Index k = 0; k < ds; ++k)
          cb += cstream[static_cast<std::size_t>(t * ds + k)] * bstream[static_cast<std::size_t>(s * ds + k)];
        const double inv_a = 1.0 / a[static_cast<std::size_t>(s)];
        for (Index j = 0; j < dh; ++j)
          y[static_cast<std::size_t>(t * d + h * dh + j)] +=
              cb * x[static_cast<std::size_t>(s * d + h * dh + j)] * inv_a;
      }
    }
  }
  Tensor<S> out(Shape{l, d});
  const auto wo = p.wo.w.data();
  const auto bo = p.wo.b.data();
  auto po = out.data();
  for (Index t = 0; t < l; ++t)
    for (Index j = 0; j < d; ++j) {
      double acc = static_cast<double>(bo[j]);
      for (Index i = 0; i < d; ++i) acc += y[static_cast<std::size_t>(t * d + i)] * static_cast<double>(wo[i * d + j]);
      po[t * d + j] = static_cast<S>(acc);
    }
  return out;
}

// Standard multi-head self-attention over the given tokens,
// softmax(Q K^T / sqrt(d_head)) V per head.
template <typename S>
struct MSAParams {
  Index d = 0, heads = 1;
  Dense<S> wqkv;  // d -> 3d
  Dense<S> wo;    // d -> d

  static MSAParams make(Index d, Index heads, Rng& rng) {
    require_config(d % heads == 0, "MSAParams: d not divisible by heads");
    MSAParams p;
    p.d = d;
    p.heads = heads;
    p.wqkv = Dense<S>::make(d, 3 * d, rng);
    p.wo = Dense<S>::make(d, d, rng);
    return p;
  }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    wqkv.visit_params(p + "/wqkv", f);
    wo.visit_params(p + "/wo", f);
  }
};

template <typename S>
Tensor<S> msa_core(const Tensor<S>& u, const MSAParams<S>& p) {
  const Index l = u.dim(0), d = p.d, heads = p.heads, dh = d / heads;
  require(u.rank() == 2 && u.dim(1) == d,
          "msa_core: expected [L," + std::to_string(d) + "], got " + shape_str(u.shape()));
  Tensor<S> qkv = p.wqkv(u);  // [L,3d]
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<S>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    Tensor<S> q = slice(qkv, {0, h * dh}, {l, dh});
    Tensor<S> k = slice(qkv, {0, d + h * dh}, {l, dh});
    Tensor<S> v = slice(qkv, {0, 2 * d + h * dh}, {l, dh});
    Tensor<S> attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt));
    outs.push_back(matmul(attn, v));
  }
  return p.wo(heads == 1 ? outs[0] : concat(outs, 1));
}

}  // namespace ammsm
