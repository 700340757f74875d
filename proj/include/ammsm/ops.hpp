#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "ammsm/flops.hpp"
#include "ammsm/tape.hpp"
#include "ammsm/tensor.hpp"

// Dense op suite with reverse-mode backward rules. Conventions:
//  - ops never mutate inputs; outputs are fresh tensors
//  - elementwise ops broadcast across same-rank shapes where one side has a
//    singleton axis (covers the alpha-map H x W x 1 against flow H x W x 2)
//  - matmul/conv route through Eigen GEMM and self-report forward FLOPs
//  - an op records a backward closure iff a tape is active and at least one
//    input is tracked on it

namespace ammsm {

namespace detail {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapM = Eigen::Map<const MatRM<S>>;

inline std::vector<Index> strides_rm(const Shape& s) {
  std::vector<Index> st(s.size());
  Index acc = 1;
  for (Index i = static_cast<Index>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  require(a.size() == b.size(),
          std::string(op) + ": rank mismatch between " + shape_str(a) + " and " + shape_str(b));
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1)
      out[i] = a[i];
    else if (a[i] == 1)
      out[i] = b[i];
    else
      throw ContractViolation(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
  }
  return out;
}

// Elementwise binary apply with singleton-axis broadcasting.
template <typename S, typename F>
void bcast_apply(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& out, F f) {
  const auto pa = a.data();
  const auto pb = b.data();
  auto po = out.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < po.size(); ++i) po[i] = f(pa[i], pb[i]);
    return;
  }
  const Shape& os = out.shape();
  const auto ost = strides_rm(os);
  auto ast = strides_rm(a.shape());
  auto bst = strides_rm(b.shape());
  for (std::size_t i = 0; i < os.size(); ++i) {
    if (a.shape()[i] == 1) ast[i] = 0;
    if (b.shape()[i] == 1) bst[i] = 0;
  }
  const Index n = out.numel();
  for (Index i = 0; i < n; ++i) {
    Index rem = i, ia = 0, ib = 0;
    for (std::size_t d = 0; d < os.size(); ++d) {
      const Index c = rem / ost[d];
      rem -= c * ost[d];
      ia += c * ast[d];
      ib += c * bst[d];
    }
    po[i] = f(pa[ia], pb[ib]);
  }
}

// Accumulate an out-shaped gradient into a (possibly broadcast) input shape,
// summing over the axes the input was broadcast along.
template <typename S>
void bcast_reduce_add(std::vector<S>& dst, const Shape& ds, const S* g, const Shape& gs) {
  if (ds == gs) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
    return;
  }
  const auto gst = strides_rm(gs);
  auto dstr = strides_rm(ds);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds[i] == 1) dstr[i] = 0;
  const Index n = numel_of(gs);
  for (Index i = 0; i < n; ++i) {
    Index rem = i, id = 0;
    for (std::size_t d = 0; d < gs.size(); ++d) {
      const Index c = rem / gst[d];
      rem -= c * gst[d];
      id += c * dstr[d];
    }
    dst[static_cast<std::size_t>(id)] += g[i];
  }
}

template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": produced non-finite values");
}

template <typename S, typename F>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, const char* name, F f,
                    std::function<S(S g, S x, S y)> dfda, std::function<S(S g, S x, S y)> dfdb) {
  Tensor<S> out(broadcast_shape(a.shape(), b.shape(), name));
  bcast_apply(a, b, out, f);
  auto* tape = GradTape<S>::current();
  if (tape && (tape->tracks(a) || tape->tracks(b))) {
    const std::int64_t an = tape->tracks(a) ? a.node : -1;
    const std::int64_t bn = tape->tracks(b) ? b.node : -1;
    Tensor<S> ac = a, bc = b;
    tape->record(out, [an, bn, ac, bc, dfda, dfdb](GradTape<S>& t, const std::vector<S>& g) {
      const Shape os = broadcast_shape(ac.shape(), bc.shape(), "binary_op.backward");
      // expand the per-element local derivative, then reduce onto each input
      std::vector<S> local(g.size());
      const Index n = static_cast<Index>(g.size());
      auto eval_side = [&](const std::function<S(S, S, S)>& df, const Tensor<S>& which, std::int64_t node) {
        if (node < 0) return;
        const auto ast = strides_rm(ac.shape());
        const auto bst = strides_rm(bc.shape());
        const auto ost = strides_rm(os);
        auto astr = ast, bstr = bst;
        for (std::size_t i = 0; i < os.size(); ++i) {
          if (ac.shape()[i] == 1) astr[i] = 0;
          if (bc.shape()[i] == 1) bstr[i] = 0;
        }
        const auto pa = ac.data();
        const auto pb = bc.data();
        for (Index i = 0; i < n; ++i) {
          Index rem = i, ia = 0, ib = 0;
          for (std::size_t d = 0; d < os.size(); ++d) {
            const Index c = rem / ost[d];
            rem -= c * ost[d];
            ia += c * astr[d];
            ib += c * bstr[d];
          }
          local[static_cast<std::size_t>(i)] = df(g[static_cast<std::size_t>(i)], pa[ia], pb[ib]);
        }
        bcast_reduce_add(t.grad_buffer(node), which.shape(), local.data(), os);
      };
      eval_side(dfda, ac, an);
      eval_side(dfdb, bc, bn);
    });
  }
  return out;
}

template <typename S, typename DF>
void record_unary(const Tensor<S>& a, Tensor<S>& out, DF df) {
  auto* tape = GradTape<S>::current();
  if (!tape || !tape->tracks(a)) return;
  const std::int64_t an = a.node;
  Tensor<S> ac = a, oc = out;
  tape->record(out, [an, ac, oc, df](GradTape<S>& t, const std::vector<S>& g) {
    auto& da = t.grad_buffer(an);
    const auto x = ac.data();
    const auto y = oc.data();
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += df(g[i], x[i], y[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      a, b, "add", [](S x, S y) { return x + y; }, [](S g, S, S) { return g; }, [](S g, S, S) { return g; });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      a, b, "sub", [](S x, S y) { return x - y; }, [](S g, S, S) { return g; }, [](S g, S, S) { return -g; });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      a, b, "mul", [](S x, S y) { return x * y; }, [](S g, S, S y) { return g * y; },
      [](S g, S x, S) { return g * x; });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out = detail::binary_op<S>(
      a, b, "div", [](S x, S y) { return x / y; }, [](S g, S, S y) { return g / y; },
      [](S g, S x, S y) { return -g * x / (y * y); });
  detail::check_finite(out, "div");
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  Tensor<S> out(a.shape());
  const auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * c;
  detail::record_unary(a, out, [c](S g, S, S) { return g * c; });
  return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return scale(a, S(-1));
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] > S(0) ? x[i] : S(0);
  detail::record_unary(a, out, [](S g, S x, S) { return x > S(0) ? g : S(0); });
  return out;
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor<S> out(a.shape());
  const auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    y[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * kInvSqrt2)));
  }
  detail::record_unary(a, out, [](S g, S x, S) {
    const double v = static_cast<double>(x);
    const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
    return static_cast<S>(static_cast<double>(g) * (cdf + v * pdf));
  });
  return out;
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = static_cast<double>(x[i]);
    y[i] = static_cast<S>(v > 30.0 ? v : std::log1p(std::exp(v)));
  }
  detail::record_unary(a, out, [](S g, S x, S) {
    const double v = static_cast<double>(x);
    return static_cast<S>(static_cast<double>(g) / (1.0 + std::exp(-v)));
  });
  return out;
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::exp(x[i]);
  detail::check_finite(out, "exp");
  detail::record_unary(a, out, [](S g, S, S y) { return g * y; });
  return out;
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::log(x[i]);
  detail::check_finite(out, "log");
  detail::record_unary(a, out, [](S g, S x, S) { return g / x; });
  return out;
}

template <typename S>
Tensor<S> abs(const Tensor<S>& a) {
  Tensor<S> out(a.shape());
  const auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::abs(x[i]);
  detail::record_unary(a, out, [](S g, S x, S) { return x > S(0) ? g : (x < S(0) ? -g : S(0)); });
  return out;
}

// ---------------------------------------------------------------------------
// shape ops

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  Index infer = -1, prod = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      require(infer < 0, "reshape: at most one -1 dimension");
      infer = static_cast<Index>(i);
    } else {
      prod *= shape[i];
    }
  }
  if (infer >= 0) {
    require(prod > 0 && a.numel() % prod == 0,
            "reshape: cannot infer dimension for " + shape_str(a.shape()) + " -> " + shape_str(shape));
    shape[static_cast<std::size_t>(infer)] = a.numel() / prod;
  }
  Tensor<S> out = a.with_shape(std::move(shape));
  out.node = -1;
  out.tape_epoch = 0;
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(a)) {
    const std::int64_t an = a.node;
    tape->record(out, [an](GradTape<S>& t, const std::vector<S>& g) {
      auto& da = t.grad_buffer(an);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  require(a.rank() == 2, "transpose: expects rank-2 tensor, got " + shape_str(a.shape()));
  const Index m = a.dim(0), n = a.dim(1);
  Tensor<S> out(Shape{n, m});
  const auto x = a.data();
  auto y = out.data();
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(a)) {
    const std::int64_t an = a.node;
    tape->record(out, [an, m, n](GradTape<S>& t, const std::vector<S>& g) {
      auto& da = t.grad_buffer(an);
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < n; ++j) da[static_cast<std::size_t>(i * n + j)] += g[static_cast<std::size_t>(j * m + i)];
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, Index axis) {
  require(!parts.empty(), "concat: needs at least one input");
  const Shape& s0 = parts[0].shape();
  const Index rank = static_cast<Index>(s0.size());
  require(axis >= 0 && axis < rank, "concat: axis out of range");
  Shape os = s0;
  os[static_cast<std::size_t>(axis)] = 0;
  for (const auto& p : parts) {
    require(p.rank() == rank, "concat: rank mismatch between " + shape_str(s0) + " and " + shape_str(p.shape()));
    for (Index d = 0; d < rank; ++d)
      require(d == axis || p.dim(d) == s0[static_cast<std::size_t>(d)],
              "concat: shape mismatch between " + shape_str(s0) + " and " + shape_str(p.shape()));
    os[static_cast<std::size_t>(axis)] += p.dim(axis);
  }
  Tensor<S> out(os);
  // outer = product of dims before axis, inner = product after
  Index outer = 1, inner = 1;
  for (Index d = 0; d < axis; ++d) outer *= s0[static_cast<std::size_t>(d)];
  for (Index d = axis + 1; d < rank; ++d) inner *= s0[static_cast<std::size_t>(d)];
  auto po = out.data();
  const Index ostride = os[static_cast<std::size_t>(axis)] * inner;
  Index off = 0;
  for (const auto& p : parts) {
    const Index pa = p.dim(axis) * inner;
    const auto px = p.data();
    for (Index o = 0; o < outer; ++o)
      std::memcpy(po.data() + o * ostride + off, px.data() + o * pa, static_cast<std::size_t>(pa) * sizeof(S));
    off += pa;
  }
  auto* tape = GradTape<S>::current();
  bool any = false;
  if (tape)
    for (const auto& p : parts) any = any || tape->tracks(p);
  if (tape && any) {
    std::vector<std::int64_t> nodes;
    std::vector<Index> widths;
    for (const auto& p : parts) {
      nodes.push_back(tape->tracks(p) ? p.node : -1);
      widths.push_back(p.dim(axis) * inner);
    }
    tape->record(out, [nodes, widths, outer, ostride](GradTape<S>& t, const std::vector<S>& g) {
      Index off = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (nodes[k] >= 0) {
          auto& d = t.grad_buffer(nodes[k]);
          for (Index o = 0; o < outer; ++o)
            for (Index i = 0; i < widths[k]; ++i)
              d[static_cast<std::size_t>(o * widths[k] + i)] += g[static_cast<std::size_t>(o * ostride + off + i)];
        }
        off += widths[k];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, const std::vector<Index>& starts, const std::vector<Index>& sizes) {
  const Index rank = a.rank();
  require(static_cast<Index>(starts.size()) == rank && static_cast<Index>(sizes.size()) == rank,
          "slice: starts/sizes must cover every axis of " + shape_str(a.shape()));
  for (Index d = 0; d < rank; ++d)
    require(starts[static_cast<std::size_t>(d)] >= 0 && sizes[static_cast<std::size_t>(d)] > 0 &&
                starts[static_cast<std::size_t>(d)] + sizes[static_cast<std::size_t>(d)] <= a.dim(d),
            "slice: window out of bounds for " + shape_str(a.shape()));
  Shape os(sizes.begin(), sizes.end());
  Tensor<S> out(os);
  const auto ast = detail::strides_rm(a.shape());
  const auto ost = detail::strides_rm(os);
  const auto x = a.data();
  auto y = out.data();
  const Index n = out.numel();
  for (Index i = 0; i < n; ++i) {
    Index rem = i, ia = 0;
    for (Index d = 0; d < rank; ++d) {
      const Index c = rem / ost[static_cast<std::size_t>(d)];
      rem -= c * ost[static_cast<std::size_t>(d)];
      ia += (c + starts[static_cast<std::size_t>(d)]) * ast[static_cast<std::size_t>(d)];
    }
    y[i] = x[ia];
  }
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(a)) {
    const std::int64_t an = a.node;
    const Shape as = a.shape();
    tape->record(out, [an, as, starts, os, rank](GradTape<S>& t, const std::vector<S>& g) {
      auto& da = t.grad_buffer(an);
      const auto ast = detail::strides_rm(as);
      const auto ost = detail::strides_rm(os);
      const Index n = numel_of(os);
      for (Index i = 0; i < n; ++i) {
        Index rem = i, ia = 0;
        for (Index d = 0; d < rank; ++d) {
          const Index c = rem / ost[static_cast<std::size_t>(d)];
          rem -= c * ost[static_cast<std::size_t>(d)];
          ia += (c + starts[static_cast<std::size_t>(d)]) * ast[static_cast<std::size_t>(d)];
        }
        da[static_cast<std::size_t>(ia)] += g[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

namespace detail {
inline Shape reduced_shape(const Shape& in, const std::vector<Index>& axes, bool keepdims) {
  std::vector<bool> red(in.size(), false);
  for (Index a : axes) {
    require(a >= 0 && a < static_cast<Index>(in.size()), "reduce: axis out of range for " + shape_str(in));
    red[static_cast<std::size_t>(a)] = true;
  }
  Shape out;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (red[i]) {
      if (keepdims) out.push_back(1);
    } else {
      out.push_back(in[i]);
    }
  }
  return out;
}
}  // namespace detail

template <typename S>
Tensor<S> sum(const Tensor<S>& a, const std::vector<Index>& axes, bool keepdims = false) {
  const Shape os = detail::reduced_shape(a.shape(), axes, keepdims);
  Tensor<S> out(os, S(0));
  std::vector<bool> red(a.shape().size(), false);
  for (Index ax : axes) red[static_cast<std::size_t>(ax)] = true;
  // map each input coordinate to the output offset (reduced axes contribute 0)
  const auto ist = detail::strides_rm(a.shape());
  std::vector<Index> omap(a.shape().size(), 0);
  {
    const auto ost = detail::strides_rm(os);
    std::size_t oi = 0;
    for (std::size_t d = 0; d < a.shape().size(); ++d) {
      if (red[d]) {
        if (keepdims) ++oi;
        continue;
      }
      omap[d] = ost[oi++];
    }
  }
  const auto x = a.data();
  auto y = out.data();
  const Index n = a.numel();
  const Index rank = a.rank();
  for (Index i = 0; i < n; ++i) {
    Index rem = i, io = 0;
    for (Index d = 0; d < rank; ++d) {
      const Index c = rem / ist[static_cast<std::size_t>(d)];
      rem -= c * ist[static_cast<std::size_t>(d)];
      io += c * omap[static_cast<std::size_t>(d)];
    }
    y[io] += x[i];
  }
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(a)) {
    const std::int64_t an = a.node;
    const Shape as = a.shape();
    tape->record(out, [an, as, omap](GradTape<S>& t, const std::vector<S>& g) {
      auto& da = t.grad_buffer(an);
      const auto ist = detail::strides_rm(as);
      const Index n = numel_of(as);
      const Index rank = static_cast<Index>(as.size());
      for (Index i = 0; i < n; ++i) {
        Index rem = i, io = 0;
        for (Index d = 0; d < rank; ++d) {
          const Index c = rem / ist[static_cast<std::size_t>(d)];
          rem -= c * ist[static_cast<std::size_t>(d)];
          io += c * omap[static_cast<std::size_t>(d)];
        }
        da[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(io)];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a, const std::vector<Index>& axes, bool keepdims = false) {
  Index n = 1;
  for (Index ax : axes) n *= a.dim(ax);
  return scale(sum(a, axes, keepdims), S(1) / static_cast<S>(n));
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
  Tensor<S> out{Shape{}};
  S acc = 0;
  for (S v : a.data()) acc += v;
  out.data()[0] = acc;
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(a)) {
    const std::int64_t an = a.node;
    tape->record(out, [an](GradTape<S>& t, const std::vector<S>& g) {
      auto& da = t.grad_buffer(an);
      for (auto& v : da) v += g[0];
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.numel()));
}

template <typename S>
Tensor<S> sum_abs(const Tensor<S>& a) {
  Tensor<S> out{Shape{}};
  S acc = 0;
  for (S v : a.data()) acc += std::abs(v);
  out.data()[0] = acc;
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(a)) {
    const std::int64_t an = a.node;
    Tensor<S> ac = a;
    tape->record(out, [an, ac](GradTape<S>& t, const std::vector<S>& g) {
      auto& da = t.grad_buffer(an);
      const auto x = ac.data();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += x[i] > S(0) ? g[0] : (x[i] < S(0) ? -g[0] : S(0));
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean_abs(const Tensor<S>& a) {
  return scale(sum_abs(a), S(1) / static_cast<S>(a.numel()));
}

template <typename S>
Tensor<S> l2_norm(const Tensor<S>& a) {
  Tensor<S> out{Shape{}};
  double acc = 0;
  for (S v : a.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  const S nrm = static_cast<S>(std::sqrt(acc));
  out.data()[0] = nrm;
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(a)) {
    const std::int64_t an = a.node;
    Tensor<S> ac = a;
    tape->record(out, [an, ac, nrm](GradTape<S>& t, const std::vector<S>& g) {
      auto& da = t.grad_buffer(an);
      const auto x = ac.data();
      const S denom = nrm > S(0) ? nrm : S(1);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[0] * x[i] / denom;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.rank() == 2 && b.rank() == 2,
          "matmul: expects rank-2 tensors, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  require(a.dim(1) == b.dim(0),
          "matmul: inner dimensions differ between " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out(Shape{m, n});
  detail::CMapM<S> A(a.data().data(), m, k), B(b.data().data(), k, n);
  detail::MapM<S> O(out.data().data(), m, n);
  O.noalias() = A * B;
  Metrics::instance().add_flops(2.0 * static_cast<double>(m) * static_cast<double>(n) * static_cast<double>(k));
  auto* tape = GradTape<S>::current();
  if (tape && (tape->tracks(a) || tape->tracks(b))) {
    const std::int64_t an = tape->tracks(a) ? a.node : -1;
    const std::int64_t bn = tape->tracks(b) ? b.node : -1;
    Tensor<S> ac = a, bc = b;
    tape->record(out, [an, bn, ac, bc, m, k, n](GradTape<S>& t, const std::vector<S>& g) {
      detail::CMapM<S> A(ac.data().data(), m, k), B(bc.data().data(), k, n), G(g.data(), m, n);
      if (an >= 0) {
        detail::MapM<S> DA(t.grad_buffer(an).data(), m, k);
        DA.noalias() += G * B.transpose();
      }
      if (bn >= 0) {
        detail::MapM<S> DB(t.grad_buffer(bn).data(), k, n);
        DB.noalias() += A.transpose() * G;
      }
    });
  }
  return out;
}

// x:[N,Din] w:[Din,Dout] b:[Dout] -> [N,Dout]
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  require(x.rank() == 2 && w.rank() == 2 && b.rank() == 1,
          "linear: bad ranks for " + shape_str(x.shape()) + ", " + shape_str(w.shape()) + ", " + shape_str(b.shape()));
  require(x.dim(1) == w.dim(0) && w.dim(1) == b.dim(0),
          "linear: dimension mismatch between " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const Index n = x.dim(0), din = x.dim(1), dout = w.dim(1);
  Tensor<S> out(Shape{n, dout});
  detail::CMapM<S> X(x.data().data(), n, din), W(w.data().data(), din, dout);
  detail::MapM<S> O(out.data().data(), n, dout);
  O.noalias() = X * W;
  O.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.data().data(), dout);
  Metrics::instance().add_flops(2.0 * static_cast<double>(n) * static_cast<double>(din) * static_cast<double>(dout));
  auto* tape = GradTape<S>::current();
  if (tape && (tape->tracks(x) || tape->tracks(w) || tape->tracks(b))) {
    const std::int64_t xn = tape->tracks(x) ? x.node : -1;
    const std::int64_t wn = tape->tracks(w) ? w.node : -1;
    const std::int64_t bn = tape->tracks(b) ? b.node : -1;
    Tensor<S> xc = x, wc = w;
    tape->record(out, [xn, wn, bn, xc, wc, n, din, dout](GradTape<S>& t, const std::vector<S>& g) {
      detail::CMapM<S> X(xc.data().data(), n, din), W(wc.data().data(), din, dout), G(g.data(), n, dout);
      if (xn >= 0) {
        detail::MapM<S> DX(t.grad_buffer(xn).data(), n, din);
        DX.noalias() += G * W.transpose();
      }
      if (wn >= 0) {
        detail::MapM<S> DW(t.grad_buffer(wn).data(), din, dout);
        DW.noalias() += X.transpose() * G;
      }
      if (bn >= 0) {
        auto& db = t.grad_buffer(bn);
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < dout; ++j) db[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * dout + j)];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// row-wise softmax / layernorm over the last axis

template <typename S>
Tensor<S> softmax(const Tensor<S>& a) {
  require(a.rank() >= 1, "softmax: needs at least rank 1");
  const Index d = a.shape().back();
  const Index rows = a.numel() / d;
  Tensor<S> out(a.shape());
  const auto x = a.data();
  auto y = out.data();
  for (Index r = 0; r < rows; ++r) {
    const S* xr = x.data() + r * d;
    S* yr = y.data() + r * d;
    S mx = xr[0];
    for (Index j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    S sum = 0;
    for (Index j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (Index j = 0; j < d; ++j) yr[j] /= sum;
  }
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(a)) {
    const std::int64_t an = a.node;
    Tensor<S> oc = out;
    tape->record(out, [an, oc, rows, d](GradTape<S>& t, const std::vector<S>& g) {
      auto& da = t.grad_buffer(an);
      const auto p = oc.data();
      for (Index r = 0; r < rows; ++r) {
        const S* pr = p.data() + r * d;
        const S* gr = g.data() + r * d;
        S dot = 0;
        for (Index j = 0; j < d; ++j) dot += gr[j] * pr[j];
        for (Index j = 0; j < d; ++j) da[static_cast<std::size_t>(r * d + j)] += pr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> layernorm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(1e-5)) {
  const Index d = x.shape().back();
  require(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
          "layernorm: gamma/beta must be length-" + std::to_string(d) + " vectors");
  const Index rows = x.numel() / d;
  Tensor<S> out(x.shape());
  Tensor<S> xhat(x.shape());  // cached for backward
  std::vector<S> inv_std(static_cast<std::size_t>(rows));
  const auto px = x.data();
  const auto pg = gamma.data();
  const auto pb = beta.data();
  auto po = out.data();
  auto ph = xhat.data();
  for (Index r = 0; r < rows; ++r) {
    const S* xr = px.data() + r * d;
    S mu = 0;
    for (Index j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<S>(d);
    S var = 0;
    for (Index j = 0; j < d; ++j) {
      const S c = xr[j] - mu;
      var += c * c;
    }
    var /= static_cast<S>(d);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = inv;
    for (Index j = 0; j < d; ++j) {
      const S h = (xr[j] - mu) * inv;
      ph[r * d + j] = h;
      po[r * d + j] = pg[j] * h + pb[j];
    }
  }
  auto* tape = GradTape<S>::current();
  if (tape && (tape->tracks(x) || tape->tracks(gamma) || tape->tracks(beta))) {
    const std::int64_t xn = tape->tracks(x) ? x.node : -1;
    const std::int64_t gn = tape->tracks(gamma) ? gamma.node : -1;
    const std::int64_t bn = tape->tracks(beta) ? beta.node : -1;
    Tensor<S> gc = gamma, hc = xhat;
    tape->record(out, [xn, gn, bn, gc, hc, inv_std, rows, d](GradTape<S>& t, const std::vector<S>& g) {
      const auto pg = gc.data();
      const auto ph = hc.data();
      for (Index r = 0; r < rows; ++r) {
        const S* gr = g.data() + r * d;
        const S* hr = ph.data() + r * d;
        if (xn >= 0) {
          auto& dx = t.grad_buffer(xn);
          S s1 = 0, s2 = 0;
          for (Index j = 0; j < d; ++j) {
            const S dh = gr[j] * pg[j];
            s1 += dh;
            s2 += dh * hr[j];
          }
          const S inv = inv_std[static_cast<std::size_t>(r)];
          for (Index j = 0; j < d; ++j) {
            const S dh = gr[j] * pg[j];
            dx[static_cast<std::size_t>(r * d + j)] +=
                inv * (dh - s1 / static_cast<S>(d) - hr[j] * s2 / static_cast<S>(d));
          }
        }
        if (gn >= 0) {
          auto& dg = t.grad_buffer(gn);
          for (Index j = 0; j < d; ++j) dg[static_cast<std::size_t>(j)] += gr[j] * hr[j];
        }
        if (bn >= 0) {
          auto& db = t.grad_buffer(bn);
          for (Index j = 0; j < d; ++j) db[static_cast<std::size_t>(j)] += gr[j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolutions (single sample, H x W x C layout)

namespace detail {

// im2col for HWC input: rows are output pixels, columns run over (ky, kx, ci)
template <typename S>
void im2col(const Tensor<S>& x, Index kh, Index kw, Index stride, Index pad, Index ho, Index wo, S* cols) {
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const auto px = x.data();
  Index idx = 0;
  for (Index oy = 0; oy < ho; ++oy) {
    for (Index ox = 0; ox < wo; ++ox) {
      for (Index ky = 0; ky < kh; ++ky) {
        const Index iy = oy * stride + ky - pad;
        for (Index kx = 0; kx < kw; ++kx) {
          const Index ix = ox * stride + kx - pad;
          if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
            std::memcpy(cols + idx, px.data() + (iy * w + ix) * c, static_cast<std::size_t>(c) * sizeof(S));
          } else {
            std::memset(cols + idx, 0, static_cast<std::size_t>(c) * sizeof(S));
          }
          idx += c;
        }
      }
    }
  }
}

template <typename S>
void col2im_add(S* dx, Index h, Index w, Index c, Index kh, Index kw, Index stride, Index pad, Index ho, Index wo,
                const S* dcols) {
  Index idx = 0;
  for (Index oy = 0; oy < ho; ++oy) {
    for (Index ox = 0; ox < wo; ++ox) {
      for (Index ky = 0; ky < kh; ++ky) {
        const Index iy = oy * stride + ky - pad;
        for (Index kx = 0; kx < kw; ++kx) {
          const Index ix = ox * stride + kx - pad;
          if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
            S* dst = dx + (iy * w + ix) * c;
            for (Index ci = 0; ci < c; ++ci) dst[ci] += dcols[idx + ci];
          }
          idx += c;
        }
      }
    }
  }
}

}  // namespace detail

// x:[H,W,Cin] w:[kh,kw,Cin,Cout] b:[Cout] -> [Ho,Wo,Cout]
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Index stride, Index pad) {
  require(x.rank() == 3 && w.rank() == 4, "conv2d: expects x [H,W,C] and w [kh,kw,Cin,Cout], got " +
                                              shape_str(x.shape()) + " and " + shape_str(w.shape()));
  require(x.dim(2) == w.dim(2),
          "conv2d: channel mismatch between " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const Index h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const Index kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  require(b.rank() == 1 && b.dim(0) == cout, "conv2d: bias must be length-" + std::to_string(cout));
  const Index ho = (h + 2 * pad - kh) / stride + 1;
  const Index wo = (wd + 2 * pad - kw) / stride + 1;
  require(ho > 0 && wo > 0, "conv2d: output would be empty for input " + shape_str(x.shape()));
  const Index m = ho * wo, k = kh * kw * cin;
  std::vector<S> cols(static_cast<std::size_t>(m * k));
  detail::im2col(x, kh, kw, stride, pad, ho, wo, cols.data());
  Tensor<S> out(Shape{ho, wo, cout});
  detail::CMapM<S> C(cols.data(), m, k), W(w.data().data(), k, cout);
  detail::MapM<S> O(out.data().data(), m, cout);
  O.noalias() = C * W;
  O.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.data().data(), cout);
  Metrics::instance().add_flops(2.0 * static_cast<double>(m) * static_cast<double>(k) * static_cast<double>(cout));
  auto* tape = GradTape<S>::current();
  if (tape && (tape->tracks(x) || tape->tracks(w) || tape->tracks(b))) {
    const std::int64_t xn = tape->tracks(x) ? x.node : -1;
    const std::int64_t wn = tape->tracks(w) ? w.node : -1;
    const std::int64_t bn = tape->tracks(b) ? b.node : -1;
    auto cols_keep = std::make_shared<std::vector<S>>(std::move(cols));
    Tensor<S> wc = w;
    tape->record(out, [=, xs = x.shape()](GradTape<S>& t, const std::vector<S>& g) {
      detail::CMapM<S> G(g.data(), m, cout);
      if (wn >= 0) {
        detail::CMapM<S> C(cols_keep->data(), m, k);
        detail::MapM<S> DW(t.grad_buffer(wn).data(), k, cout);
        DW.noalias() += C.transpose() * G;
      }
      if (bn >= 0) {
        auto& db = t.grad_buffer(bn);
        for (Index i = 0; i < m; ++i)
          for (Index j = 0; j < cout; ++j) db[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * cout + j)];
      }
      if (xn >= 0) {
        std::vector<S> dcols(static_cast<std::size_t>(m * k));
        detail::CMapM<S> W(wc.data().data(), k, cout);
        detail::MapM<S> DC(dcols.data(), m, k);
        DC.noalias() = G * W.transpose();
        detail::col2im_add(t.grad_buffer(xn).data(), xs[0], xs[1], xs[2], kh, kw, stride, pad, ho, wo, dcols.data());
      }
    });
  }
  return out;
}

// depthwise 3x3-style conv, stride 1, "same" zero padding (pad = k/2)
// x:[H,W,C] w:[kh,kw,C] b:[C]
template <typename S>
Tensor<S> dwconv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  require(x.rank() == 3 && w.rank() == 3, "dwconv2d: expects x [H,W,C] and w [kh,kw,C], got " +
                                              shape_str(x.shape()) + " and " + shape_str(w.shape()));
  require(x.dim(2) == w.dim(2),
          "dwconv2d: channel mismatch between " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
  const Index h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  const Index kh = w.dim(0), kw = w.dim(1);
  require(b.rank() == 1 && b.dim(0) == c, "dwconv2d: bias must be length-" + std::to_string(c));
  const Index ph = kh / 2, pw = kw / 2;
  Tensor<S> out(Shape{h, wd, c});
  const auto px = x.data();
  const auto pw_ = w.data();
  const auto pb = b.data();
  auto po = out.data();
  for (Index y = 0; y < h; ++y) {
    for (Index xo = 0; xo < wd; ++xo) {
      S* orow = po.data() + (y * wd + xo) * c;
      for (Index ci = 0; ci < c; ++ci) orow[ci] = pb[ci];
      for (Index ky = 0; ky < kh; ++ky) {
        const Index iy = y + ky - ph;
        if (iy < 0 || iy >= h) continue;
        for (Index kx = 0; kx < kw; ++kx) {
          const Index ix = xo + kx - pw;
          if (ix < 0 || ix >= wd) continue;
          const S* xrow = px.data() + (iy * wd + ix) * c;
          const S* wrow = pw_.data() + (ky * kw + kx) * c;
          for (Index ci = 0; ci < c; ++ci) orow[ci] += xrow[ci] * wrow[ci];
        }
      }
    }
  }
  Metrics::instance().add_flops(2.0 * static_cast<double>(h * wd) * static_cast<double>(kh * kw) *
                                static_cast<double>(c));
  auto* tape = GradTape<S>::current();
  if (tape && (tape->tracks(x) || tape->tracks(w) || tape->tracks(b))) {
    const std::int64_t xn = tape->tracks(x) ? x.node : -1;
    const std::int64_t wn = tape->tracks(w) ? w.node : -1;
    const std::int64_t bn = tape->tracks(b) ? b.node : -1;
    Tensor<S> xc = x, wc = w;
    tape->record(out, [=](GradTape<S>& t, const std::vector<S>& g) {
      const auto px = xc.data();
      const auto pw_ = wc.data();
      for (Index y = 0; y < h; ++y) {
        for (Index xo = 0; xo < wd; ++xo) {
          const S* grow = g.data() + (y * wd + xo) * c;
          if (bn >= 0) {
            auto& db = t.grad_buffer(bn);
            for (Index ci = 0; ci < c; ++ci) db[static_cast<std::size_t>(ci)] += grow[ci];
          }
          for (Index ky = 0; ky < kh; ++ky) {
            const Index iy = y + ky - ph;
            if (iy < 0 || iy >= h) continue;
            for (Index kx = 0; kx < kw; ++kx) {
              const Index ix = xo + kx - pw;
              if (ix < 0 || ix >= wd) continue;
              const S* xrow = px.data() + (iy * wd + ix) * c;
              const S* wrow = pw_.data() + (ky * kw + kx) * c;
              if (xn >= 0) {
                auto& dx = t.grad_buffer(xn);
                S* dxr = dx.data() + (iy * wd + ix) * c;
                for (Index ci = 0; ci < c; ++ci) dxr[ci] += grow[ci] * wrow[ci];
              }
              if (wn >= 0) {
                auto& dw = t.grad_buffer(wn);
                S* dwr = dw.data() + (ky * kw + kx) * c;
                for (Index ci = 0; ci < c; ++ci) dwr[ci] += grow[ci] * xrow[ci];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// nearest-neighbour 2x upsample, [H,W,C] -> [2H,2W,C]
template <typename S>
Tensor<S> upsample2x(const Tensor<S>& x) {
  require(x.rank() == 3, "upsample2x: expects [H,W,C], got " + shape_str(x.shape()));
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor<S> out(Shape{2 * h, 2 * w, c});
  const auto px = x.data();
  auto po = out.data();
  for (Index y = 0; y < h; ++y)
    for (Index xo = 0; xo < w; ++xo) {
      const S* src = px.data() + (y * w + xo) * c;
      for (Index dy = 0; dy < 2; ++dy)
        for (Index dx = 0; dx < 2; ++dx)
          std::memcpy(po.data() + ((2 * y + dy) * 2 * w + 2 * xo + dx) * c, src,
                      static_cast<std::size_t>(c) * sizeof(S));
    }
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(x)) {
    const std::int64_t xn = x.node;
    tape->record(out, [xn, h, w, c](GradTape<S>& t, const std::vector<S>& g) {
      auto& dx = t.grad_buffer(xn);
      for (Index y = 0; y < h; ++y)
        for (Index xo = 0; xo < w; ++xo) {
          S* dst = dx.data() + (y * w + xo) * c;
          for (Index dy = 0; dy < 2; ++dy)
            for (Index dx_ = 0; dx_ < 2; ++dx_) {
              const S* src = g.data() + ((2 * y + dy) * 2 * w + 2 * xo + dx_) * c;
              for (Index ci = 0; ci < c; ++ci) dst[ci] += src[ci];
            }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// token gather/scatter (sparse window selection mechanics)

// x:[L,C], idx strictly increasing row indices -> [K,C]
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<Index>& idx) {
  require(x.rank() == 2, "gather_rows: expects [L,C], got " + shape_str(x.shape()));
  const Index l = x.dim(0), c = x.dim(1);
  const Index kcount = static_cast<Index>(idx.size());
  require(kcount > 0, "gather_rows: empty index set");
  Tensor<S> out(Shape{kcount, c});
  const auto px = x.data();
  auto po = out.data();
  for (Index k = 0; k < kcount; ++k) {
    require(idx[static_cast<std::size_t>(k)] >= 0 && idx[static_cast<std::size_t>(k)] < l,
            "gather_rows: index out of range");
    std::memcpy(po.data() + k * c, px.data() + idx[static_cast<std::size_t>(k)] * c,
                static_cast<std::size_t>(c) * sizeof(S));
  }
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(x)) {
    const std::int64_t xn = x.node;
    tape->record(out, [xn, idx, c](GradTape<S>& t, const std::vector<S>& g) {
      auto& dx = t.grad_buffer(xn);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        S* dst = dx.data() + idx[k] * c;
        const S* src = g.data() + static_cast<Index>(k) * c;
        for (Index ci = 0; ci < c; ++ci) dst[ci] += src[ci];
      }
    });
  }
  return out;
}

// v:[K,C] scattered into a zero [L,C]; indices must be unique
template <typename S>
Tensor<S> scatter_rows(const Tensor<S>& v, const std::vector<Index>& idx, Index l) {
  require(v.rank() == 2, "scatter_rows: expects [K,C], got " + shape_str(v.shape()));
  require(static_cast<Index>(idx.size()) == v.dim(0), "scatter_rows: index count does not match rows");
  const Index c = v.dim(1);
  Tensor<S> out(Shape{l, c}, S(0));
  const auto pv = v.data();
  auto po = out.data();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    require(idx[k] >= 0 && idx[k] < l, "scatter_rows: index out of range");
    std::memcpy(po.data() + idx[k] * c, pv.data() + static_cast<Index>(k) * c,
                static_cast<std::size_t>(c) * sizeof(S));
  }
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(v)) {
    const std::int64_t vn = v.node;
    tape->record(out, [vn, idx, c](GradTape<S>& t, const std::vector<S>& g) {
      auto& dv = t.grad_buffer(vn);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const S* src = g.data() + idx[k] * c;
        S* dst = dv.data() + static_cast<Index>(k) * c;
        for (Index ci = 0; ci < c; ++ci) dst[ci] += src[ci];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses

// logits: rank-1 [C]; returns scalar -log softmax(logits)[label]
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, Index label) {
  require(logits.rank() == 1, "cross_entropy: expects rank-1 logits, got " + shape_str(logits.shape()));
  const Index c = logits.dim(0);
  require(label >= 0 && label < c,
          "cross_entropy: label " + std::to_string(label) + " out of range [0, " + std::to_string(c) + ")");
  const auto x = logits.data();
  S mx = x[0];
  for (Index j = 1; j < c; ++j) mx = std::max(mx, x[j]);
  double sum = 0;
  for (Index j = 0; j < c; ++j) sum += std::exp(static_cast<double>(x[j] - mx));
  const double lse = static_cast<double>(mx) + std::log(sum);
  Tensor<S> out{Shape{}};
  out.data()[0] = static_cast<S>(lse - static_cast<double>(x[label]));
  auto* tape = GradTape<S>::current();
  if (tape && tape->tracks(logits)) {
    const std::int64_t ln = logits.node;
    Tensor<S> lc = logits;
    tape->record(out, [ln, lc, label, c, mx, sum](GradTape<S>& t, const std::vector<S>& g) {
      auto& dl = t.grad_buffer(ln);
      const auto x = lc.data();
      for (Index j = 0; j < c; ++j) {
        const S p = static_cast<S>(std::exp(static_cast<double>(x[j] - mx)) / sum);
        dl[static_cast<std::size_t>(j)] += g[0] * (p - (j == label ? S(1) : S(0)));
      }
    });
  }
  return out;
}

}  // namespace ammsm
