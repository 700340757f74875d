#pragma once

#include <algorithm>
#include <numeric>

#include "ammsm/ops.hpp"

// Window-granular spatial selection: 4x4 window partition, L2 importance
// scores, top-k masking, mask application, and end-of-stage restoration.
// Scores are plain data (selection is not differentiated through); gradient
// flows only through kept entries of the masked feature map.

namespace ammsm {

inline constexpr Index kWindow = 4;

// Logical 4x4 window tiling of an H x W x C map. No data is copied; the grid
// only hands out index mappings.
struct WindowGrid {
  Index h = 0, w = 0, c = 0;
  Index grid_h = 0, grid_w = 0;

  Index n_windows() const { return grid_h * grid_w; }

  // Row indices (into the row-major [H*W, C] token view) of window (m, n).
  std::vector<Index> window_token_rows(Index m, Index n) const {
    require(m >= 0 && m < grid_h && n >= 0 && n < grid_w, "WindowGrid: window index out of range");
    std::vector<Index> rows;
    rows.reserve(static_cast<std::size_t>(kWindow * kWindow));
    for (Index dy = 0; dy < kWindow; ++dy) {
      const Index y = m * kWindow + dy;
      if (y >= h) break;
      for (Index dx = 0; dx < kWindow; ++dx) {
        const Index x = n * kWindow + dx;
        if (x >= w) break;
        rows.push_back(y * w + x);
      }
    }
    return rows;
  }
};

template <typename S>
WindowGrid partition_windows(const Tensor<S>& x) {
  require(x.rank() == 3, "partition_windows: expects [H,W,C], got " + shape_str(x.shape()));
  require(x.dim(0) % kWindow == 0 && x.dim(1) % kWindow == 0,
          "partition_windows: dims must be divisible by 4, got " + shape_str(x.shape()) +
              " (padding belongs upstream)");
  return WindowGrid{x.dim(0), x.dim(1), x.dim(2), x.dim(0) / kWindow, x.dim(1) / kWindow};
}

// Per-window L2 norms, row-major over the window grid.
struct ImportanceMap {
  Index grid_h = 0, grid_w = 0;
  std::vector<double> phi;

  Index n_windows() const { return grid_h * grid_w; }
};

namespace detail {
template <typename S>
ImportanceMap window_l2_scores(const Tensor<S>& x, Index grid_h, Index grid_w) {
  const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
  ImportanceMap imp{grid_h, grid_w, std::vector<double>(static_cast<std::size_t>(grid_h * grid_w), 0.0)};
  const auto px = x.data();
  for (Index y = 0; y < h; ++y) {
    const Index m = y / kWindow;
    for (Index xo = 0; xo < w; ++xo) {
      const Index n = xo / kWindow;
      const S* row = px.data() + (y * w + xo) * c;
      double acc = 0;
      for (Index ci = 0; ci < c; ++ci) acc += static_cast<double>(row[ci]) * static_cast<double>(row[ci]);
      imp.phi[static_cast<std::size_t>(m * grid_w + n)] += acc;
    }
  }
  for (auto& v : imp.phi) {
    v = std::sqrt(v);
    if (!std::isfinite(v)) throw NumericError("importance_scores: non-finite window norm");
  }
  Metrics::instance().count("importance_scores_calls");
  return imp;
}
}  // namespace detail

template <typename S>
ImportanceMap importance_scores(const Tensor<S>& x) {
  const WindowGrid grid = partition_windows(x);
  return detail::window_l2_scores(x, grid.grid_h, grid.grid_w);
}

// Scoring with implicit bottom/right zero padding to the next multiple of 4;
// the zero pad contributes nothing to any window norm, so no copy is made.
template <typename S>
ImportanceMap importance_scores_padded(const Tensor<S>& x) {
  require(x.rank() == 3, "importance_scores_padded: expects [H,W,C], got " + shape_str(x.shape()));
  const Index gh = (x.dim(0) + kWindow - 1) / kWindow;
  const Index gw = (x.dim(1) + kWindow - 1) / kWindow;
  return detail::window_l2_scores(x, gh, gw);
}

// Boolean keep-grid plus its derived keep count.
struct Mask {
  Index grid_h = 0, grid_w = 0;
  std::vector<std::uint8_t> keep;
  Index keep_count = 0;

  Index n_windows() const { return grid_h * grid_w; }
  bool kept(Index m, Index n) const { return keep[static_cast<std::size_t>(m * grid_w + n)] != 0; }
};

inline Index keep_count_rule(double sparsity, Index n_windows) {
  return std::max<Index>(1, static_cast<Index>(std::floor((1.0 - sparsity) * static_cast<double>(n_windows))));
}

// Keeps the k = max(1, floor((1-s)*N)) highest-scoring windows; ties break
// toward the lowest row-major window index.
inline Mask topk_mask(const ImportanceMap& phi, double sparsity) {
  require_config(sparsity >= 0.0 && sparsity < 1.0,
                 "topk_mask: sparsity ratio " + std::to_string(sparsity) + " outside [0, 1)");
  const Index n = phi.n_windows();
  require(n > 0, "topk_mask: empty importance map");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double pa = phi.phi[static_cast<std::size_t>(a)];
    const double pb = phi.phi[static_cast<std::size_t>(b)];
    if (pa != pb) return pa > pb;
    return a < b;
  });
  Mask m{phi.grid_h, phi.grid_w, std::vector<std::uint8_t>(static_cast<std::size_t>(n), 0), 0};
  m.keep_count = keep_count_rule(sparsity, n);
  for (Index i = 0; i < m.keep_count; ++i) m.keep[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  Metrics::instance().count("topk_mask_calls");
  return m;
}

// Token rows (row-major over the map) inside kept windows. Row-major token
// order keeps the sparse compute path bit-identical to the dense path when
// every window is kept.
inline std::vector<Index> kept_token_rows(const Mask& m, Index h, Index w) {
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(h * w));
  for (Index y = 0; y < h; ++y) {
    const Index gm = y / kWindow;
    for (Index x = 0; x < w; ++x) {
      if (m.kept(gm, x / kWindow)) rows.push_back(y * w + x);
    }
  }
  return rows;
}

// X masked to zero outside kept windows; gradient flows only through kept
// entries (masked entries are multiplied by a constant zero).
template <typename S>
Tensor<S> apply_mask(const Tensor<S>& x, const Mask& m) {
  const WindowGrid grid = partition_windows(x);
  require(grid.grid_h == m.grid_h && grid.grid_w == m.grid_w,
          "apply_mask: mask grid " + std::to_string(m.grid_h) + "x" + std::to_string(m.grid_w) +
              " does not match feature map " + shape_str(x.shape()));
  Tensor<S> gate({x.dim(0), x.dim(1), 1});
  auto pg = gate.data();
  for (Index y = 0; y < x.dim(0); ++y)
    for (Index xo = 0; xo < x.dim(1); ++xo)
      pg[y * x.dim(1) + xo] = m.kept(y / kWindow, xo / kWindow) ? S(1) : S(0);
  return mul(x, gate);
}

// out = y on kept windows, x on masked windows, both copied bit-exactly.
// Accepts ragged dims (grid covers ceil(H/4) x ceil(W/4)); the spec-level
// copy_back contract with divisible dims is the grid-aligned special case.
template <typename S>
Tensor<S> window_select(const Tensor<S>& y, const Tensor<S>& x, const Mask& m) {
  require(y.shape() == x.shape(),
          "window_select: shape mismatch between " + shape_str(y.shape()) + " and " + shape_str(x.shape()));
  require(y.rank() == 3, "window_select: expects [H,W,C], got " + shape_str(y.shape()));
  const Index h = y.dim(0), w = y.dim(1), c = y.dim(2);
  require(m.grid_h == (h + kWindow - 1) / kWindow && m.grid_w == (w + kWindow - 1) / kWindow,
          "window_select: mask grid does not match feature map " + shape_str(y.shape()));
  Tensor<S> out(y.shape());
  const auto py = y.data();
  const auto px = x.data();
  auto po = out.data();
  for (Index yy = 0; yy < h; ++yy) {
    const Index gm = yy / kWindow;
    for (Index xo = 0; xo < w; ++xo) {
      const bool kept = m.kept(gm, xo / kWindow);
      const S* src = (kept ? py.data() : px.data()) + (yy * w + xo) * c;
      std::memcpy(po.data() + (yy * w + xo) * c, src, static_cast<std::size_t>(c) * sizeof(S));
    }
  }
  auto* tape = GradTape<S>::current();
  if (tape && (tape->tracks(y) || tape->tracks(x))) {
    const std::int64_t yn = tape->tracks(y) ? y.node : -1;
    const std::int64_t xn = tape->tracks(x) ? x.node : -1;
    const Mask mc = m;
    tape->record(out, [yn, xn, mc, h, w, c](GradTape<S>& t, const std::vector<S>& g) {
      for (Index yy = 0; yy < h; ++yy) {
        const Index gm = yy / kWindow;
        for (Index xo = 0; xo < w; ++xo) {
          const bool kept = mc.kept(gm, xo / kWindow);
          const std::int64_t node = kept ? yn : xn;
          if (node < 0) continue;
          auto& d = t.grad_buffer(node);
          const S* src = g.data() + (yy * w + xo) * c;
          S* dst = d.data() + (yy * w + xo) * c;
          for (Index ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
    });
  }
  return out;
}

// Stage-end restoration: windows masked in every layer of the stage read
// from the stage input; everything else keeps the computed stage output.
// `kept_any` is the union of per-layer keep grids.
template <typename S>
Tensor<S> copy_back(const Tensor<S>& y_stage, const Tensor<S>& x_stage_in, const Mask& kept_any) {
  return window_select(y_stage, x_stage_in, kept_any);
}

inline Mask union_mask(const Mask& a, const Mask& b) {
  require(a.grid_h == b.grid_h && a.grid_w == b.grid_w, "union_mask: grid mismatch");
  Mask out = a;
  out.keep_count = 0;
  for (std::size_t i = 0; i < out.keep.size(); ++i) {
    out.keep[i] = static_cast<std::uint8_t>(a.keep[i] | b.keep[i]);
    out.keep_count += out.keep[i];
  }
  return out;
}

}  // namespace ammsm
