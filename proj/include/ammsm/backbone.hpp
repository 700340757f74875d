#pragma once

#include <variant>

#include "ammsm/sparse_select.hpp"
#include "ammsm/ssd.hpp"

// Temporal-stream backbone: 4x4 stride-4 patch-embed stem, hierarchical
// stages of SSSD blocks (the last layer of the last two stages runs MSA
// instead), window importance scored once per stage, masks rebuilt only when
// the shared pair ratio changes, masked windows restored at stage end, and a
// 2x2 stride-2 channel-doubling downsample between stages.

namespace ammsm {

enum class BlockKind { kSSSD, kMSA };

struct StageConfig {
  std::vector<Index> layers{1, 2, 4, 2};
  std::vector<Index> channels{16, 32, 64, 128};
  Index d_state = 16;
  Index heads = 2;
  Index in_channels = 2;
  Index ffn_expand = 4;
  // Block kinds per stage/layer; empty means the default rule (final layer
  // of the last two stages is MSA).
  std::vector<std::vector<BlockKind>> kinds;

  static StageConfig desk() { return StageConfig{}; }

  static StageConfig paper() {
    StageConfig c;
    c.layers = {2, 4, 8, 4};
    c.channels = {64, 128, 256, 512};
    c.d_state = 16;
    c.heads = 2;
    return c;
  }

  Index n_stages() const { return static_cast<Index>(layers.size()); }

  BlockKind kind_of(Index stage, Index layer) const {
    if (!kinds.empty()) return kinds[static_cast<std::size_t>(stage)][static_cast<std::size_t>(layer)];
    const Index n = n_stages();
    if (n >= 3 && stage >= n - 2 && layer == layers[static_cast<std::size_t>(stage)] - 1) return BlockKind::kMSA;
    return BlockKind::kSSSD;
  }

  // One sparsity-ratio slot per consecutive pair of layers within a stage.
  Index pairs_in_stage(Index stage) const { return (layers[static_cast<std::size_t>(stage)] + 1) / 2; }

  Index ratio_slots() const {
    Index n = 0;
    for (Index i = 0; i < n_stages(); ++i) n += pairs_in_stage(i);
    return n;
  }

  Index slot_index(Index stage, Index layer) const {
    Index base = 0;
    for (Index i = 0; i < stage; ++i) base += pairs_in_stage(i);
    return base + layer / 2;
  }

  void validate() const {
    require_config(!layers.empty() && layers.size() == channels.size(),
                   "StageConfig: layers and channels must be non-empty and equal length");
    for (Index l : layers) require_config(l > 0, "StageConfig: layer counts must be positive");
    for (Index c : channels) require_config(c > 0 && c % heads == 0, "StageConfig: channels must be positive multiples of head count");
    if (!kinds.empty()) {
      require_config(kinds.size() == layers.size(), "StageConfig: kinds must cover every stage");
      for (std::size_t i = 0; i < kinds.size(); ++i)
        require_config(static_cast<Index>(kinds[i].size()) == layers[i], "StageConfig: kinds must cover every layer");
    }
  }
};

template <typename S>
struct MixerBlock {
  BlockKind kind = BlockKind::kSSSD;
  LayerNorm<S> norm1, norm2;
  DwConv<S> dw1, dw2;
  std::variant<SSDParams<S>, MSAParams<S>> mixer;
  Dense<S> ffn1, ffn2;

  static MixerBlock make(BlockKind kind, Index c, Index d_state, Index heads, Index ffn_expand, Rng& rng) {
    MixerBlock b;
    b.kind = kind;
    b.norm1 = LayerNorm<S>::make(c);
    b.norm2 = LayerNorm<S>::make(c);
    b.dw1 = DwConv<S>::make(3, 3, c, rng);
    b.dw2 = DwConv<S>::make(3, 3, c, rng);
    if (kind == BlockKind::kSSSD)
      b.mixer = SSDParams<S>::make(c, d_state, heads, rng);
    else
      b.mixer = MSAParams<S>::make(c, heads, rng);
    b.ffn1 = Dense<S>::make(c, ffn_expand * c, rng);
    b.ffn2 = Dense<S>::make(ffn_expand * c, c, rng);
    return b;
  }

  // x: [H,W,C] with masked windows already zero. `kept` lists token rows in
  // row-major map order; only those positions are computed and masked windows
  // stay exactly zero until the stage-end copy-back. A null `kept` selects
  // the dense path with the selection machinery compiled out entirely.
  Tensor<S> forward(const Tensor<S>& x, const std::vector<Index>* kept, const std::string& label) const {
    const Index h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const Index l = h * w;
    Tensor<S> t0 = reshape(x, {l, c});
    auto sparse_gather = [&](const Tensor<S>& t) { return kept ? gather_rows(t, *kept) : t; };
    auto sparse_scatter = [&](const Tensor<S>& t) { return kept ? scatter_rows(t, *kept, l) : t; };
    Tensor<S> n1 = norm1(sparse_gather(t0));
    Tensor<S> d1;
    {
      FlopScope scope(label + "/dw");
      d1 = dw1(reshape(sparse_scatter(n1), {h, w, c}));
    }
    Tensor<S> u = sparse_gather(reshape(d1, {l, c}));
    Tensor<S> mixed;
    if (kind == BlockKind::kSSSD) {
      FlopScope scope(label + "/ssd");
      mixed = ssd_core(u, std::get<SSDParams<S>>(mixer));
    } else {
      FlopScope scope(label + "/msa");
      mixed = msa_core(u, std::get<MSAParams<S>>(mixer));
    }
    Tensor<S> t1 = add(t0, sparse_scatter(mixed));
    Tensor<S> n2 = norm2(sparse_gather(t1));
    Tensor<S> d2;
    {
      FlopScope scope(label + "/dw");
      d2 = dw2(reshape(sparse_scatter(n2), {h, w, c}));
    }
    Tensor<S> v = sparse_gather(reshape(d2, {l, c}));
    Tensor<S> f;
    {
      FlopScope scope(label + "/ffn");
      f = ffn2(gelu(ffn1(v)));
    }
    return reshape(add(t1, sparse_scatter(f)), {h, w, c});
  }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    norm1.visit_params(p + "/norm1", f);
    dw1.visit_params(p + "/dw1", f);
    if (kind == BlockKind::kSSSD)
      std::get<SSDParams<S>>(mixer).visit_params(p + "/ssd", f);
    else
      std::get<MSAParams<S>>(mixer).visit_params(p + "/msa", f);
    norm2.visit_params(p + "/norm2", f);
    dw2.visit_params(p + "/dw2", f);
    ffn1.visit_params(p + "/ffn1", f);
    ffn2.visit_params(p + "/ffn2", f);
  }
};

template <typename S>
struct TemporalBackbone {
  StageConfig cfg;
  Conv<S> stem;  // 4x4 s4, in_channels -> channels[0]
  std::vector<std::vector<MixerBlock<S>>> stages;
  std::vector<Conv<S>> downsamples;  // 2x2 s2, channel doubling between stages
  LayerNorm<S> final_norm;           // closes the pre-norm trunk before pooling
  bool sparse_enabled = true;

  static TemporalBackbone make(const StageConfig& cfg, Rng& rng) {
    cfg.validate();
    TemporalBackbone bb;
    bb.cfg = cfg;
    bb.stem = Conv<S>::make(4, 4, cfg.in_channels, cfg.channels[0], 4, 0, rng);
    for (Index i = 0; i < cfg.n_stages(); ++i) {
      std::vector<MixerBlock<S>> blocks;
      for (Index j = 0; j < cfg.layers[static_cast<std::size_t>(i)]; ++j)
        blocks.push_back(MixerBlock<S>::make(cfg.kind_of(i, j), cfg.channels[static_cast<std::size_t>(i)],
                                             cfg.d_state, cfg.heads, cfg.ffn_expand, rng));
      bb.stages.push_back(std::move(blocks));
      if (i + 1 < cfg.n_stages())
        bb.downsamples.push_back(Conv<S>::make(2, 2, cfg.channels[static_cast<std::size_t>(i)],
                                               cfg.channels[static_cast<std::size_t>(i + 1)], 2, 0, rng));
    }
    bb.final_norm = LayerNorm<S>::make(cfg.channels.back());
    return bb;
  }

  struct Outputs {
    Tensor<S> stage2;  // end-of-stage-2 map (pre-fusion), for the spatial stream
    Tensor<S> pooled;  // global average over the final stage, [C_last]
  };

  // `ratios` has one entry per block pair (cfg.ratio_slots()); ignored when
  // sparse_enabled is false. `fusion` is applied to the end-of-stage-2 map
  // before the stage-2 -> 3 downsample.
  Outputs forward(const Tensor<S>& flow, const std::vector<double>& ratios,
                  const std::function<Tensor<S>(const Tensor<S>&)>& fusion = nullptr) const {
    require(flow.rank() == 3 && flow.dim(2) == cfg.in_channels,
            "backbone: expected [H,W," + std::to_string(cfg.in_channels) + "], got " + shape_str(flow.shape()));
    require(flow.dim(0) % 4 == 0 && flow.dim(1) % 4 == 0,
            "backbone: flow dims must be divisible by the stem stride, got " + shape_str(flow.shape()));
    if (sparse_enabled)
      require(static_cast<Index>(ratios.size()) == cfg.ratio_slots(),
              "backbone: expected " + std::to_string(cfg.ratio_slots()) + " sparsity ratios, got " +
                  std::to_string(ratios.size()));
    Tensor<S> x;
    {
      FlopScope scope("temporal/stem");
      x = stem(flow);
    }
    Outputs out;
    for (Index i = 0; i < cfg.n_stages(); ++i) {
      const std::string stage_label = "temporal/s" + std::to_string(i);
      const Index h = x.dim(0), w = x.dim(1);
      auto& blocks = stages[static_cast<std::size_t>(i)];
      if (sparse_enabled) {
        const Tensor<S> stage_in = x;
        // importance scored once per stage, on the stage input
        const ImportanceMap phi = importance_scores_padded(x);
        Metrics::instance().count("scores/" + stage_label);
        Mask mask;
        Mask kept_any{phi.grid_h, phi.grid_w,
                      std::vector<std::uint8_t>(static_cast<std::size_t>(phi.n_windows()), 0), 0};
        double prev_ratio = -1.0;
        std::vector<Index> kept;
        for (Index j = 0; j < static_cast<Index>(blocks.size()); ++j) {
          const double s = ratios[static_cast<std::size_t>(cfg.slot_index(i, j))];
          if (j == 0 || s != prev_ratio) {
            // mask rebuilt from the cached scores only when the ratio changes
            mask = topk_mask(phi, s);
            kept = kept_token_rows(mask, h, w);
            Metrics::instance().count("mask_rebuild/" + stage_label);
            prev_ratio = s;
            x = apply_mask_ragged(x, mask);
          }
          kept_any = union_mask(kept_any, mask);
          x = blocks[static_cast<std::size_t>(j)].forward(x, &kept, stage_label + "/l" + std::to_string(j));
        }
        x = copy_back(x, stage_in, kept_any);
      } else {
        for (Index j = 0; j < static_cast<Index>(blocks.size()); ++j)
          x = blocks[static_cast<std::size_t>(j)].forward(x, nullptr, stage_label + "/l" + std::to_string(j));
      }
      if (i == 1) {
        if (fusion) x = fusion(x);
        out.stage2 = x;
      }
      if (i + 1 < cfg.n_stages()) {
        FlopScope scope(stage_label + "/down");
        x = downsamples[static_cast<std::size_t>(i)](x);
      }
    }
    if (cfg.n_stages() == 1) out.stage2 = x;
    out.pooled = mean(final_norm(x), {0, 1});
    return out;
  }

  void visit_params(const std::string& p, const ParamVisitor<S>& f) {
    stem.visit_params(p + "/stem", f);
    for (std::size_t i = 0; i < stages.size(); ++i) {
      for (std::size_t j = 0; j < stages[i].size(); ++j)
        stages[i][j].visit_params(p + "/s" + std::to_string(i) + "/l" + std::to_string(j), f);
      if (i < downsamples.size()) downsamples[i].visit_params(p + "/down" + std::to_string(i), f);
    }
    final_norm.visit_params(p + "/final_norm", f);
  }

 private:
  // apply_mask with implicit bottom/right padding semantics: works for maps
  // whose dims are not multiples of 4 (late stages).
  static Tensor<S> apply_mask_ragged(const Tensor<S>& x, const Mask& m) {
    const Index h = x.dim(0), w = x.dim(1);
    Tensor<S> gate({h, w, 1});
    auto pg = gate.data();
    for (Index y = 0; y < h; ++y)
      for (Index xo = 0; xo < w; ++xo) pg[y * w + xo] = m.kept(y / kWindow, xo / kWindow) ? S(1) : S(0);
    return mul(x, gate);
  }
};

// Spec-level entry point: stage-2 features (for fusion) plus pooled final
// features, no fusion hook.
template <typename S>
std::pair<Tensor<S>, Tensor<S>> backbone_forward(const TemporalBackbone<S>& bb, const Tensor<S>& of_mag,
                                                 const std::vector<double>& ratios) {
  auto out = bb.forward(of_mag, ratios, nullptr);
  return {out.stage2, out.pooled};
}

}  // namespace ammsm
