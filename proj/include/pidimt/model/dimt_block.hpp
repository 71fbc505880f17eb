#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pidimt/core/nn.hpp"
#include "pidimt/core/ops.hpp"
#include "pidimt/model/attention.hpp"
#include "pidimt/model/config.hpp"
#include "pidimt/model/mamba.hpp"
#include "pidimt/model/modulation.hpp"
#include "pidimt/model/moe.hpp"

namespace pidimt {

// silu(W_g u) elementwise-gates a parallel value path before the output map.
template <typename T>
struct GatedMlp {
  Linear<T> wg, wv, wo;

  void build(std::size_t d, std::size_t hidden) {
    wg.build(d, hidden);
    wv.build(d, hidden);
    wo.build(hidden, d);
  }
  void init(Rng& rng) {
    wg.init(rng);
    wv.init(rng);
    wo.init(rng);
  }
  void collect(ParamMap<T>& m, const std::string& p) {
    wg.collect(m, p + ".wg");
    wv.collect(m, p + ".wv");
    wo.collect(m, p + ".wo");
  }
  Value<T> operator()(Graph<T>& g, const Value<T>& x) const {
    return wo(g, mul(silu(wg(g, x)), wv(g, x)));
  }
};

// Residual unit with five conditioned subpaths. Each applies
// x <- x + gate (.) Subpath(scale (.) norm(x) + shift), where scale, shift
// and gate come from one modulation head driven by the conditioning vector.
// The application order is configurable; the parameter layout is keyed by
// subpath kind, so reordering never remaps weights.
template <typename T>
struct DimtBlock {
  MambaLayer<T> mamba;
  MultiHeadAttention<T> self_attn;
  GatedMlp<T> mlp;
  MultiHeadAttention<T> cross_attn;
  MoeLayer<T> moe;
  ModulationHead<T> mod_head;
  std::vector<SubpathKind> order;

  void build(const DimtConfig& cfg) {
    cfg.validate();
    mamba.build(cfg.d, cfg.n_state, cfg.expand);
    self_attn.build(cfg.d, cfg.heads);
    mlp.build(cfg.d, cfg.mlp_hidden());
    cross_attn.build(cfg.d, cfg.heads);
    moe.build(cfg.d, cfg.e_shallow, cfg.e_deep, cfg.top_k);
    mod_head.build(cfg.d);
    order = cfg.block_order;
  }

  void init(Rng& rng) {
    mamba.init(rng);
    self_attn.init(rng);
    mlp.init(rng);
    cross_attn.init(rng);
    moe.init(rng);
    mod_head.init();
  }

  void collect(ParamMap<T>& m, const std::string& p) {
    mamba.collect(m, p + ".mamba");
    self_attn.collect(m, p + ".self_attn");
    mlp.collect(m, p + ".mlp");
    cross_attn.collect(m, p + ".cross_attn");
    moe.collect(m, p + ".moe");
    mod_head.collect(m, p + ".mod");
  }

  Value<T> operator()(Graph<T>& g, Value<T> x, const std::vector<std::uint8_t>& mask,
                      const Value<T>& y, const Value<T>& memory,
                      const std::vector<std::uint8_t>& memory_mask, double gate_noise_sigma = 0.0,
                      Rng* rng = nullptr) const {
    if (mask.size() != x.val().rows())
      throw std::invalid_argument("block: token mask length must equal token count");
    auto mods = mod_head(g, y);
    for (SubpathKind kind : order) {
      const auto& mod = mods[static_cast<std::size_t>(kind)];
      auto u = add_rowvec(mul_rowvec(layer_norm_plain(x, 1e-5), mod.scale), mod.shift);
      Value<T> sub;
      switch (kind) {
        case SubpathKind::kMamba: sub = mamba(g, u, mask); break;
        case SubpathKind::kSelfAttn: sub = self_attn(g, u, mask); break;
        case SubpathKind::kGatedMlp: sub = mlp(g, u); break;
        case SubpathKind::kCrossAttn: sub = cross_attn(g, u, memory, memory_mask); break;
        case SubpathKind::kMoe: sub = moe(g, u, gate_noise_sigma, rng); break;
      }
      x = add(x, mul_rowvec(sub, mod.gate));
    }
    return x;
  }
};

}  // namespace pidimt
