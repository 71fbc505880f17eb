#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pidimt/core/nn.hpp"
#include "pidimt/core/ops.hpp"
#include "pidimt/model/config.hpp"
#include "pidimt/model/dimt_block.hpp"

namespace pidimt {

// Every frame of an invalid agent is masked.
inline std::vector<std::uint8_t> expand_agent_mask(const std::vector<std::uint8_t>& agent_valid,
                                                   std::size_t n_frames) {
  std::vector<std::uint8_t> out(agent_valid.size() * n_frames);
  for (std::size_t a = 0; a < agent_valid.size(); ++a)
    for (std::size_t f = 0; f < n_frames; ++f) out[a * n_frames + f] = agent_valid[a];
  return out;
}

// Conditioned trajectory denoiser. Tokens are (agent, frame) pairs flattened
// agent-major: row a*F + f of the (A*F, channels) input. The block stack is
// the identity at initialization (zero modulation gates) and the output
// projection starts at zero, so a fresh model predicts all zeros.
template <typename T>
struct Denoiser {
  DimtConfig cfg;
  Linear<T> in_proj;      // channels -> d
  Tensor<T> frame_embed;  // (max_frames, d)
  Tensor<T> agent_embed;  // (max_agents, d), one row per agent slot
  Mlp2<T> time_mlp;       // 2*time_freqs -> d -> d
  std::vector<DimtBlock<T>> blocks;
  Linear<T> out_proj;     // d -> channels

  void build(const DimtConfig& c) {
    c.validate();
    cfg = c;
    in_proj.build(cfg.channels, cfg.d);
    frame_embed = Tensor<T>(Shape{cfg.max_frames, cfg.d});
    agent_embed = Tensor<T>(Shape{cfg.max_agents, cfg.d});
    time_mlp.build(2 * cfg.time_freqs, cfg.d, cfg.d);
    blocks.assign(cfg.n_blocks, DimtBlock<T>{});
    for (auto& b : blocks) b.build(cfg);
    out_proj.build(cfg.d, cfg.channels);
  }

  void init(Rng& rng) {
    in_proj.init(rng);
    init_gaussian(frame_embed, rng, 0.02);
    init_gaussian(agent_embed, rng, 0.02);
    time_mlp.init(rng);
    for (auto& b : blocks) b.init(rng);
    out_proj.zero_init();
  }

  void collect(ParamMap<T>& m, const std::string& p) {
    in_proj.collect(m, p + ".in_proj");
    m.add(p + ".frame_embed", &frame_embed);
    m.add(p + ".agent_embed", &agent_embed);
    time_mlp.collect(m, p + ".time_mlp");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(m, p + ".block" + std::to_string(i));
    out_proj.collect(m, p + ".out_proj");
  }

  // Geometric frequency ladder over [1, 1000]; t in [0,1] maps to distinct
  // phases across the ladder.
  Tensor<T> time_features(double t) const {
    const std::size_t K = cfg.time_freqs;
    Tensor<T> f(Shape{1, 2 * K});
    for (std::size_t k = 0; k < K; ++k) {
      double w = (K > 1) ? std::pow(1000.0, static_cast<double>(k) / static_cast<double>(K - 1))
                         : 1.0;
      f[2 * k] = static_cast<T>(std::sin(w * t));
      f[2 * k + 1] = static_cast<T>(std::cos(w * t));
    }
    return f;
  }

  Value<T> condition(Graph<T>& g, const Value<T>& y, double t) const {
    if (!(t >= 0.0 && t <= 1.0))
      throw std::invalid_argument("denoiser: t must lie in [0,1], got " + std::to_string(t));
    return add(y, time_mlp(g, g.constant(time_features(t))));
  }

  Value<T> embed(Graph<T>& g, const Value<T>& x, std::size_t n_agents,
                 std::size_t n_frames) const {
    if (n_agents == 0 || n_agents > cfg.max_agents)
      throw std::invalid_argument("denoiser: agent count " + std::to_string(n_agents) +
                                  " outside [1, " + std::to_string(cfg.max_agents) + "]");
    if (n_frames == 0 || n_frames > cfg.max_frames)
      throw std::invalid_argument("denoiser: frame count " + std::to_string(n_frames) +
                                  " outside [1, " + std::to_string(cfg.max_frames) + "]");
    const std::size_t n = n_agents * n_frames;
    if (x.val().rows() != n || x.val().cols() != cfg.channels)
      throw std::invalid_argument("denoiser: expected (" + std::to_string(n) + ", " +
                                  std::to_string(cfg.channels) + ") trajectory tokens, got " +
                                  shape_str(x.val().shape()));
    std::vector<std::size_t> fidx(n), aidx(n);
    for (std::size_t a = 0; a < n_agents; ++a)
      for (std::size_t f = 0; f < n_frames; ++f) {
        fidx[a * n_frames + f] = f;
        aidx[a * n_frames + f] = a;
      }
    auto tok = in_proj(g, x);
    tok = add(tok, embedding_lookup(g.param(frame_embed), fidx));
    tok = add(tok, embedding_lookup(g.param(agent_embed), aidx));
    return tok;
  }

  Value<T> run_blocks(Graph<T>& g, Value<T> tok, const std::vector<std::uint8_t>& token_mask,
                      const Value<T>& y_t, const Value<T>& memory,
                      const std::vector<std::uint8_t>& memory_mask, double gate_noise_sigma = 0.0,
                      Rng* rng = nullptr) const {
    for (const auto& b : blocks)
      tok = b(g, tok, token_mask, y_t, memory, memory_mask, gate_noise_sigma, rng);
    return tok;
  }

  Value<T> operator()(Graph<T>& g, const Value<T>& x, double t,
                      const std::vector<std::uint8_t>& token_mask, const Value<T>& y,
                      const Value<T>& memory, const std::vector<std::uint8_t>& memory_mask,
                      std::size_t n_agents, std::size_t n_frames, double gate_noise_sigma = 0.0,
                      Rng* rng = nullptr) const {
    if (token_mask.size() != n_agents * n_frames)
      throw std::invalid_argument("denoiser: token mask length must be agents*frames");
    auto y_t = condition(g, y, t);
    auto tok = embed(g, x, n_agents, n_frames);
    tok = run_blocks(g, tok, token_mask, y_t, memory, memory_mask, gate_noise_sigma, rng);
    return out_proj(g, layer_norm_plain(tok, 1e-5));
  }
};

}  // namespace pidimt
