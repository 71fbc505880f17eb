#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pidimt/core/nn.hpp"
#include "pidimt/core/ops.hpp"
#include "pidimt/scene/types.hpp"

namespace pidimt {

struct SceneConfig {
  std::size_t d = 192;              // shared embedding width
  std::size_t heads = 6;            // fusion attention heads
  std::size_t fusion_depth = 3;     // self-attention encoder blocks
  std::size_t mixer_depth = 2;      // mixer blocks per modality
  std::size_t history_frames = 21;  // V: agent history length incl. current
  std::size_t max_neighbors = 8;    // K: neighbor agent slots
  std::size_t lane_points = 20;     // L: points per lane token

  void validate() const {
    if (d == 0 || heads == 0 || fusion_depth == 0 || mixer_depth == 0)
      throw std::invalid_argument("scene config: sizes must be positive");
    if (d % heads != 0) throw std::invalid_argument("scene config: d must be divisible by heads");
    if (history_frames == 0 || lane_points < 2)
      throw std::invalid_argument("scene config: history_frames >= 1, lane_points >= 2");
  }
};

// Feature scale applied to the raw speed-limit scalar before projection.
inline constexpr double kSpeedLimitScale = 1.0 / 30.0;

// Token-mixing then channel-mixing MLPs with pre-norm residuals, operating
// on a (seq, dim) block.
template <typename T>
struct MixerBlock {
  std::size_t seq = 0, dim = 0;
  NormAffine<T> norm1, norm2;
  Linear<T> token_fc1, token_fc2;
  Linear<T> chan_fc1, chan_fc2;

  void build(std::size_t seq_len, std::size_t d) {
    seq = seq_len;
    dim = d;
    norm1.build(d);
    norm2.build(d);
    token_fc1.build(seq, 2 * seq);
    token_fc2.build(2 * seq, seq);
    chan_fc1.build(d, 2 * d);
    chan_fc2.build(2 * d, d);
  }
  void init(Rng& rng) {
    token_fc1.init(rng);
    token_fc2.init(rng);
    chan_fc1.init(rng);
    chan_fc2.init(rng);
  }
  void collect(ParamMap<T>& m, const std::string& p) {
    norm1.collect(m, p + ".norm1");
    norm2.collect(m, p + ".norm2");
    token_fc1.collect(m, p + ".token_fc1");
    token_fc2.collect(m, p + ".token_fc2");
    chan_fc1.collect(m, p + ".chan_fc1");
    chan_fc2.collect(m, p + ".chan_fc2");
  }
  Value<T> operator()(Graph<T>& g, Value<T> x) const {
    auto u = transpose2d(norm1(g, x));
    auto mixed = token_fc2(g, gelu_tanh(token_fc1(g, u)));
    x = add(x, transpose2d(mixed));
    auto v = norm2(g, x);
    return add(x, chan_fc2(g, gelu_tanh(chan_fc1(g, v))));
  }
};

// Projects one modality's fixed-length feature sequence to width d, runs the
// mixer stack, and mean-pools over the valid sequence positions.
template <typename T>
struct ModalityEncoder {
  std::size_t seq = 0, in_dim = 0, dim = 0;
  Linear<T> in_proj;
  std::vector<MixerBlock<T>> blocks;

  void build(std::size_t seq_len, std::size_t input_dim, std::size_t d, std::size_t depth) {
    seq = seq_len;
    in_dim = input_dim;
    dim = d;
    in_proj.build(input_dim, d);
    blocks.resize(depth);
    for (auto& b : blocks) b.build(seq_len, d);
  }
  void init(Rng& rng) {
    in_proj.init(rng);
    for (auto& b : blocks) b.init(rng);
  }
  void collect(ParamMap<T>& m, const std::string& p) {
    in_proj.collect(m, p + ".in_proj");
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(m, p + ".mixer" + std::to_string(i));
  }

  // features: (seq, in_dim) with masked rows zero-filled. Returns (1, dim).
  Value<T> operator()(Graph<T>& g, Value<T> features, const std::vector<std::uint8_t>& row_valid) const {
    if (features.val().rows() != seq || features.val().cols() != in_dim)
      throw std::invalid_argument("modality encoder: features must be (" + std::to_string(seq) +
                                  "," + std::to_string(in_dim) + "), got " +
                                  shape_str(features.val().shape()));
    if (row_valid.size() != seq)
      throw std::invalid_argument("modality encoder: row_valid size mismatch");
    std::size_t n_valid = 0;
    for (std::uint8_t c : row_valid) n_valid += (c != 0);
    if (n_valid == 0) throw std::invalid_argument("modality encoder: all rows masked");
    auto x = in_proj(g, features);
    for (const auto& b : blocks) x = b(g, x);
    Tensor<T> pool = Tensor<T>::zeros({1, seq});
    for (std::size_t i = 0; i < seq; ++i)
      if (row_valid[i]) pool.at2(0, i) = static_cast<T>(1.0 / static_cast<double>(n_valid));
    return matmul(g.constant(pool), x);
  }
};

// Pre-norm multi-head self-attention over (N, d) tokens; masked keys are
// excluded from every softmax row.
template <typename T>
struct FusionBlock {
  std::size_t dim = 0, heads = 0;
  NormAffine<T> norm1, norm2;
  Linear<T> wq, wk, wv, wo;
  Linear<T> fc1, fc2;

  void build(std::size_t d, std::size_t h) {
    dim = d;
    heads = h;
    norm1.build(d);
    norm2.build(d);
    wq.build(d, d);
    wk.build(d, d);
    wv.build(d, d);
    wo.build(d, d);
    fc1.build(d, 4 * d);
    fc2.build(4 * d, d);
  }
  void init(Rng& rng) {
    wq.init(rng);
    wk.init(rng);
    wv.init(rng);
    wo.init(rng);
    fc1.init(rng);
    fc2.init(rng);
  }
  void collect(ParamMap<T>& m, const std::string& p) {
    norm1.collect(m, p + ".norm1");
    norm2.collect(m, p + ".norm2");
    wq.collect(m, p + ".wq");
    wk.collect(m, p + ".wk");
    wv.collect(m, p + ".wv");
    wo.collect(m, p + ".wo");
    fc1.collect(m, p + ".fc1");
    fc2.collect(m, p + ".fc2");
  }

  Value<T> attend(Graph<T>& g, Value<T> x, const std::vector<std::uint8_t>& mask) const {
    auto u = norm1(g, x);
    auto q = wq(g, u), k = wk(g, u), v = wv(g, u);
    std::size_t dh = dim / heads;
    double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Value<T>> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      auto qh = slice_cols(q, h * dh, dh);
      auto kh = slice_cols(k, h * dh, dh);
      auto vh = slice_cols(v, h * dh, dh);
      auto scores = scale(matmul_bt(qh, kh), inv_sqrt_dh);
      auto attn = masked_softmax_rows(scores, mask);
      head_out.push_back(matmul(attn, vh));
    }
    return wo(g, concat_cols(head_out));
  }

  Value<T> operator()(Graph<T>& g, Value<T> x, const std::vector<std::uint8_t>& mask) const {
    x = add(x, attend(g, x, mask));
    auto v = norm2(g, x);
    return add(x, fc2(g, gelu_tanh(fc1(g, v))));
  }
};

// Fused scene: per-token embeddings, validity mask, and the conditioning
// vector (route-aware, before any diffusion-time term is added).
template <typename T>
struct SceneMemoryVal {
  Value<T> tokens;  // (N, d)
  std::vector<std::uint8_t> mask;
  Value<T> y;  // (1, d)
  std::size_t n_agent_tokens = 0;
  std::size_t n_static_tokens = 0;
  std::size_t n_lane_tokens = 0;
};

template <typename T>
class SceneEncoder {
 public:
  SceneConfig cfg;
  ModalityEncoder<T> agent_enc, static_enc, lane_enc;
  Linear<T> agent_type_embed, static_type_embed, traffic_embed, speed_proj;
  Tensor<T> unknown_speed_embed;
  Linear<T> meta_proj;
  std::vector<FusionBlock<T>> fusion;
  Linear<T> y_proj;

  void build(const SceneConfig& c) {
    c.validate();
    cfg = c;
    agent_enc.build(cfg.history_frames, kAgentFeatureDim, cfg.d, cfg.mixer_depth);
    static_enc.build(1, kStaticFeatureDim, cfg.d, cfg.mixer_depth);
    lane_enc.build(cfg.lane_points, kLanePointDim, cfg.d, cfg.mixer_depth);
    agent_type_embed.build(kAgentTypeDim, cfg.d);
    static_type_embed.build(kStaticTypeDim, cfg.d);
    traffic_embed.build(kTrafficStateDim, cfg.d);
    speed_proj.build(1, cfg.d);
    unknown_speed_embed = Tensor<T>::zeros({1, cfg.d});
    meta_proj.build(kTokenMetaDim, cfg.d);
    fusion.resize(cfg.fusion_depth);
    for (auto& b : fusion) b.build(cfg.d, cfg.heads);
    y_proj.build(2 * cfg.d, cfg.d);
  }

  void init(Rng& rng) {
    agent_enc.init(rng);
    static_enc.init(rng);
    lane_enc.init(rng);
    agent_type_embed.init(rng);
    static_type_embed.init(rng);
    traffic_embed.init(rng);
    speed_proj.init(rng);
    init_gaussian(unknown_speed_embed, rng, 0.02);
    meta_proj.init(rng);
    for (auto& b : fusion) b.init(rng);
    y_proj.init(rng);
  }

  void collect(ParamMap<T>& m, const std::string& p) {
    agent_enc.collect(m, p + ".agent");
    static_enc.collect(m, p + ".static");
    lane_enc.collect(m, p + ".lane");
    agent_type_embed.collect(m, p + ".agent_type");
    static_type_embed.collect(m, p + ".static_type");
    traffic_embed.collect(m, p + ".traffic");
    speed_proj.collect(m, p + ".speed");
    m.add(p + ".unknown_speed", &unknown_speed_embed);
    meta_proj.collect(m, p + ".meta");
    for (std::size_t i = 0; i < fusion.size(); ++i)
      fusion[i].collect(m, p + ".fusion" + std::to_string(i));
    y_proj.collect(m, p + ".y_proj");
  }

  // Linear projection of the 7-dim token metadata; added to each embedding.
  Value<T> positional_semantic_embed(Graph<T>& g, const TokenMeta& meta) const {
    auto c = meta.concat();
    Tensor<T> row = Tensor<T>::zeros({1, kTokenMetaDim});
    for (std::size_t i = 0; i < kTokenMetaDim; ++i) row.at2(0, i) = static_cast<T>(c[i]);
    return meta_proj(g, g.constant(row));
  }

  // Agent track -> (1,d) embedding. The scene must already be normalized:
  // masked frames zero-filled. Returns validity with the embedding.
  std::pair<Value<T>, bool> encode_agent(Graph<T>& g, const AgentTrack& a) const {
    if (a.frames.size() != cfg.history_frames)
      throw std::invalid_argument("encode_agent: expected " + std::to_string(cfg.history_frames) +
                                  " frames, got " + std::to_string(a.frames.size()));
    std::vector<std::uint8_t> rv(a.frames.size(), 0);
    bool any = false;
    for (std::size_t i = 0; i < a.frames.size(); ++i) {
      rv[i] = a.frame_valid[i] ? 1 : 0;
      any = any || a.frame_valid[i];
    }
    if (!a.valid || !any) return {Value<T>{}, false};
    Tensor<T> feats = Tensor<T>::zeros({cfg.history_frames, kAgentFeatureDim});
    for (std::size_t i = 0; i < a.frames.size(); ++i) {
      if (!rv[i]) continue;
      for (std::size_t j = 0; j < kAgentFeatureDim; ++j)
        feats.at2(i, j) = static_cast<T>(a.frames[i][j]);
    }
    auto emb = agent_enc(g, g.constant(feats), rv);
    Tensor<T> type_row = Tensor<T>::zeros({1, kAgentTypeDim});
    for (std::size_t j = 0; j < kAgentTypeDim; ++j)
      type_row.at2(0, j) = static_cast<T>(a.type_onehot[j]);
    return {add(emb, agent_type_embed(g, g.constant(type_row))), true};
  }

  Value<T> encode_static(Graph<T>& g, const StaticObject& s) const {
    Tensor<T> feats = Tensor<T>::zeros({1, kStaticFeatureDim});
    for (std::size_t j = 0; j < kStaticFeatureDim; ++j)
      feats.at2(0, j) = static_cast<T>(s.feature[j]);
    auto emb = static_enc(g, g.constant(feats), {1});
    Tensor<T> type_row = Tensor<T>::zeros({1, kStaticTypeDim});
    for (std::size_t j = 0; j < kStaticTypeDim; ++j)
      type_row.at2(0, j) = static_cast<T>(s.type_code[j]);
    return add(emb, static_type_embed(g, g.constant(type_row)));
  }

  Value<T> encode_lane(Graph<T>& g, const LaneElement& l) const {
    // Lanes are truncated or zero-padded to the configured point count; the
    // padding is masked out of the pooled mean.
    std::size_t n = std::min(l.points.size(), cfg.lane_points);
    Tensor<T> feats = Tensor<T>::zeros({cfg.lane_points, kLanePointDim});
    std::vector<std::uint8_t> rv(cfg.lane_points, 0);
    for (std::size_t i = 0; i < n; ++i) {
      rv[i] = 1;
      for (std::size_t j = 0; j < kLanePointDim; ++j)
        feats.at2(i, j) = static_cast<T>(l.points[i][j]);
    }
    auto emb = lane_enc(g, g.constant(feats), rv);
    Tensor<T> traffic = Tensor<T>::zeros({1, kTrafficStateDim});
    for (std::size_t j = 0; j < kTrafficStateDim; ++j)
      traffic.at2(0, j) = static_cast<T>(l.traffic_state[j]);
    emb = add(emb, traffic_embed(g, g.constant(traffic)));
    if (l.speed_limit_known) {
      Tensor<T> sp = Tensor<T>::full({1, 1}, static_cast<T>(l.speed_limit * kSpeedLimitScale));
      emb = add(emb, speed_proj(g, g.constant(sp)));
    } else {
      emb = add(emb, g.param(unknown_speed_embed));
    }
    return emb;
  }

  static TokenMeta agent_meta(const AgentTrack& a) {
    TokenMeta m;
    m.modality_onehot = {1.0, 0.0, 0.0};
    for (std::size_t i = a.frames.size(); i-- > 0;) {
      if (a.frame_valid[i]) {
        m.x = a.frames[i][0];
        m.y = a.frames[i][1];
        m.cos_h = a.frames[i][2];
        m.sin_h = a.frames[i][3];
        break;
      }
    }
    return m;
  }
  static TokenMeta static_meta(const StaticObject& s) {
    return TokenMeta{s.feature[0], s.feature[1], s.feature[2], s.feature[3], {0.0, 1.0, 0.0}};
  }
  static TokenMeta lane_meta(const LaneElement& l) {
    const auto& p = l.points.front();
    return TokenMeta{p[0], p[1], p[6], p[7], {0.0, 0.0, 1.0}};
  }

  // Token order: ego, neighbors, statics, lanes. Invalid tokens hold zero
  // rows with their mask bit cleared; they are invisible to attention.
  SceneMemoryVal<T> encode(Graph<T>& g, const Scene& scene) const {
    std::vector<Value<T>> rows;
    std::vector<std::uint8_t> mask;
    auto push_token = [&](std::pair<Value<T>, bool> emb, const TokenMeta& meta) {
      if (emb.second) {
        rows.push_back(add(emb.first, positional_semantic_embed(g, meta)));
        mask.push_back(1);
      } else {
        rows.push_back(g.constant(Tensor<T>::zeros({1, cfg.d})));
        mask.push_back(0);
      }
    };
    push_token(encode_agent(g, scene.ego), agent_meta(scene.ego));
    for (const auto& a : scene.agents) push_token(encode_agent(g, a), agent_meta(a));
    std::size_t n_agents = rows.size();
    for (const auto& s : scene.statics)
      push_token({encode_static(g, s), true}, static_meta(s));
    std::size_t n_statics = rows.size() - n_agents;
    std::size_t lane_base = rows.size();
    for (const auto& l : scene.lanes) push_token({encode_lane(g, l), true}, lane_meta(l));

    bool any = false;
    for (std::uint8_t c : mask) any = any || (c != 0);
    if (rows.empty() || !any)
      throw std::invalid_argument("fuse_scene: scene has no unmasked tokens");

    auto tokens = concat_rows(rows);
    for (const auto& b : fusion) tokens = b(g, tokens, mask);

    // Masked mean over all valid tokens.
    std::size_t n_valid = 0;
    for (std::uint8_t c : mask) n_valid += (c != 0);
    Tensor<T> pool = Tensor<T>::zeros({1, rows.size()});
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) pool.at2(0, i) = static_cast<T>(1.0 / static_cast<double>(n_valid));
    auto pooled = matmul(g.constant(pool), tokens);

    // Route summary: mean of the fused tokens of the route's lanes; zero
    // when no route is given.
    Value<T> route_sum;
    if (!scene.route.empty()) {
      Tensor<T> rpool = Tensor<T>::zeros({1, rows.size()});
      for (std::size_t r : scene.route) {
        std::size_t idx = lane_base + r;
        if (idx >= rows.size())
          throw std::invalid_argument("fuse_scene: route lane index out of range");
        rpool.at2(0, idx) = static_cast<T>(1.0 / static_cast<double>(scene.route.size()));
      }
      route_sum = matmul(g.constant(rpool), tokens);
    } else {
      route_sum = g.constant(Tensor<T>::zeros({1, cfg.d}));
    }

    SceneMemoryVal<T> out;
    out.tokens = tokens;
    out.mask = std::move(mask);
    out.y = y_proj(g, concat_cols(std::vector<Value<T>>{pooled, route_sum}));
    out.n_agent_tokens = n_agents;
    out.n_static_tokens = n_statics;
    out.n_lane_tokens = scene.lanes.size();
    return out;
  }
};

}  // namespace pidimt
