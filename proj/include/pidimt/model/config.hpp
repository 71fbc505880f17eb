#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pidimt {

enum class SubpathKind { kMamba, kSelfAttn, kGatedMlp, kCrossAttn, kMoe };

inline std::string to_string(SubpathKind k) {
  switch (k) {
    case SubpathKind::kMamba: return "mamba";
    case SubpathKind::kSelfAttn: return "self_attn";
    case SubpathKind::kGatedMlp: return "gated_mlp";
    case SubpathKind::kCrossAttn: return "cross_attn";
    case SubpathKind::kMoe: return "moe";
  }
  throw std::invalid_argument("unknown subpath kind");
}

inline SubpathKind subpath_from_string(const std::string& s) {
  if (s == "mamba") return SubpathKind::kMamba;
  if (s == "self_attn") return SubpathKind::kSelfAttn;
  if (s == "gated_mlp") return SubpathKind::kGatedMlp;
  if (s == "cross_attn") return SubpathKind::kCrossAttn;
  if (s == "moe") return SubpathKind::kMoe;
  throw std::invalid_argument("unknown subpath name: " + s);
}

inline std::vector<SubpathKind> parse_block_order(const std::string& csv) {
  std::vector<SubpathKind> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(subpath_from_string(item));
  if (out.empty()) throw std::invalid_argument("block order must not be empty");
  return out;
}

inline std::string block_order_string(const std::vector<SubpathKind>& order) {
  std::string s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i) s += ",";
    s += to_string(order[i]);
  }
  return s;
}

struct DimtConfig {
  std::size_t d = 192;
  std::size_t heads = 6;
  std::size_t n_blocks = 4;
  std::size_t n_state = 16;      // SSM state width per channel
  std::size_t expand = 2;        // SSM inner width = expand * d
  std::size_t e_shallow = 4;     // routed shallow experts
  std::size_t e_deep = 1;        // always-on deep experts
  std::size_t top_k = 2;         // routed experts per token
  std::size_t gated_mlp_hidden = 0;  // 0 -> 2*d
  std::size_t channels = 4;      // trajectory channels (x, y, vx, vy)
  std::size_t max_agents = 9;    // agent-slot embedding table size
  std::size_t max_frames = 64;   // frame embedding table size
  std::size_t time_freqs = 16;   // sinusoidal feature pairs for the time MLP
  double gate_noise_sigma0 = 1.0;
  std::size_t gate_noise_end_step = 1000;
  std::vector<SubpathKind> block_order = {SubpathKind::kMamba, SubpathKind::kSelfAttn,
                                          SubpathKind::kGatedMlp, SubpathKind::kCrossAttn,
                                          SubpathKind::kMoe};

  std::size_t d_inner() const { return expand * d; }
  std::size_t mlp_hidden() const { return gated_mlp_hidden == 0 ? 2 * d : gated_mlp_hidden; }

  void validate() const {
    if (d == 0 || heads == 0 || n_blocks == 0 || n_state == 0 || expand == 0 || channels == 0)
      throw std::invalid_argument("model config: sizes must be positive");
    if (d % heads != 0) throw std::invalid_argument("model config: d must be divisible by heads");
    if (top_k == 0 || top_k > e_shallow)
      throw std::invalid_argument("model config: top_k must be in [1, e_shallow], got k=" +
                                  std::to_string(top_k) + " with " + std::to_string(e_shallow) +
                                  " shallow experts");
    if (e_deep == 0) throw std::invalid_argument("model config: need at least one deep expert");
    if (max_agents == 0 || max_frames == 0 || time_freqs == 0)
      throw std::invalid_argument("model config: embedding table sizes must be positive");
    if (block_order.empty()) throw std::invalid_argument("model config: empty block order");
    if (!(gate_noise_sigma0 >= 0.0))
      throw std::invalid_argument("model config: gate noise scale must be >= 0");
  }

  // Linearly annealed router noise scale; zero from end_step onward.
  double gate_noise_sigma(std::size_t step) const {
    if (gate_noise_end_step == 0) return 0.0;
    double frac = static_cast<double>(step) / static_cast<double>(gate_noise_end_step);
    double s = gate_noise_sigma0 * (1.0 - frac);
    return s > 0.0 ? s : 0.0;
  }
};

}  // namespace pidimt
