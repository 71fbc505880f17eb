#pragma once

// Flat key-value run configuration. Every key is registered with a default;
// unknown keys are rejected wherever they come from. Precedence, lowest to
// highest: registered default, config file, DIMT_SEED environment variable,
// command-line --key=value override.

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pidimt/harness/sampler.hpp"
#include "pidimt/harness/trainer.hpp"

namespace pidimt {

class RunConfig {
 public:
  RunConfig() {
    static const std::pair<const char*, const char*> kDefaults[] = {
        {"seed", "1"},
        {"horizon", "40"},
        {"model.d", "192"},
        {"model.heads", "6"},
        {"model.blocks", "4"},
        {"model.n_state", "16"},
        {"model.expand", "2"},
        {"model.e_shallow", "4"},
        {"model.e_deep", "1"},
        {"model.top_k", "2"},
        {"model.mlp_hidden", "0"},
        {"model.time_freqs", "16"},
        {"model.max_agents", "9"},
        {"model.max_frames", "64"},
        {"model.block_order", "mamba,self_attn,gated_mlp,cross_attn,moe"},
        {"model.gate_noise_sigma0", "1.0"},
        {"model.gate_noise_end_step", "1000"},
        {"scene.fusion_depth", "3"},
        {"scene.mixer_depth", "2"},
        {"scene.history_frames", "21"},
        {"scene.max_neighbors", "8"},
        {"scene.lane_points", "20"},
        {"ph.enabled", "true"},
        {"ph.steps", "10"},
        {"ph.anchor", "10"},
        {"ph.dt", "0.1"},
        {"ph.impulse", "dt_scaled"},
        {"ph.order", "explicit"},
        {"ph.a_max", "8.0"},
        {"ph.hidden", "32"},
        {"ph.window", "5"},
        {"ph.mass", "1.0"},
        {"diffusion.beta_min", "0.1"},
        {"diffusion.beta_max", "20.0"},
        {"diffusion.t_min", "0.001"},
        {"diffusion.mode", "clean_signal"},
        {"norm.pos_scale", "50.0"},
        {"norm.vel_scale", "15.0"},
        {"train.steps", "2000"},
        {"train.batch_size", "4"},
        {"train.lr", "0.0003"},
        {"train.warmup", "100"},
        {"train.clip", "1.0"},
        {"train.weight_decay", "0.01"},
        {"train.ph_loss_weight", "1.0"},
        {"train.checkpoint_every", "500"},
        {"train.pool", "64"},
        {"train.out", "planner.ckpt"},
        {"sample.steps", "10"},
        {"sample.temperature", "0.5"},
        {"eval.scenarios", "20"},
        {"eval.csv", ""},
    };
    for (const auto& [k, v] : kDefaults) values_[k] = v;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("config: unknown key " + key);
    it->second = value;
  }

  // Lines are "key = value" (or "key=value"); blank lines and lines starting
  // with '#' are skipped.
  void load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                                 " is not key=value");
      set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }

  void apply_env() {
    if (const char* s = std::getenv("DIMT_SEED")) set("seed", s);
  }

  // "--key=value" overrides; anything else is rejected.
  void apply_flags(const std::vector<std::string>& args) {
    for (const auto& a : args) {
      if (a.rfind("--", 0) != 0)
        throw std::invalid_argument("config: expected --key=value, got " + a);
      const auto eq = a.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config: override " + a + " needs =value");
      set(a.substr(2, eq - 2), a.substr(eq + 1));
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("config: unknown key " + key);
    return it->second;
  }

  double dbl(const std::string& key) const {
    const std::string& s = str(key);
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: " + key + " is not a number: " + s);
    }
    if (pos != s.size()) throw std::invalid_argument("config: " + key + " is not a number: " + s);
    return v;
  }

  std::uint64_t u64(const std::string& key) const {
    const std::string& s = str(key);
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      throw std::invalid_argument("config: " + key + " is not an integer: " + s);
    }
    if (pos != s.size())
      throw std::invalid_argument("config: " + key + " is not an integer: " + s);
    return static_cast<std::uint64_t>(v);
  }

  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "on" || s == "1") return true;
    if (s == "false" || s == "off" || s == "0") return false;
    throw std::invalid_argument("config: " + key + " must be true/false/on/off/1/0, got " + s);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

inline PlannerConfig planner_config_from(const RunConfig& rc) {
  PlannerConfig c;
  c.scene.d = rc.size("model.d");
  c.scene.heads = rc.size("model.heads");
  c.scene.fusion_depth = rc.size("scene.fusion_depth");
  c.scene.mixer_depth = rc.size("scene.mixer_depth");
  c.scene.history_frames = rc.size("scene.history_frames");
  c.scene.max_neighbors = rc.size("scene.max_neighbors");
  c.scene.lane_points = rc.size("scene.lane_points");
  c.dimt.d = rc.size("model.d");
  c.dimt.heads = rc.size("model.heads");
  c.dimt.n_blocks = rc.size("model.blocks");
  c.dimt.n_state = rc.size("model.n_state");
  c.dimt.expand = rc.size("model.expand");
  c.dimt.e_shallow = rc.size("model.e_shallow");
  c.dimt.e_deep = rc.size("model.e_deep");
  c.dimt.top_k = rc.size("model.top_k");
  c.dimt.gated_mlp_hidden = rc.size("model.mlp_hidden");
  c.dimt.time_freqs = rc.size("model.time_freqs");
  c.dimt.max_agents = rc.size("model.max_agents");
  c.dimt.max_frames = rc.size("model.max_frames");
  c.dimt.block_order = parse_block_order(rc.str("model.block_order"));
  c.dimt.gate_noise_sigma0 = rc.dbl("model.gate_noise_sigma0");
  c.dimt.gate_noise_end_step = rc.size("model.gate_noise_end_step");
  c.ph.steps = rc.size("ph.steps");
  c.ph.anchor = rc.size("ph.anchor");
  c.ph.dt = rc.dbl("ph.dt");
  c.ph.mass = rc.dbl("ph.mass");
  c.ph.a_max = rc.dbl("ph.a_max");
  c.ph.hidden = rc.size("ph.hidden");
  c.ph.window = rc.size("ph.window");
  c.ph.impulse = impulse_mode_from_string(rc.str("ph.impulse"));
  const std::string order = rc.str("ph.order");
  if (order == "semi_implicit")
    c.ph.semi_implicit = true;
  else if (order == "explicit")
    c.ph.semi_implicit = false;
  else
    throw std::invalid_argument("config: ph.order must be explicit or semi_implicit, got " +
                                order);
  c.norm.pos_scale = rc.dbl("norm.pos_scale");
  c.norm.vel_scale = rc.dbl("norm.vel_scale");
  c.beta_min = rc.dbl("diffusion.beta_min");
  c.beta_max = rc.dbl("diffusion.beta_max");
  c.t_min = rc.dbl("diffusion.t_min");
  c.mode = prediction_mode_from_string(rc.str("diffusion.mode"));
  c.horizon = rc.size("horizon");
  c.ph_enabled = rc.flag("ph.enabled");
  c.validate();
  return c;
}

inline TrainConfig train_config_from(const RunConfig& rc) {
  TrainConfig t;
  t.steps = rc.size("train.steps");
  t.batch_size = rc.size("train.batch_size");
  t.base_lr = rc.dbl("train.lr");
  t.warmup = rc.size("train.warmup");
  t.clip = rc.dbl("train.clip");
  t.weight_decay = rc.dbl("train.weight_decay");
  t.ph_loss_weight = rc.dbl("train.ph_loss_weight");
  t.checkpoint_every = rc.size("train.checkpoint_every");
  t.out = rc.str("train.out");
  t.validate();
  return t;
}

inline SampleParams sample_params_from(const RunConfig& rc) {
  SampleParams p;
  p.n_steps = rc.size("sample.steps");
  p.temperature = rc.dbl("sample.temperature");
  p.seed = rc.u64("seed");
  p.refine = rc.flag("ph.enabled");
  p.validate();
  return p;
}

}  // namespace pidimt
