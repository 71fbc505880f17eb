#pragma once

// Planner aggregate: scene encoder, trajectory denoiser, and refinement
// estimator behind one config, one parameter map, and one checkpoint file.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "pidimt/core/nn.hpp"
#include "pidimt/core/rng.hpp"
#include "pidimt/diffusion/schedule.hpp"
#include "pidimt/diffusion/solver.hpp"
#include "pidimt/model/checkpoint.hpp"
#include "pidimt/model/denoiser.hpp"
#include "pidimt/ph/guidance.hpp"
#include "pidimt/scene/encoder.hpp"

namespace pidimt {

// Units-to-model scaling for trajectory channels: positions divide by
// pos_scale, velocities by vel_scale.
struct NormConfig {
  double pos_scale = 50.0;
  double vel_scale = 15.0;

  void validate() const {
    if (!(pos_scale > 0.0) || !(vel_scale > 0.0))
      throw std::invalid_argument("norm config: scales must be positive");
  }
};

struct PlannerConfig {
  SceneConfig scene;
  DimtConfig dimt;
  PhConfig ph;
  NormConfig norm;
  double beta_min = 0.1;
  double beta_max = 20.0;
  double t_min = 1e-3;
  PredictionMode mode = PredictionMode::kCleanSignal;  // model output convention
  std::size_t horizon = 40;  // predicted future frames
  bool ph_enabled = true;    // run refinement after sampling

  // Trajectory frames per agent: the observed current state plus the future.
  std::size_t n_frames() const { return horizon + 1; }

  NoiseSchedule schedule() const { return NoiseSchedule(beta_min, beta_max, t_min); }

  void validate() const {
    scene.validate();
    dimt.validate();
    ph.validate();
    norm.validate();
    (void)schedule();
    if (scene.d != dimt.d)
      throw std::invalid_argument("planner config: encoder and denoiser widths differ");
    if (dimt.channels != 4)
      throw std::invalid_argument("planner config: trajectory channels must be 4");
    if (horizon < 1) throw std::invalid_argument("planner config: horizon must be positive");
    if (horizon + 1 > dimt.max_frames)
      throw std::invalid_argument("planner config: horizon + 1 exceeds the frame table");
    if (ph.anchor > horizon)
      throw std::invalid_argument("planner config: refinement anchor cannot exceed horizon");
  }
};

inline nlohmann::json scene_config_to_json(const SceneConfig& c) {
  return nlohmann::json{{"d", c.d},
                        {"heads", c.heads},
                        {"fusion_depth", c.fusion_depth},
                        {"mixer_depth", c.mixer_depth},
                        {"history_frames", c.history_frames},
                        {"max_neighbors", c.max_neighbors},
                        {"lane_points", c.lane_points}};
}

inline SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.fusion_depth = j.at("fusion_depth").get<std::size_t>();
  c.mixer_depth = j.at("mixer_depth").get<std::size_t>();
  c.history_frames = j.at("history_frames").get<std::size_t>();
  c.max_neighbors = j.at("max_neighbors").get<std::size_t>();
  c.lane_points = j.at("lane_points").get<std::size_t>();
  c.validate();
  return c;
}

inline nlohmann::json ph_config_to_json(const PhConfig& c) {
  return nlohmann::json{{"steps", c.steps},
                        {"anchor", c.anchor},
                        {"dt", c.dt},
                        {"mass", c.mass},
                        {"a_max", c.a_max},
                        {"hidden", c.hidden},
                        {"window", c.window},
                        {"impulse", impulse_mode_string(c.impulse)},
                        {"semi_implicit", c.semi_implicit}};
}

inline PhConfig ph_config_from_json(const nlohmann::json& j) {
  PhConfig c;
  c.steps = j.at("steps").get<std::size_t>();
  c.anchor = j.at("anchor").get<std::size_t>();
  c.dt = j.at("dt").get<double>();
  c.mass = j.at("mass").get<double>();
  c.a_max = j.at("a_max").get<double>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.impulse = impulse_mode_from_string(j.at("impulse").get<std::string>());
  c.semi_implicit = j.at("semi_implicit").get<bool>();
  c.validate();
  return c;
}

inline nlohmann::json norm_config_to_json(const NormConfig& c) {
  return nlohmann::json{{"pos_scale", c.pos_scale}, {"vel_scale", c.vel_scale}};
}

inline NormConfig norm_config_from_json(const nlohmann::json& j) {
  NormConfig c;
  c.pos_scale = j.at("pos_scale").get<double>();
  c.vel_scale = j.at("vel_scale").get<double>();
  c.validate();
  return c;
}

inline nlohmann::json planner_config_to_json(const PlannerConfig& c) {
  return nlohmann::json{{"scene", scene_config_to_json(c.scene)},
                        {"model", dimt_config_to_json(c.dimt)},
                        {"ph", ph_config_to_json(c.ph)},
                        {"norm", norm_config_to_json(c.norm)},
                        {"diffusion", nlohmann::json{{"beta_min", c.beta_min},
                                                     {"beta_max", c.beta_max},
                                                     {"t_min", c.t_min},
                                                     {"mode", to_string(c.mode)}}},
                        {"horizon", c.horizon},
                        {"ph_enabled", c.ph_enabled}};
}

inline PlannerConfig planner_config_from_json(const nlohmann::json& j) {
  PlannerConfig c;
  c.scene = scene_config_from_json(j.at("scene"));
  c.dimt = dimt_config_from_json(j.at("model"));
  c.ph = ph_config_from_json(j.at("ph"));
  c.norm = norm_config_from_json(j.at("norm"));
  const auto& d = j.at("diffusion");
  c.beta_min = d.at("beta_min").get<double>();
  c.beta_max = d.at("beta_max").get<double>();
  c.t_min = d.at("t_min").get<double>();
  c.mode = prediction_mode_from_string(d.at("mode").get<std::string>());
  c.horizon = j.at("horizon").get<std::size_t>();
  c.ph_enabled = j.at("ph_enabled").get<bool>();
  c.validate();
  return c;
}

template <typename T>
struct PlannerModel {
  PlannerConfig cfg;
  SceneEncoder<T> encoder;
  Denoiser<T> denoiser;
  AccelEstimator<T> estimator;

  void build(const PlannerConfig& c) {
    c.validate();
    cfg = c;
    encoder.build(c.scene);
    denoiser.build(c.dimt);
    estimator.build(c.scene.d, c.ph.hidden, c.ph.a_max);
  }

  void init(Rng& rng) {
    encoder.init(rng);
    denoiser.init(rng);
    estimator.init(rng);
  }

  void collect(ParamMap<T>& out) {
    encoder.collect(out, "encoder");
    denoiser.collect(out, "denoiser");
    estimator.collect(out, "accel");
  }
};

template <typename T>
void save_planner(const std::string& path, PlannerModel<T>& model, std::size_t step,
                  std::uint64_t seed) {
  ParamMap<T> params;
  model.collect(params);
  nlohmann::json hdr;
  hdr["config"] = planner_config_to_json(model.cfg);
  hdr["step"] = step;
  hdr["seed"] = seed;
  save_checkpoint(path, params, hdr);
}

// Header json without touching the parameter blobs, so a model can be built
// from the stored config before its weights are loaded.
inline nlohmann::json read_checkpoint_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8] = {};
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  const std::uint64_t hdr_len = detail::read_u64(is);
  std::string hdr(hdr_len, '\0');
  is.read(hdr.data(), static_cast<std::streamsize>(hdr_len));
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  return nlohmann::json::parse(hdr);
}

template <typename T>
nlohmann::json load_planner(const std::string& path, PlannerModel<T>& model) {
  const nlohmann::json hdr = read_checkpoint_header(path);
  if (!hdr.contains("config"))
    throw std::runtime_error("checkpoint: header has no planner config");
  model.build(planner_config_from_json(hdr.at("config")));
  ParamMap<T> params;
  model.collect(params);
  load_checkpoint(path, params);
  return hdr;
}

}  // namespace pidimt
