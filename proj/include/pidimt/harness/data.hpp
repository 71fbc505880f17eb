#pragma once

// Observation and supervision tensors for the trajectory model. Trajectory
// tensors are (n_agents * n_frames, 4) with rows agent-major (agent * F +
// frame) and channels x, y, vx, vy in the ego frame at the current time.
// Frame 0 holds the observed current state; frames 1.. are the future.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pidimt/core/tensor.hpp"
#include "pidimt/diffusion/solver.hpp"
#include "pidimt/harness/planner.hpp"
#include "pidimt/harness/scenario.hpp"
#include "pidimt/scene/normalize.hpp"

namespace pidimt {

// Last valid (x, y, vx, vy) of a track; false when no frame is valid.
inline bool last_valid_state(const AgentTrack& track, std::array<double, 4>& out) {
  if (!track.valid) return false;
  for (std::size_t k = track.frames.size(); k-- > 0;) {
    if (!track.frame_valid[k]) continue;
    const auto& f = track.frames[k];
    out = {f[0], f[1], f[4], f[5]};
    return true;
  }
  return false;
}

// Observation-side inputs shared by training and sampling: the ego-frame
// scene, the per-agent validity, and the current states in ego-frame meters.
struct SceneItem {
  Scene norm;      // ego-frame scene, invalid agents zeroed
  Pose2d ego_pose; // world pose the scene was expressed against
  std::size_t n_agents = 0;
  std::vector<std::uint8_t> agent_valid;
  Tensor<double> current;  // (n_agents, 4)
};

inline SceneItem build_scene_item(const Scene& raw) {
  SceneItem item;
  item.ego_pose = current_pose(raw.ego);
  item.norm = normalize_scene(raw, item.ego_pose);
  item.n_agents = 1 + item.norm.agents.size();
  item.agent_valid.assign(item.n_agents, 0);
  item.current = Tensor<double>({item.n_agents, 4});
  std::array<double, 4> state{};
  if (!last_valid_state(item.norm.ego, state))
    throw std::invalid_argument("scene item: ego track has no valid frame");
  for (std::size_t c = 0; c < 4; ++c) item.current.at2(0, c) = state[c];
  item.agent_valid[0] = 1;
  for (std::size_t a = 0; a < item.norm.agents.size(); ++a) {
    if (!last_valid_state(item.norm.agents[a], state)) continue;
    for (std::size_t c = 0; c < 4; ++c) item.current.at2(a + 1, c) = state[c];
    item.agent_valid[a + 1] = 1;
  }
  return item;
}

// A training example: the observation plus the ground-truth trajectory
// tensor in ego-frame meters (frame 0 = observed current state).
struct PlanItem {
  SceneItem obs;
  std::size_t n_frames = 0;
  Tensor<double> target;  // (n_agents * n_frames, 4)
};

inline PlanItem build_plan_item(const Scenario& sc, std::size_t horizon) {
  if (horizon < 1) throw std::invalid_argument("plan item: horizon must be positive");
  PlanItem item;
  item.obs = build_scene_item(sc.scene);
  item.n_frames = horizon + 1;
  if (sc.future.size() != item.obs.n_agents)
    throw std::invalid_argument("plan item: future does not cover every agent");
  const std::size_t F = item.n_frames;
  item.target = Tensor<double>({item.obs.n_agents * F, 4});
  for (std::size_t a = 0; a < item.obs.n_agents; ++a) {
    if (!item.obs.agent_valid[a]) continue;
    if (sc.future[a].size() < horizon)
      throw std::invalid_argument("plan item: scenario future shorter than horizon");
    for (std::size_t c = 0; c < 4; ++c) item.target.at2(a * F, c) = item.obs.current.at2(a, c);
    for (std::size_t k = 0; k < horizon; ++k) {
      const auto& w = sc.future[a][k];
      double x, y, vx, vy;
      to_frame(item.obs.ego_pose, w[0], w[1], x, y);
      rotate_to_frame(item.obs.ego_pose, w[2], w[3], vx, vy);
      item.target.at2(a * F + 1 + k, 0) = x;
      item.target.at2(a * F + 1 + k, 1) = y;
      item.target.at2(a * F + 1 + k, 2) = vx;
      item.target.at2(a * F + 1 + k, 3) = vy;
    }
  }
  return item;
}

// Meters to model units: divide positions by pos_scale, velocities by
// vel_scale.
template <typename T>
Tensor<T> normalize_traj(const Tensor<double>& raw, const NormConfig& nc) {
  if (raw.rank() != 2 || raw.cols() != 4)
    throw std::invalid_argument("normalize_traj: expected a (rows, 4) tensor");
  Tensor<T> out({raw.rows(), 4});
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    out.at2(r, 0) = static_cast<T>(raw.at2(r, 0) / nc.pos_scale);
    out.at2(r, 1) = static_cast<T>(raw.at2(r, 1) / nc.pos_scale);
    out.at2(r, 2) = static_cast<T>(raw.at2(r, 2) / nc.vel_scale);
    out.at2(r, 3) = static_cast<T>(raw.at2(r, 3) / nc.vel_scale);
  }
  return out;
}

template <typename T>
Tensor<double> denormalize_traj(const Tensor<T>& x, const NormConfig& nc) {
  if (x.rank() != 2 || x.cols() != 4)
    throw std::invalid_argument("denormalize_traj: expected a (rows, 4) tensor");
  Tensor<double> out({x.rows(), 4});
  for (std::size_t r = 0; r < x.rows(); ++r) {
    out.at2(r, 0) = static_cast<double>(x.at2(r, 0)) * nc.pos_scale;
    out.at2(r, 1) = static_cast<double>(x.at2(r, 1)) * nc.pos_scale;
    out.at2(r, 2) = static_cast<double>(x.at2(r, 2)) * nc.vel_scale;
    out.at2(r, 3) = static_cast<double>(x.at2(r, 3)) * nc.vel_scale;
  }
  return out;
}

// Hard anchor over the frame-0 cells of every valid agent, with values taken
// from the given normalized trajectory tensor.
template <typename T>
AnchorSlice<T> current_state_anchor(const Tensor<T>& x_norm,
                                    const std::vector<std::uint8_t>& agent_valid,
                                    std::size_t n_frames) {
  if (x_norm.rank() != 2 || x_norm.cols() != 4)
    throw std::invalid_argument("current_state_anchor: expected a (rows, 4) tensor");
  if (n_frames == 0 || x_norm.rows() != agent_valid.size() * n_frames)
    throw std::invalid_argument("current_state_anchor: rows must equal agents * frames");
  AnchorSlice<T> anchor;
  for (std::size_t a = 0; a < agent_valid.size(); ++a) {
    if (!agent_valid[a]) continue;
    for (std::size_t c = 0; c < 4; ++c) {
      anchor.index.push_back((a * n_frames) * 4 + c);
      anchor.value.push_back(x_norm.at2(a * n_frames, c));
    }
  }
  return anchor;
}

// Supervision weights: 1 on the future-frame cells of valid agents, 0 on
// frame 0 (anchored, never predicted) and on invalid agents.
template <typename T>
Tensor<T> future_weight(const std::vector<std::uint8_t>& agent_valid, std::size_t n_frames) {
  if (n_frames < 2) throw std::invalid_argument("future_weight: need at least one future frame");
  Tensor<T> w({agent_valid.size() * n_frames, 4});
  for (std::size_t a = 0; a < agent_valid.size(); ++a) {
    if (!agent_valid[a]) continue;
    for (std::size_t f = 1; f < n_frames; ++f)
      for (std::size_t c = 0; c < 4; ++c) w.at2(a * n_frames + f, c) = T(1);
  }
  return w;
}

}  // namespace pidimt
