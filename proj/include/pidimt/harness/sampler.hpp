#pragma once

// End-to-end plan sampling: encode the observed scene once, integrate the
// reverse diffusion with the deterministic multistep solver under a hard
// current-state anchor, map back to meters, and optionally run the
// symplectic refinement pass on the ego segment.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pidimt/core/rng.hpp"
#include "pidimt/diffusion/solver.hpp"
#include "pidimt/harness/data.hpp"
#include "pidimt/harness/planner.hpp"

namespace pidimt {

struct SampleParams {
  std::size_t n_steps = 10;
  double temperature = 0.5;  // initial-noise scale
  std::uint64_t seed = 0;
  bool refine = true;  // apply the symplectic refinement pass

  void validate() const {
    if (n_steps < 1) throw std::invalid_argument("sample params: need at least one step");
    if (!(temperature > 0.0))
      throw std::invalid_argument("sample params: temperature must be positive");
  }
};

struct PlanSample {
  Tensor<double> traj;  // (n_agents * n_frames, 4) ego-frame meters
  std::size_t n_agents = 0;
  std::size_t n_frames = 0;
  std::vector<std::uint8_t> agent_valid;
  std::size_t anchor_violations = 0;
  bool refined = false;
  AccelEstimate accel;  // zero unless refined
};

// Draws the initial iterate: anchored current states on frame 0, scaled
// Gaussian noise on every future cell (invalid agents included; their tokens
// are masked inside the model and their rows are zeroed afterwards).
template <typename T>
Tensor<T> sample_init(const SceneItem& obs, std::size_t n_frames, const NormConfig& nc,
                      double temperature, Rng& rng) {
  Tensor<T> x({obs.n_agents * n_frames, 4});
  for (std::size_t a = 0; a < obs.n_agents; ++a) {
    x.at2(a * n_frames, 0) = static_cast<T>(obs.current.at2(a, 0) / nc.pos_scale);
    x.at2(a * n_frames, 1) = static_cast<T>(obs.current.at2(a, 1) / nc.pos_scale);
    x.at2(a * n_frames, 2) = static_cast<T>(obs.current.at2(a, 2) / nc.vel_scale);
    x.at2(a * n_frames, 3) = static_cast<T>(obs.current.at2(a, 3) / nc.vel_scale);
    for (std::size_t f = 1; f < n_frames; ++f)
      for (std::size_t c = 0; c < 4; ++c)
        x.at2(a * n_frames + f, c) = static_cast<T>(temperature * rng.gaussian());
  }
  return x;
}

template <typename T>
PlanSample sample_plan(const PlannerModel<T>& model, const Scene& raw_scene,
                       const SampleParams& prm) {
  prm.validate();
  const PlannerConfig& cfg = model.cfg;
  const std::size_t F = cfg.n_frames();
  SceneItem obs = build_scene_item(raw_scene);
  if (obs.n_agents > cfg.dimt.max_agents)
    throw std::invalid_argument("sample: scene has more agents than the model supports");

  Graph<T> genc(false);
  const SceneMemoryVal<T> mem = model.encoder.encode(genc, obs.norm);
  const std::vector<std::uint8_t> token_mask = expand_agent_mask(obs.agent_valid, F);

  Rng rng(prm.seed);
  Tensor<T> x_init = sample_init<T>(obs, F, cfg.norm, prm.temperature, rng);
  AnchorSlice<T> anchor = current_state_anchor(x_init, obs.agent_valid, F);

  auto model_fn = [&](const Tensor<T>& x, double t) {
    Graph<T> g(false);
    auto out = model.denoiser(g, g.constant(x), t, token_mask, mem.y, mem.tokens, mem.mask,
                              obs.n_agents, F);
    return Tensor<T>(out.val());
  };
  SolverState<T> st =
      make_solver_state(std::move(x_init), std::move(anchor), cfg.schedule(), prm.n_steps, cfg.mode);
  run_solver(st, model_fn);

  PlanSample out;
  out.n_agents = obs.n_agents;
  out.n_frames = F;
  out.agent_valid = obs.agent_valid;
  out.anchor_violations = st.anchor_violations;
  out.traj = denormalize_traj(st.x, cfg.norm);
  // Observed current states are reimposed exactly in meters; rows of invalid
  // agents carry no meaning and are zeroed.
  for (std::size_t a = 0; a < obs.n_agents; ++a) {
    if (!obs.agent_valid[a]) {
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t c = 0; c < 4; ++c) out.traj.at2(a * F + f, c) = 0.0;
      continue;
    }
    for (std::size_t c = 0; c < 4; ++c) out.traj.at2(a * F, c) = obs.current.at2(a, c);
  }

  if (prm.refine && cfg.ph_enabled) {
    const Tensor<T> y(mem.y.val());
    GuideResult res = guide(out.traj, obs.norm, y, model.estimator, cfg.ph, F);
    out.traj = std::move(res.traj);
    out.accel = res.accel;
    out.refined = true;
  }
  return out;
}

}  // namespace pidimt
