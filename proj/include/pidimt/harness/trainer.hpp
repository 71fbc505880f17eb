#pragma once

// Denoising training loop. Each step draws a batch from a pregenerated
// scenario pool, perturbs the normalized trajectories to a random noise
// level, and minimizes the masked reconstruction error plus a weighted
// physical-consistency term from the symplectic rollout. All randomness for
// step k derives from (master_seed, k), so a resumed run replays the exact
// stream and reproduces the next loss bit for bit.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pidimt/diffusion/training.hpp"
#include "pidimt/harness/data.hpp"
#include "pidimt/harness/optimizer.hpp"
#include "pidimt/harness/planner.hpp"
#include "pidimt/harness/scenario.hpp"

namespace pidimt {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 4;
  double base_lr = 3e-4;
  std::size_t warmup = 100;
  double clip = 1.0;
  double weight_decay = 0.01;
  double ph_loss_weight = 1.0;
  std::size_t checkpoint_every = 500;  // 0 disables periodic saves
  std::string out;                     // checkpoint path; empty disables saving

  void validate() const {
    if (steps < 1) throw std::invalid_argument("train config: steps must be positive");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be positive");
    if (!(base_lr > 0.0)) throw std::invalid_argument("train config: base rate must be positive");
    if (!(clip >= 0.0) || !(weight_decay >= 0.0) || !(ph_loss_weight >= 0.0))
      throw std::invalid_argument("train config: clip, decay, and loss weights must be >= 0");
  }
};

struct StepStats {
  std::size_t step = 0;
  double loss = 0.0;       // combined objective
  double mse = 0.0;        // reconstruction term
  double ph = 0.0;         // physical-consistency term (pre-weight)
  double grad_norm = 0.0;  // post-clip global norm
  double lr = 0.0;
};

// Round-robin over every scenario kind; scenario i is seeded from (seed, i).
inline std::vector<Scenario> build_scenario_pool(std::size_t n, std::uint64_t seed,
                                                 const ScenarioParams& prm = {}) {
  if (n == 0) throw std::invalid_argument("scenario pool: need at least one scenario");
  const auto kinds = all_scenario_kinds();
  std::vector<Scenario> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(generate_scenario(kinds[i % kinds.size()], Rng::mix(seed, i), prm));
  return out;
}

inline std::vector<PlanItem> build_plan_items(const std::vector<Scenario>& pool,
                                              std::size_t horizon) {
  std::vector<PlanItem> items;
  items.reserve(pool.size());
  for (const auto& sc : pool) items.push_back(build_plan_item(sc, horizon));
  return items;
}

// Physical-consistency term for one item: roll the ego's current state
// forward under the estimated acceleration and penalize its normalized
// deviation from the ground-truth leading segment.
template <typename T>
Value<T> ph_rollout_loss(Graph<T>& g, const PlannerModel<T>& model, const PlanItem& item,
                         const Value<T>& y) {
  const PlannerConfig& cfg = model.cfg;
  const auto hist = track_accel_history(item.obs.norm.ego, item.obs.norm.frequency_hz);
  const auto a_wavg = weighted_avg_accel(hist, cfg.ph.window);
  Tensor<T> aw({1, 2});
  aw.at2(0, 0) = static_cast<T>(a_wavg[0]);
  aw.at2(0, 1) = static_cast<T>(a_wavg[1]);
  auto est = model.estimator(g, g.constant(aw), y);
  auto q_nc = scale(est, cfg.ph.mass);

  Tensor<T> q0({1, 2}), p0({1, 2});
  q0.at2(0, 0) = static_cast<T>(item.target.at2(0, 0));
  q0.at2(0, 1) = static_cast<T>(item.target.at2(0, 1));
  p0.at2(0, 0) = static_cast<T>(cfg.ph.mass * item.target.at2(0, 2));
  p0.at2(0, 1) = static_cast<T>(cfg.ph.mass * item.target.at2(0, 3));
  auto roll = symplectic_rollout(g, g.constant(q0), g.constant(p0), q_nc, cfg.ph.mass, cfg.ph.dt,
                                 cfg.ph.steps, {1, 1}, {1, 1}, cfg.ph.impulse,
                                 cfg.ph.semi_implicit);

  const double ips = 1.0 / cfg.norm.pos_scale;
  const double ivs = 1.0 / cfg.norm.vel_scale;
  Value<T> acc;
  for (std::size_t s = 1; s <= cfg.ph.anchor; ++s) {
    Tensor<T> gq({1, 2}), gv({1, 2});
    gq.at2(0, 0) = static_cast<T>(item.target.at2(s, 0) * ips);
    gq.at2(0, 1) = static_cast<T>(item.target.at2(s, 1) * ips);
    gv.at2(0, 0) = static_cast<T>(item.target.at2(s, 2) * ivs);
    gv.at2(0, 1) = static_cast<T>(item.target.at2(s, 3) * ivs);
    auto dq = sub(scale(roll.q[s - 1], ips), g.constant(gq));
    auto dp = sub(scale(roll.p[s - 1], ivs / cfg.ph.mass), g.constant(gv));
    auto term = add(sum_all(mul(dq, dq)), sum_all(mul(dp, dp)));
    acc = (s == 1) ? term : add(acc, term);
  }
  return scale(acc, 1.0 / (static_cast<double>(cfg.ph.anchor) * 4.0));
}

template <typename T>
StepStats train_step(PlannerModel<T>& model, ParamMap<T>& params, AdamW<T>& opt,
                     const std::vector<PlanItem>& items, const TrainConfig& tc,
                     std::uint64_t master_seed, std::size_t step) {
  const PlannerConfig& cfg = model.cfg;
  const NoiseSchedule sch = cfg.schedule();
  const double gate_sigma = cfg.dimt.gate_noise_sigma(step);
  Rng rng(Rng::mix(master_seed, step));
  std::vector<std::size_t> picks(tc.batch_size);
  for (auto& p : picks) p = static_cast<std::size_t>(rng.uniform_index(items.size()));

  Graph<T> g(true);
  Value<T> total;
  double mse_host = 0.0, ph_host = 0.0;
  const bool use_ph = tc.ph_loss_weight > 0.0 && cfg.ph_enabled && cfg.ph.anchor > 0;
  for (std::size_t b = 0; b < tc.batch_size; ++b) {
    const PlanItem& item = items[picks[b]];
    const std::size_t F = item.n_frames;
    Rng irng = rng.fork(b + 1);
    Rng gate_rng = irng.fork(3);

    auto mem = model.encoder.encode(g, item.obs.norm);
    const auto token_mask = expand_agent_mask(item.obs.agent_valid, F);
    const Tensor<T> x0 = normalize_traj<T>(item.target, cfg.norm);
    const double t = sample_time(irng, sch);
    Tensor<T> eps(x0.shape());
    for (std::size_t a = 0; a < item.obs.n_agents; ++a)
      for (std::size_t f = 1; f < F; ++f)
        for (std::size_t c = 0; c < 4; ++c)
          eps.at2(a * F + f, c) = static_cast<T>(irng.gaussian());
    Tensor<T> x_t = perturb(x0, eps, t, sch);
    // The current state enters the model clean, exactly as at sampling time.
    for (std::size_t a = 0; a < item.obs.n_agents; ++a)
      for (std::size_t c = 0; c < 4; ++c) x_t.at2(a * F, c) = x0.at2(a * F, c);

    auto pred = model.denoiser(g, g.constant(x_t), t, token_mask, mem.y, mem.tokens, mem.mask,
                               item.obs.n_agents, F, gate_sigma, &gate_rng);
    const Tensor<T>& target = (cfg.mode == PredictionMode::kCleanSignal) ? x0 : eps;
    auto mse = masked_mse(g, pred, g.constant(target), future_weight<T>(item.obs.agent_valid, F));
    mse_host += static_cast<double>(mse.val()[0]);

    Value<T> item_loss = mse;
    if (use_ph) {
      auto ph = ph_rollout_loss(g, model, item, mem.y);
      ph_host += static_cast<double>(ph.val()[0]);
      item_loss = add(item_loss, scale(ph, tc.ph_loss_weight));
    }
    total = (b == 0) ? item_loss : add(total, item_loss);
  }
  total = scale(total, 1.0 / static_cast<double>(tc.batch_size));

  StepStats st;
  st.step = step;
  st.loss = static_cast<double>(total.val()[0]);
  st.mse = mse_host / static_cast<double>(tc.batch_size);
  st.ph = ph_host / static_cast<double>(tc.batch_size);
  st.lr = lr_at(step, tc.steps, tc.warmup, cfg.dimt.n_blocks, tc.base_lr);
  g.backward(total);
  st.grad_norm = opt.step(params, g, st.lr);
  return st;
}

// Runs steps [start_step, cfg.steps). Checkpoints carry the parameters, the
// completed-step count, and the master seed; optimizer moments restart on
// resume, so the first resumed loss matches the uninterrupted run exactly
// while later iterates may differ in the last bits.
template <typename T>
std::vector<StepStats> train(PlannerModel<T>& model, const std::vector<PlanItem>& items,
                             const TrainConfig& tc, std::uint64_t master_seed,
                             std::size_t start_step = 0,
                             const std::function<void(const StepStats&)>& on_step = nullptr) {
  tc.validate();
  if (items.empty()) throw std::invalid_argument("train: empty item pool");
  if (start_step > tc.steps) throw std::invalid_argument("train: start step past the end");
  ParamMap<T> params;
  model.collect(params);
  AdamW<T> opt;
  opt.weight_decay = tc.weight_decay;
  opt.clip = tc.clip;
  opt.build(params);
  std::vector<StepStats> log;
  log.reserve(tc.steps - start_step);
  for (std::size_t step = start_step; step < tc.steps; ++step) {
    StepStats st = train_step(model, params, opt, items, tc, master_seed, step);
    log.push_back(st);
    if (on_step) on_step(st);
    if (!tc.out.empty() && tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 &&
        step + 1 < tc.steps)
      save_planner(tc.out, model, step + 1, master_seed);
  }
  if (!tc.out.empty()) save_planner(tc.out, model, tc.steps, master_seed);
  return log;
}

}  // namespace pidimt
