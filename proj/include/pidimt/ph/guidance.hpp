#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pidimt/core/nn.hpp"
#include "pidimt/core/ops.hpp"
#include "pidimt/scene/types.hpp"

namespace pidimt {

// How the non-conservative force enters each momentum update: dt_scaled
// integrates it over one step (an impulse), literal adds the raw value.
enum class ImpulseMode { kDtScaled, kLiteral };

inline ImpulseMode impulse_mode_from_string(const std::string& s) {
  if (s == "dt_scaled") return ImpulseMode::kDtScaled;
  if (s == "literal") return ImpulseMode::kLiteral;
  throw std::invalid_argument("unknown impulse mode: " + s);
}

inline std::string impulse_mode_string(ImpulseMode m) {
  return m == ImpulseMode::kDtScaled ? "dt_scaled" : "literal";
}

// Planar point-mass state for the refinement rollout. Momenta equal
// velocities at unit mass. Masks freeze individual channels of q or p.
struct PHState {
  std::array<double, 2> q{0.0, 0.0};
  std::array<double, 2> p{0.0, 0.0};
  double m = 1.0;
  std::array<std::uint8_t, 2> q_mask{1, 1};
  std::array<std::uint8_t, 2> p_mask{1, 1};
  double dt = 0.1;
  std::size_t steps = 10;

  void validate() const {
    if (!(m > 0.0)) throw std::invalid_argument("ph state: mass must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("ph state: dt must be positive");
    if (steps < 1) throw std::invalid_argument("ph state: need at least one update");
  }
};

struct AccelEstimate {
  std::array<double, 2> a_wavg{0.0, 0.0};  // window-averaged history accel, m/s^2
  std::array<double, 2> a_est{0.0, 0.0};   // network output, m/s^2
  std::array<double, 2> q_nc{0.0, 0.0};    // mass * a_est, N
};

struct PhConfig {
  std::size_t steps = 10;   // symplectic updates per refinement
  std::size_t anchor = 10;  // ego future frames replaced by the rollout
  double dt = 0.1;          // rollout step, seconds
  double mass = 1.0;
  double a_max = 8.0;      // estimator output bound, m/s^2
  std::size_t hidden = 32;  // estimator hidden width
  std::size_t window = 5;   // accel history window (0.5 s at 10 Hz)
  ImpulseMode impulse = ImpulseMode::kDtScaled;
  bool semi_implicit = false;  // update p before q instead of after

  void validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("ph config: dt must be positive");
    if (!(mass > 0.0)) throw std::invalid_argument("ph config: mass must be positive");
    if (steps < 1) throw std::invalid_argument("ph config: need at least one update");
    if (anchor > steps)
      throw std::invalid_argument("ph config: anchor cannot exceed rollout steps");
    if (!(a_max > 0.0)) throw std::invalid_argument("ph config: a_max must be positive");
    if (hidden < 1) throw std::invalid_argument("ph config: estimator hidden width must be positive");
    if (window < 1) throw std::invalid_argument("ph config: accel window must be at least one frame");
  }
};

// Plain average of the most recent n planar accelerations.
inline std::array<double, 2> weighted_avg_accel(
    const std::vector<std::array<double, 2>>& history, std::size_t n) {
  if (n == 0) throw std::invalid_argument("accel window must be at least one sample");
  if (history.size() < n) throw std::invalid_argument("accel history shorter than the window");
  std::array<double, 2> avg{0.0, 0.0};
  for (std::size_t i = history.size() - n; i < history.size(); ++i) {
    avg[0] += history[i][0];
    avg[1] += history[i][1];
  }
  avg[0] /= double(n);
  avg[1] /= double(n);
  return avg;
}

// Two-layer perceptron over [a_wavg, scene embedding]; tanh on the output
// bounds each channel to +-a_max. Zero weights give exactly zero output.
template <typename T>
struct AccelEstimator {
  std::size_t dim = 0;  // scene embedding width
  double a_max = 8.0;
  Linear<T> fc1, fc2;  // (2 + dim) -> hidden -> 2

  void build(std::size_t embed_dim, std::size_t hidden, double bound) {
    if (embed_dim < 1) throw std::invalid_argument("accel estimator: embedding width must be positive");
    if (hidden < 1) throw std::invalid_argument("accel estimator: hidden width must be positive");
    if (!(bound > 0.0)) throw std::invalid_argument("accel estimator: bound must be positive");
    dim = embed_dim;
    a_max = bound;
    fc1.build(2 + embed_dim, hidden);
    fc2.build(hidden, 2);
  }

  void init(Rng& rng) {
    fc1.init(rng);
    fc2.init(rng);
  }

  void collect(ParamMap<T>& out, const std::string& prefix) {
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }

  // a_wavg (1, 2), y (1, dim) -> a_est (1, 2)
  Value<T> operator()(Graph<T>& g, const Value<T>& a_wavg, const Value<T>& y) const {
    if (a_wavg.val().rank() != 2 || a_wavg.val().rows() != 1 || a_wavg.val().cols() != 2)
      throw std::invalid_argument("accel estimator: a_wavg must be (1, 2)");
    if (y.val().rank() != 2 || y.val().rows() != 1 || y.val().cols() != dim)
      throw std::invalid_argument("accel estimator: embedding width mismatch");
    auto h = tanh_v(fc1(g, concat_cols(std::vector<Value<T>>{a_wavg, y})));
    return scale(tanh_v(fc2(g, h)), a_max);
  }
};

template <typename T>
struct PhRollout {
  std::vector<Value<T>> q, p;  // state after each update, length = steps
};

// Shared rollout used by both training (tracked graph) and inference. The
// kinetic Hamiltonian p^2/2m has no q dependence, so the momentum update
// reads only the impulse; q advances with the momentum chosen by the order
// flag. Masks multiply the updates channelwise, so a zeroed channel carries
// its initial value through every step.
template <typename T>
PhRollout<T> symplectic_rollout(Graph<T>& g, const Value<T>& q0, const Value<T>& p0,
                                const Value<T>& q_nc, double m, double dt, std::size_t steps,
                                const std::array<std::uint8_t, 2>& q_mask = {1, 1},
                                const std::array<std::uint8_t, 2>& p_mask = {1, 1},
                                ImpulseMode impulse = ImpulseMode::kDtScaled,
                                bool semi_implicit = false) {
  if (!(dt > 0.0)) throw std::invalid_argument("symplectic rollout: dt must be positive");
  if (!(m > 0.0)) throw std::invalid_argument("symplectic rollout: mass must be positive");
  if (steps < 1) throw std::invalid_argument("symplectic rollout: need at least one update");
  Tensor<T> mq(Shape{1, 2});
  Tensor<T> mp(Shape{1, 2});
  for (std::size_t c = 0; c < 2; ++c) {
    mq.at2(0, c) = q_mask[c] ? T(1) : T(0);
    mp.at2(0, c) = p_mask[c] ? T(1) : T(0);
  }
  auto mq_v = g.constant(mq);
  auto mp_v = g.constant(mp);
  auto step_impulse =
      mul(mp_v, scale(q_nc, impulse == ImpulseMode::kDtScaled ? dt : 1.0));
  PhRollout<T> out;
  out.q.reserve(steps);
  out.p.reserve(steps);
  Value<T> q = q0;
  Value<T> p = p0;
  for (std::size_t s = 0; s < steps; ++s) {
    if (semi_implicit) {
      p = add(p, step_impulse);
      q = add(q, mul(mq_v, scale(p, dt / m)));
    } else {
      q = add(q, mul(mq_v, scale(p, dt / m)));
      p = add(p, step_impulse);
    }
    out.q.push_back(q);
    out.p.push_back(p);
  }
  return out;
}

struct PhPoint {
  std::array<double, 2> q{0.0, 0.0};
  std::array<double, 2> p{0.0, 0.0};
};

// Plain-number refinement: the graph rollout evaluated without a tape, so
// inference follows the exact arithmetic the training loss differentiates.
inline std::vector<PhPoint> symplectic_refine(const PHState& st,
                                              const std::array<double, 2>& q_nc,
                                              ImpulseMode impulse = ImpulseMode::kDtScaled,
                                              bool semi_implicit = false) {
  st.validate();
  Graph<double> g(false);
  Tensor<double> q0(Shape{1, 2}), p0(Shape{1, 2}), f(Shape{1, 2});
  for (std::size_t c = 0; c < 2; ++c) {
    q0.at2(0, c) = st.q[c];
    p0.at2(0, c) = st.p[c];
    f.at2(0, c) = q_nc[c];
  }
  auto roll = symplectic_rollout(g, g.constant(q0), g.constant(p0), g.constant(f), st.m, st.dt,
                                 st.steps, st.q_mask, st.p_mask, impulse, semi_implicit);
  std::vector<PhPoint> out(st.steps);
  for (std::size_t s = 0; s < st.steps; ++s) {
    out[s].q = {roll.q[s].val().at2(0, 0), roll.q[s].val().at2(0, 1)};
    out[s].p = {roll.p[s].val().at2(0, 0), roll.p[s].val().at2(0, 1)};
  }
  return out;
}

// Replaces the ego agent's first t_anchor future frames with the rollout and
// nothing else. Rows are agent-major (agent * n_frames + frame) with frame 0
// the current state; channels are x, y, vx, vy in meters and m/s.
inline Tensor<double> inject_refined(const Tensor<double>& traj,
                                     const std::vector<PhPoint>& refined, std::size_t t_anchor,
                                     std::size_t n_frames, double mass) {
  if (traj.rank() != 2 || traj.cols() != 4)
    throw std::invalid_argument("inject: trajectory must be (rows, 4)");
  if (n_frames == 0 || traj.rows() % n_frames != 0)
    throw std::invalid_argument("inject: rows are not a multiple of the frame count");
  if (!(mass > 0.0)) throw std::invalid_argument("inject: mass must be positive");
  if (t_anchor + 1 > n_frames)
    throw std::invalid_argument("inject: anchor segment longer than the horizon");
  if (t_anchor > refined.size())
    throw std::invalid_argument("inject: anchor segment longer than the rollout");
  Tensor<double> out = traj;
  for (std::size_t k = 1; k <= t_anchor; ++k) {
    const PhPoint& pt = refined[k - 1];
    out.at2(k, 0) = pt.q[0];
    out.at2(k, 1) = pt.q[1];
    out.at2(k, 2) = pt.p[0] / mass;
    out.at2(k, 3) = pt.p[1] / mass;
  }
  return out;
}

// Finite-difference accelerations over the consecutive valid frames of a
// track's velocity channels, oldest first.
inline std::vector<std::array<double, 2>> track_accel_history(const AgentTrack& track,
                                                              double frequency_hz) {
  if (!(frequency_hz > 0.0)) throw std::invalid_argument("accel history: frequency must be positive");
  const double dt = 1.0 / frequency_hz;
  std::vector<std::array<double, 2>> accels;
  for (std::size_t i = 1; i < track.frames.size(); ++i) {
    if (!track.frame_valid[i] || !track.frame_valid[i - 1]) continue;
    accels.push_back({(track.frames[i][4] - track.frames[i - 1][4]) / dt,
                      (track.frames[i][5] - track.frames[i - 1][5]) / dt});
  }
  return accels;
}

struct GuideResult {
  Tensor<double> traj;
  AccelEstimate accel;
};

// Full refinement pipeline on a sampled trajectory in ego-frame meters:
// window-average the ego's recent accelerations, bound-estimate a plausible
// acceleration from them plus the scene embedding, roll the current state
// forward under that force, and write the leading ego segment back.
template <typename T>
GuideResult guide(const Tensor<double>& traj, const Scene& scene, const Tensor<T>& y,
                  const AccelEstimator<T>& estimator, const PhConfig& cfg,
                  std::size_t n_frames) {
  cfg.validate();
  if (traj.rank() != 2 || traj.cols() != 4)
    throw std::invalid_argument("guide: trajectory must be (rows, 4)");
  if (n_frames == 0 || traj.rows() % n_frames != 0)
    throw std::invalid_argument("guide: rows are not a multiple of the frame count");

  auto a_wavg = weighted_avg_accel(track_accel_history(scene.ego, scene.frequency_hz), cfg.window);

  Graph<T> g(false);
  Tensor<T> aw(Shape{1, 2});
  aw.at2(0, 0) = T(a_wavg[0]);
  aw.at2(0, 1) = T(a_wavg[1]);
  auto a_val = estimator(g, g.constant(aw), g.constant(y));

  AccelEstimate est;
  est.a_wavg = a_wavg;
  est.a_est = {double(a_val.val().at2(0, 0)), double(a_val.val().at2(0, 1))};
  est.q_nc = {cfg.mass * est.a_est[0], cfg.mass * est.a_est[1]};

  PHState st;
  st.q = {traj.at2(0, 0), traj.at2(0, 1)};
  st.p = {cfg.mass * traj.at2(0, 2), cfg.mass * traj.at2(0, 3)};
  st.m = cfg.mass;
  st.dt = cfg.dt;
  st.steps = cfg.steps;
  auto refined = symplectic_refine(st, est.q_nc, cfg.impulse, cfg.semi_implicit);
  return GuideResult{inject_refined(traj, refined, cfg.anchor, n_frames, cfg.mass), est};
}

}  // namespace pidimt
