#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "pidimt/core/tensor.hpp"
#include "pidimt/diffusion/schedule.hpp"

namespace pidimt {

enum class PredictionMode { kCleanSignal, kScaledNoise };

inline PredictionMode prediction_mode_from_string(const std::string& s) {
  if (s == "clean_signal") return PredictionMode::kCleanSignal;
  if (s == "scaled_noise") return PredictionMode::kScaledNoise;
  throw std::invalid_argument("prediction mode must be clean_signal or scaled_noise, got " + s);
}

inline std::string to_string(PredictionMode m) {
  return m == PredictionMode::kCleanSignal ? "clean_signal" : "scaled_noise";
}

// Cells of the iterate that are overwritten with observed values after every
// update (the hard current-state anchor). Applying it twice equals applying
// it once: each application is a plain store.
template <typename T>
struct AnchorSlice {
  std::vector<std::size_t> index;
  std::vector<T> value;

  void apply(Tensor<T>& x) const {
    for (std::size_t i = 0; i < index.size(); ++i) x[index[i]] = value[i];
  }

  std::size_t count_mismatches(const Tensor<T>& x) const {
    std::size_t bad = 0;
    for (std::size_t i = 0; i < index.size(); ++i)
      if (!(x[index[i]] == value[i])) ++bad;
    return bad;
  }
};

// Deterministic second-order multistep sampler state in log-SNR
// parameterization. The t-grid is uniform in lambda and strictly decreasing
// in t from t_max to t_min; history holds the most recent data predictions
// (at most two, second order).
template <typename T>
struct SolverState {
  std::vector<double> t_grid;
  std::vector<double> lambda_grid;
  Tensor<T> x;
  std::vector<Tensor<T>> history;
  AnchorSlice<T> anchor;
  NoiseSchedule schedule;
  PredictionMode mode = PredictionMode::kCleanSignal;
  std::size_t step = 0;
  std::size_t anchor_violations = 0;

  std::size_t n_steps() const { return t_grid.empty() ? 0 : t_grid.size() - 1; }
};

template <typename T>
SolverState<T> make_solver_state(Tensor<T> x_init, AnchorSlice<T> anchor,
                                 const NoiseSchedule& schedule, std::size_t n_steps,
                                 PredictionMode mode, double t_max = 1.0) {
  if (n_steps < 1) throw std::invalid_argument("make_solver_state: n_steps must be >= 1");
  if (!(t_max > schedule.t_min) || !(t_max <= 1.0))
    throw std::invalid_argument("make_solver_state: t_max must lie in (t_min, 1]");
  SolverState<T> st;
  st.schedule = schedule;
  st.mode = mode;
  double lam_hi = schedule.log_snr(t_max);
  double lam_lo = schedule.log_snr(schedule.t_min);
  st.t_grid.resize(n_steps + 1);
  st.lambda_grid.resize(n_steps + 1);
  for (std::size_t i = 0; i <= n_steps; ++i) {
    double lam = lam_hi + (lam_lo - lam_hi) * static_cast<double>(i) / static_cast<double>(n_steps);
    st.lambda_grid[i] = lam;
    st.t_grid[i] = (i == 0) ? t_max : (i == n_steps ? schedule.t_min : schedule.t_of_log_snr(lam));
  }
  for (std::size_t i = 1; i <= n_steps; ++i)
    if (!(st.t_grid[i] < st.t_grid[i - 1]))
      throw std::runtime_error("make_solver_state: t-grid not strictly decreasing");
  st.x = std::move(x_init);
  st.anchor = std::move(anchor);
  st.anchor.apply(st.x);
  return st;
}

// One multistep update from t_grid[k] to t_grid[k+1]. The model callback
// maps (x, t) to the model's output tensor; it is converted to a data
// prediction per the solver's mode. The first step has a single history
// entry and falls back to the first-order exponential-integrator update;
// later steps use the two-entry second-order combination. The anchor slice
// is re-imposed after the update.
template <typename T, typename ModelFn>
void solver_step(SolverState<T>& st, std::size_t k, const ModelFn& model) {
  if (k != st.step) throw std::invalid_argument("solver_step: step index out of order");
  if (k >= st.n_steps()) throw std::invalid_argument("solver_step: step index past grid end");
  const double t_cur = st.t_grid[k];
  const double t_next = st.t_grid[k + 1];
  const double a_cur = st.schedule.alpha(t_cur);
  const double s_cur = st.schedule.sigma(t_cur);
  const double a_next = st.schedule.alpha(t_next);
  const double s_next = st.schedule.sigma(t_next);
  const double h = st.lambda_grid[k + 1] - st.lambda_grid[k];

  Tensor<T> out = model(st.x, t_cur);
  check_same_shape(out, st.x, "solver_step: model output");
  Tensor<T> x0 = std::move(out);
  if (st.mode == PredictionMode::kScaledNoise) {
    // out is a noise prediction: x0 = (x - sigma * eps) / alpha.
    for (std::size_t i = 0; i < x0.numel(); ++i)
      x0[i] = static_cast<T>((static_cast<double>(st.x[i]) - s_cur * static_cast<double>(x0[i])) /
                             a_cur);
  }

  const double ratio = s_next / s_cur;
  const double coef = -a_next * (std::exp(-h) - 1.0);
  Tensor<T> next(st.x.shape());
  if (st.history.empty()) {
    for (std::size_t i = 0; i < next.numel(); ++i)
      next[i] = static_cast<T>(ratio * static_cast<double>(st.x[i]) +
                               coef * static_cast<double>(x0[i]));
  } else {
    const double h_prev = st.lambda_grid[k] - st.lambda_grid[k - 1];
    const double r = h_prev / h;
    const double c0 = 1.0 + 1.0 / (2.0 * r);
    const double c1 = -1.0 / (2.0 * r);
    const Tensor<T>& x0_prev = st.history.back();
    for (std::size_t i = 0; i < next.numel(); ++i) {
      double d = c0 * static_cast<double>(x0[i]) + c1 * static_cast<double>(x0_prev[i]);
      next[i] = static_cast<T>(ratio * static_cast<double>(st.x[i]) + coef * d);
    }
  }
  st.history.push_back(std::move(x0));
  if (st.history.size() > 2) st.history.erase(st.history.begin());
  st.x = std::move(next);
  st.anchor.apply(st.x);
  st.anchor_violations += st.anchor.count_mismatches(st.x);
  ++st.step;
}

template <typename T, typename ModelFn>
Tensor<T> run_solver(SolverState<T>& st, const ModelFn& model) {
  for (std::size_t k = 0; k < st.n_steps(); ++k) solver_step(st, k, model);
  return st.x;
}

}  // namespace pidimt
