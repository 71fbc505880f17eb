#pragma once

// Batch evaluation: sample a plan per scenario and score the ego trajectory
// against the ground-truth future in the ego frame.

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "pidimt/harness/metrics.hpp"
#include "pidimt/harness/sampler.hpp"
#include "pidimt/harness/scenario.hpp"

namespace pidimt {

struct ScenarioResult {
  ScenarioKind kind = ScenarioKind::kConstantVelocity;
  std::uint64_t seed = 0;
  double ade = 0.0;
  double fde = 0.0;
  double mean_accel = 0.0;  // |second difference| / dt^2, averaged
  double mean_jerk = 0.0;   // |third difference| / dt^3, averaged
  std::size_t anchor_violations = 0;
};

struct EvalReport {
  std::vector<ScenarioResult> rows;
  double ade = 0.0;
  double fde = 0.0;
  double mean_accel = 0.0;
  double mean_jerk = 0.0;
  std::size_t anchor_violations = 0;
};

template <typename T>
ScenarioResult evaluate_one(const PlannerModel<T>& model, const Scenario& sc,
                            const SampleParams& prm) {
  const std::size_t horizon = model.cfg.horizon;
  if (sc.future.empty() || sc.future[0].size() < horizon)
    throw std::invalid_argument("evaluate: scenario future shorter than the model horizon");
  const PlanSample s = sample_plan(model, sc.scene, prm);
  const Pose2d pose = current_pose(sc.scene.ego);

  std::vector<std::array<double, 2>> pred, truth, path;
  path.push_back({s.traj.at2(0, 0), s.traj.at2(0, 1)});
  for (std::size_t k = 1; k < s.n_frames; ++k) {
    pred.push_back({s.traj.at2(k, 0), s.traj.at2(k, 1)});
    path.push_back({s.traj.at2(k, 0), s.traj.at2(k, 1)});
  }
  for (std::size_t k = 0; k < horizon; ++k) {
    double x, y;
    to_frame(pose, sc.future[0][k][0], sc.future[0][k][1], x, y);
    truth.push_back({x, y});
  }

  ScenarioResult r;
  r.kind = sc.kind;
  r.seed = sc.seed;
  r.ade = ade(pred, truth);
  r.fde = fde(pred, truth);
  r.mean_accel = accel_metric(path, sc.dt());
  r.mean_jerk = jerk_metric(path, sc.dt());
  r.anchor_violations = s.anchor_violations;
  return r;
}

// Per-scenario sampling seeds derive from (master_seed, index); every other
// sampling knob comes from the shared params.
template <typename T>
EvalReport evaluate(const PlannerModel<T>& model, const std::vector<Scenario>& scenarios,
                    const SampleParams& base, std::uint64_t master_seed) {
  if (scenarios.empty()) throw std::invalid_argument("evaluate: no scenarios");
  EvalReport rep;
  rep.rows.reserve(scenarios.size());
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    SampleParams prm = base;
    prm.seed = Rng::mix(master_seed, i);
    ScenarioResult r = evaluate_one(model, scenarios[i], prm);
    rep.ade += r.ade;
    rep.fde += r.fde;
    rep.mean_accel += r.mean_accel;
    rep.mean_jerk += r.mean_jerk;
    rep.anchor_violations += r.anchor_violations;
    rep.rows.push_back(r);
  }
  const double n = static_cast<double>(rep.rows.size());
  rep.ade /= n;
  rep.fde /= n;
  rep.mean_accel /= n;
  rep.mean_jerk /= n;
  return rep;
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"kind", scenario_kind_string(r.kind)},
                    {"seed", r.seed},
                    {"ade", r.ade},
                    {"fde", r.fde},
                    {"mean_accel", r.mean_accel},
                    {"mean_jerk", r.mean_jerk},
                    {"anchor_violations", r.anchor_violations}});
  return nlohmann::json{{"rows", rows},
                        {"ade", rep.ade},
                        {"fde", rep.fde},
                        {"mean_accel", rep.mean_accel},
                        {"mean_jerk", rep.mean_jerk},
                        {"anchor_violations", rep.anchor_violations}};
}

inline std::string eval_report_csv(const EvalReport& rep) {
  std::ostringstream os;
  os << "kind,seed,ade,fde,mean_accel,mean_jerk,anchor_violations\n";
  os << std::setprecision(17);
  for (const auto& r : rep.rows)
    os << scenario_kind_string(r.kind) << ',' << r.seed << ',' << r.ade << ',' << r.fde << ','
       << r.mean_accel << ',' << r.mean_jerk << ',' << r.anchor_violations << '\n';
  return os.str();
}

inline std::string eval_report_table(const EvalReport& rep) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "scenarios: " << rep.rows.size() << '\n';
  os << "ade: " << rep.ade << " m\n";
  os << "fde: " << rep.fde << " m\n";
  os << "mean_accel: " << rep.mean_accel << " m/s^2\n";
  os << "mean_jerk: " << rep.mean_jerk << " m/s^3\n";
  os << "anchor_violations: " << rep.anchor_violations << '\n';
  return os.str();
}

}  // namespace pidimt
