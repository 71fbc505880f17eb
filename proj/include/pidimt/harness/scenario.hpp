#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pidimt/core/rng.hpp"
#include "pidimt/scene/json_io.hpp"
#include "pidimt/scene/types.hpp"

namespace pidimt {

enum class ScenarioKind { kConstantVelocity, kConstantAccel, kLaneFollowTurn, kStop, kUTurn };

inline const std::array<ScenarioKind, 5>& all_scenario_kinds() {
  static const std::array<ScenarioKind, 5> kinds{
      ScenarioKind::kConstantVelocity, ScenarioKind::kConstantAccel,
      ScenarioKind::kLaneFollowTurn, ScenarioKind::kStop, ScenarioKind::kUTurn};
  return kinds;
}

inline ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "constant_velocity") return ScenarioKind::kConstantVelocity;
  if (s == "constant_accel") return ScenarioKind::kConstantAccel;
  if (s == "lane_follow_turn") return ScenarioKind::kLaneFollowTurn;
  if (s == "stop") return ScenarioKind::kStop;
  if (s == "u_turn") return ScenarioKind::kUTurn;
  throw std::invalid_argument("unknown scenario kind: " + s);
}

inline std::string scenario_kind_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::kConstantVelocity: return "constant_velocity";
    case ScenarioKind::kConstantAccel: return "constant_accel";
    case ScenarioKind::kLaneFollowTurn: return "lane_follow_turn";
    case ScenarioKind::kStop: return "stop";
    case ScenarioKind::kUTurn: return "u_turn";
  }
  throw std::invalid_argument("unknown scenario kind value");
}

struct ScenarioParams {
  std::size_t history = 21;  // frames up to and including the current one
  std::size_t horizon = 40;  // future frames
  double frequency_hz = 10.0;
  std::size_t neighbors = 2;
  bool identity_start = false;  // pin the ego's current pose to the world origin
  // NaN draws the value from the seed; a finite value pins the kind's primary
  // motion parameter (speed m/s, accel m/s^2, turn rate rad/s).
  double speed = std::numeric_limits<double>::quiet_NaN();
  double accel = std::numeric_limits<double>::quiet_NaN();
  double turn_rate = std::numeric_limits<double>::quiet_NaN();

  void validate() const {
    if (history < 2) throw std::invalid_argument("scenario: need at least two history frames");
    if (horizon < 1) throw std::invalid_argument("scenario: need at least one future frame");
    if (!(frequency_hz > 0.0)) throw std::invalid_argument("scenario: frequency must be positive");
  }
};

// One synthetic driving episode: observed world-frame scene plus the
// ground-truth future of every agent, ego first. Future frames store
// x, y, vx, vy; velocities everywhere are forward differences of the
// sampled positions, so the stored sequence is kinematically consistent.
struct Scenario {
  ScenarioKind kind = ScenarioKind::kConstantVelocity;
  std::uint64_t seed = 0;
  Scene scene;
  std::vector<std::vector<std::array<double, 4>>> future;

  double dt() const { return 1.0 / scene.frequency_hz; }
};

namespace detail {

inline void local_to_world(const Pose2d& pose, double x, double y, double& ox, double& oy) {
  ox = pose.cos_h * x - pose.sin_h * y + pose.x;
  oy = pose.sin_h * x + pose.cos_h * y + pose.y;
}

inline void rotate_to_world(const Pose2d& pose, double c, double s, double& oc, double& os) {
  oc = pose.cos_h * c - pose.sin_h * s;
  os = pose.sin_h * c + pose.cos_h * s;
}

using LocalPath = std::function<std::array<double, 2>(double)>;

struct AgentSpec {
  LocalPath path;
  double width = 2.0;
  double length = 4.5;
  std::size_t invalid_prefix = 0;  // leading history frames marked unobserved
};

// Samples the path one frame past the stored range so every stored frame,
// including the last, carries a forward-difference velocity.
inline std::pair<AgentTrack, std::vector<std::array<double, 4>>> build_track(
    const AgentSpec& spec, const Pose2d& pose, std::size_t history, std::size_t horizon,
    double dt) {
  const std::size_t n = history + horizon + 1;
  std::vector<std::array<double, 2>> pos(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = (double(k) - double(history - 1)) * dt;
    auto local = spec.path(t);
    local_to_world(pose, local[0], local[1], pos[k][0], pos[k][1]);
  }
  std::vector<std::array<double, 2>> vel(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    vel[k] = {(pos[k + 1][0] - pos[k][0]) / dt, (pos[k + 1][1] - pos[k][1]) / dt};
  }

  double hc, hs;
  rotate_to_world(pose, 1.0, 0.0, hc, hs);
  AgentTrack track;
  track.frames.resize(history);
  track.frame_valid.assign(history, true);
  std::vector<std::array<double, 4>> fut(horizon);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double speed = std::hypot(vel[k][0], vel[k][1]);
    if (speed > 1e-6) {
      hc = vel[k][0] / speed;
      hs = vel[k][1] / speed;
    }
    if (k < history) {
      track.frames[k] = {pos[k][0], pos[k][1], hc,         hs,
                         vel[k][0], vel[k][1], spec.width, spec.length};
      if (k < spec.invalid_prefix) track.frame_valid[k] = false;
    } else {
      fut[k - history] = {pos[k][0], pos[k][1], vel[k][0], vel[k][1]};
    }
  }
  return {std::move(track), std::move(fut)};
}

constexpr double kLaneHalfWidth = 1.75;

// Straight lane segment between two local points.
inline LaneElement line_lane(const Pose2d& pose, std::array<double, 2> a,
                             std::array<double, 2> b, std::size_t n_pts) {
  const double len = std::hypot(b[0] - a[0], b[1] - a[1]);
  const double tx = (b[0] - a[0]) / len, ty = (b[1] - a[1]) / len;
  const double nx = -ty, ny = tx;  // left normal
  LaneElement lane;
  lane.points.resize(n_pts);
  for (std::size_t i = 0; i < n_pts; ++i) {
    const double u = double(i) / double(n_pts - 1);
    double cx, cy, wc, ws, ldx, ldy;
    local_to_world(pose, a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1]), cx, cy);
    rotate_to_world(pose, tx, ty, wc, ws);
    rotate_to_world(pose, nx * kLaneHalfWidth, ny * kLaneHalfWidth, ldx, ldy);
    lane.points[i] = {cx, cy, ldx, ldy, -ldx, -ldy, wc, ws};
  }
  return lane;
}

// Arc lane on the circle through the local origin tangent to +x, center at
// (0, sgn * r); theta is arc angle from the origin point.
inline LaneElement arc_lane(const Pose2d& pose, double r, double sgn, double th0, double th1,
                            std::size_t n_pts) {
  LaneElement lane;
  lane.points.resize(n_pts);
  for (std::size_t i = 0; i < n_pts; ++i) {
    const double th = th0 + (th1 - th0) * double(i) / double(n_pts - 1);
    const double px = r * std::sin(th);
    const double py = sgn * r * (1.0 - std::cos(th));
    const double tx = std::cos(th), ty = sgn * std::sin(th);
    const double nx = -ty, ny = tx;
    double cx, cy, wc, ws, ldx, ldy;
    local_to_world(pose, px, py, cx, cy);
    rotate_to_world(pose, tx, ty, wc, ws);
    rotate_to_world(pose, nx * kLaneHalfWidth, ny * kLaneHalfWidth, ldx, ldy);
    lane.points[i] = {cx, cy, ldx, ldy, -ldx, -ldy, wc, ws};
  }
  return lane;
}

}  // namespace detail

// Deterministic synthetic episode built from closed-form kinematics: the
// ego follows the kind's motion profile, neighbors drive adjacent lanes,
// lane geometry follows the ego's path, statics sit off the road.
inline Scenario generate_scenario(ScenarioKind kind, std::uint64_t seed,
                                  const ScenarioParams& prm = {}) {
  prm.validate();
  Rng root(seed);
  Rng ego_rng = root.fork(1);
  Rng nb_rng = root.fork(2);
  Rng misc = root.fork(3);

  const double dt = 1.0 / prm.frequency_hz;
  const double t_horizon = double(prm.horizon) * dt;

  Scenario sc;
  sc.kind = kind;
  sc.seed = seed;
  sc.scene.frequency_hz = prm.frequency_hz;

  Pose2d pose;
  if (!prm.identity_start) {
    pose.x = misc.uniform(-200.0, 200.0);
    pose.y = misc.uniform(-200.0, 200.0);
    const double th = misc.uniform(-3.141592653589793, 3.141592653589793);
    pose.cos_h = std::cos(th);
    pose.sin_h = std::sin(th);
  }

  const std::size_t pts = 20;
  detail::LocalPath ego_path;
  bool arc_geometry = false;
  double arc_r = 0.0, arc_sgn = 1.0;

  switch (kind) {
    case ScenarioKind::kConstantVelocity: {
      const double v = std::isfinite(prm.speed) ? prm.speed : ego_rng.uniform(3.0, 8.0);
      ego_path = [v](double t) { return std::array<double, 2>{v * t, 0.0}; };
      break;
    }
    case ScenarioKind::kConstantAccel: {
      // Constant speed through the history, accelerating from the current frame.
      const double v0 = std::isfinite(prm.speed) ? prm.speed : ego_rng.uniform(1.0, 4.0);
      const double a = std::isfinite(prm.accel) ? prm.accel : ego_rng.uniform(0.5, 1.5);
      ego_path = [v0, a](double t) {
        return std::array<double, 2>{t <= 0.0 ? v0 * t : v0 * t + 0.5 * a * t * t, 0.0};
      };
      break;
    }
    case ScenarioKind::kLaneFollowTurn: {
      const double v = std::isfinite(prm.speed) ? prm.speed : ego_rng.uniform(3.0, 7.0);
      double omega;
      if (std::isfinite(prm.turn_rate)) {
        omega = prm.turn_rate;
      } else {
        omega = ego_rng.uniform(0.08, 0.2);
        if (ego_rng.uniform() < 0.5) omega = -omega;
      }
      if (omega == 0.0) throw std::invalid_argument("scenario: turn rate must be nonzero");
      const double r = std::abs(v / omega);
      const double sgn = omega > 0.0 ? 1.0 : -1.0;
      const double w = std::abs(omega);
      ego_path = [r, sgn, w](double t) {
        return std::array<double, 2>{r * std::sin(w * t), sgn * r * (1.0 - std::cos(w * t))};
      };
      arc_geometry = true;
      arc_r = r;
      arc_sgn = sgn;
      break;
    }
    case ScenarioKind::kStop: {
      const double v0 = std::isfinite(prm.speed) ? prm.speed : ego_rng.uniform(4.0, 8.0);
      double d = std::isfinite(prm.accel) ? prm.accel : ego_rng.uniform(1.5, 3.0);
      // Braking starts at the current frame and finishes inside the horizon.
      d = std::max(d, v0 / (0.75 * t_horizon));
      const double t_stop = v0 / d;
      ego_path = [v0, d, t_stop](double t) {
        double x;
        if (t <= 0.0) x = v0 * t;
        else if (t < t_stop) x = v0 * t - 0.5 * d * t * t;
        else x = 0.5 * v0 * t_stop;
        return std::array<double, 2>{x, 0.0};
      };
      break;
    }
    case ScenarioKind::kUTurn: {
      const double v = std::isfinite(prm.speed) ? prm.speed : ego_rng.uniform(2.0, 4.0);
      double r, sgn;
      if (std::isfinite(prm.turn_rate)) {
        if (prm.turn_rate == 0.0) throw std::invalid_argument("scenario: turn rate must be nonzero");
        r = std::abs(v / prm.turn_rate);
        sgn = prm.turn_rate > 0.0 ? 1.0 : -1.0;
      } else {
        r = ego_rng.uniform(4.0, 7.0);
        sgn = ego_rng.uniform() < 0.5 ? 1.0 : -1.0;
      }
      const double w = v / r;
      const double t_u = 3.141592653589793 / w;
      ego_path = [v, r, sgn, w, t_u](double t) {
        if (t <= 0.0) return std::array<double, 2>{v * t, 0.0};
        if (t <= t_u) {
          return std::array<double, 2>{r * std::sin(w * t), sgn * r * (1.0 - std::cos(w * t))};
        }
        return std::array<double, 2>{-v * (t - t_u), sgn * 2.0 * r};
      };
      arc_geometry = true;
      arc_r = r;
      arc_sgn = sgn;
      break;
    }
  }

  detail::AgentSpec ego_spec;
  ego_spec.path = ego_path;
  auto [ego_track, ego_future] = detail::build_track(ego_spec, pose, prm.history, prm.horizon, dt);
  sc.scene.ego = std::move(ego_track);
  sc.future.push_back(std::move(ego_future));

  for (std::size_t i = 0; i < prm.neighbors; ++i) {
    Rng arng = nb_rng.fork(i);
    const double vn = arng.uniform(2.0, 6.0);
    const double x0 = arng.uniform(-15.0, 15.0);
    detail::AgentSpec spec;
    spec.width = arng.uniform(1.8, 2.2);
    spec.length = arng.uniform(4.2, 4.8);
    if (arc_geometry) {
      // Concentric lane outside the ego's arc, same direction of travel.
      const double rn = arc_r + 3.5 * double(i / 2 + 1);
      const double sgn = arc_sgn;
      spec.path = [rn, sgn, vn, x0, r = arc_r](double t) {
        const double th = (x0 + vn * t) / rn;
        return std::array<double, 2>{rn * std::sin(th), sgn * (r - rn * std::cos(th))};
      };
    } else {
      const double y_off = (i % 2 == 0 ? 3.5 : -3.5) * double(i / 2 + 1);
      spec.path = [vn, x0, y_off](double t) {
        return std::array<double, 2>{x0 + vn * t, y_off};
      };
    }
    // The last neighbor enters the scene part-way through the history.
    if (i + 1 == prm.neighbors && prm.neighbors > 1) spec.invalid_prefix = prm.history / 4;
    auto [track, fut] = detail::build_track(spec, pose, prm.history, prm.horizon, dt);
    sc.scene.agents.push_back(std::move(track));
    sc.future.push_back(std::move(fut));
  }

  if (arc_geometry) {
    if (kind == ScenarioKind::kUTurn) {
      sc.scene.lanes.push_back(detail::line_lane(pose, {-40.0, 0.0}, {0.0, 0.0}, pts));
      sc.scene.lanes.push_back(detail::arc_lane(pose, arc_r, arc_sgn, 0.0, 3.141592653589793, pts));
      sc.scene.lanes.push_back(detail::line_lane(pose, {0.0, arc_sgn * 2.0 * arc_r},
                                                 {-40.0, arc_sgn * 2.0 * arc_r}, pts));
      sc.scene.route = {0, 1, 2};
    } else {
      // Cover the swept arc with margin fore and aft of the ego's travel.
      const double span = double(prm.horizon) * dt;
      const double th_span = std::min(2.5, (span * 8.0) / arc_r);
      const double th_back = std::min(1.0, 25.0 / arc_r);
      sc.scene.lanes.push_back(detail::arc_lane(pose, arc_r, arc_sgn, -th_back, th_span * 0.5, pts));
      sc.scene.lanes.push_back(detail::arc_lane(pose, arc_r, arc_sgn, th_span * 0.5, th_span, pts));
      sc.scene.route = {0, 1};
    }
  } else {
    sc.scene.lanes.push_back(detail::line_lane(pose, {-40.0, 0.0}, {30.0, 0.0}, pts));
    sc.scene.lanes.push_back(detail::line_lane(pose, {30.0, 0.0}, {100.0, 0.0}, pts));
    sc.scene.route = {0, 1};
    for (std::size_t i = 0; i < std::min<std::size_t>(prm.neighbors, 2); ++i) {
      const double y_off = (i % 2 == 0 ? 3.5 : -3.5) * double(i / 2 + 1);
      sc.scene.lanes.push_back(detail::line_lane(pose, {-40.0, y_off}, {100.0, y_off}, pts));
    }
  }

  const std::size_t n_statics = 1 + misc.uniform_index(2);
  for (std::size_t i = 0; i < n_statics; ++i) {
    StaticObject obj;
    const double sx = misc.uniform(5.0, 30.0);
    const double sy = (misc.uniform() < 0.5 ? 1.0 : -1.0) * misc.uniform(6.0, 9.0);
    double wx, wy, wc, ws;
    detail::local_to_world(pose, sx, sy, wx, wy);
    detail::rotate_to_world(pose, 1.0, 0.0, wc, ws);
    obj.feature = {wx, wy, wc, ws, misc.uniform(0.5, 2.0), misc.uniform(0.5, 2.0)};
    obj.type_code = {0.0, 0.0, 0.0, 0.0};
    obj.type_code[misc.uniform_index(kStaticTypeDim)] = 1.0;
    sc.scene.statics.push_back(obj);
  }

  validate_scene(sc.scene);
  return sc;
}

// Checks the stored-velocity invariant: along every agent's observed and
// future frames, forward differences of position reproduce the stored
// velocity within tol.
inline void validate_scenario(const Scenario& sc, double tol = 1e-6) {
  if (sc.future.size() != sc.scene.agents.size() + 1)
    throw std::invalid_argument("scenario: future count must cover ego plus neighbors");
  const double dt = sc.dt();
  auto check_seq = [&](const std::vector<std::array<double, 4>>& seq, const std::string& what) {
    for (std::size_t k = 0; k + 1 < seq.size(); ++k) {
      const double fdx = (seq[k + 1][0] - seq[k][0]) / dt;
      const double fdy = (seq[k + 1][1] - seq[k][1]) / dt;
      if (std::abs(fdx - seq[k][2]) > tol || std::abs(fdy - seq[k][3]) > tol)
        throw std::invalid_argument(what + ": stored velocity disagrees with finite differences at frame " +
                                    std::to_string(k));
    }
  };
  auto stitch = [&](const AgentTrack& track, const std::vector<std::array<double, 4>>& fut) {
    std::vector<std::array<double, 4>> seq;
    for (std::size_t k = 0; k < track.frames.size(); ++k) {
      if (!track.frame_valid[k]) {
        seq.clear();  // only the trailing consecutive-valid run is checkable
        continue;
      }
      const auto& f = track.frames[k];
      seq.push_back({f[0], f[1], f[4], f[5]});
    }
    seq.insert(seq.end(), fut.begin(), fut.end());
    return seq;
  };
  check_seq(stitch(sc.scene.ego, sc.future[0]), "ego");
  for (std::size_t i = 0; i < sc.scene.agents.size(); ++i)
    check_seq(stitch(sc.scene.agents[i], sc.future[i + 1]), "agent " + std::to_string(i));
}

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json j;
  j["kind"] = scenario_kind_string(sc.kind);
  j["seed"] = sc.seed;
  j["scene"] = scene_to_json(sc.scene);
  nlohmann::json fut = nlohmann::json::array();
  for (const auto& agent : sc.future) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& f : agent) rows.push_back({f[0], f[1], f[2], f[3]});
    fut.push_back(std::move(rows));
  }
  j["future"] = std::move(fut);
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario sc;
  sc.kind = scenario_kind_from_string(j.at("kind").get<std::string>());
  sc.seed = j.at("seed").get<std::uint64_t>();
  sc.scene = scene_from_json(j.at("scene"));
  for (const auto& agent : j.at("future")) {
    std::vector<std::array<double, 4>> rows;
    for (const auto& f : agent) {
      if (f.size() != 4) throw std::invalid_argument("scenario: future frames need 4 values");
      rows.push_back({f[0].get<double>(), f[1].get<double>(), f[2].get<double>(), f[3].get<double>()});
    }
    sc.future.push_back(std::move(rows));
  }
  validate_scene(sc.scene);
  return sc;
}

}  // namespace pidimt
