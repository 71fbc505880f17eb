#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pidimt {

// Per-frame kinematic features of one tracked agent.
// Layout: x, y, cos, sin, vx, vy, w, l (meters, m/s, unit heading).
inline constexpr std::size_t kAgentFeatureDim = 8;
inline constexpr std::size_t kAgentTypeDim = 3;
inline constexpr std::size_t kStaticFeatureDim = 6;
inline constexpr std::size_t kStaticTypeDim = 4;
inline constexpr std::size_t kLanePointDim = 8;
inline constexpr std::size_t kTrafficStateDim = 4;
inline constexpr std::size_t kTokenMetaDim = 7;

struct AgentTrack {
  std::vector<std::array<double, kAgentFeatureDim>> frames;
  std::vector<bool> frame_valid;  // one bit per frame
  std::array<double, kAgentTypeDim> type_onehot{1.0, 0.0, 0.0};
  bool valid = true;
};

struct StaticObject {
  // x, y, cos, sin, w, l.
  std::array<double, kStaticFeatureDim> feature{};
  std::array<double, kStaticTypeDim> type_code{1.0, 0.0, 0.0, 0.0};
};

struct LaneElement {
  // Per point: centerline x, y; left boundary offset dx, dy; right boundary
  // offset dx, dy; tangent cos, sin. Offsets are relative to the centerline
  // point, so they rotate but do not translate under a frame change.
  std::vector<std::array<double, kLanePointDim>> points;
  std::array<double, kTrafficStateDim> traffic_state{1.0, 0.0, 0.0, 0.0};
  double speed_limit = 0.0;
  bool speed_limit_known = false;
};

struct Pose2d {
  double x = 0.0;
  double y = 0.0;
  double cos_h = 1.0;
  double sin_h = 0.0;
};

struct Scene {
  double frequency_hz = 10.0;
  AgentTrack ego;
  std::vector<AgentTrack> agents;
  std::vector<StaticObject> statics;
  std::vector<LaneElement> lanes;
  std::vector<std::size_t> route;  // indices into lanes, in travel order
};

// Position, heading, and modality tag travelling with every fused token.
// Concatenation order: x, y, cos, sin, is_agent, is_static, is_lane.
struct TokenMeta {
  double x = 0.0;
  double y = 0.0;
  double cos_h = 1.0;
  double sin_h = 0.0;
  std::array<double, 3> modality_onehot{1.0, 0.0, 0.0};

  std::array<double, kTokenMetaDim> concat() const {
    return {x, y, cos_h, sin_h, modality_onehot[0], modality_onehot[1], modality_onehot[2]};
  }
};

inline void check_unit_heading(double c, double s, const std::string& what) {
  double n = c * c + s * s;
  if (std::abs(n - 1.0) > 1e-6)
    throw std::invalid_argument(what + ": heading (cos,sin) must be unit length, got norm^2 " +
                                std::to_string(n));
}

inline void check_onehot(const double* v, std::size_t n, const std::string& what) {
  std::size_t ones = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (v[i] == 1.0) ++ones;
    else if (v[i] != 0.0)
      throw std::invalid_argument(what + ": one-hot entries must be 0 or 1");
  }
  if (ones != 1) throw std::invalid_argument(what + ": exactly one component must be 1");
}

inline void validate_track(const AgentTrack& a, const std::string& what) {
  if (a.frame_valid.size() != a.frames.size())
    throw std::invalid_argument(what + ": frame_valid size must match frames");
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    if (!a.frame_valid[i]) continue;
    const auto& f = a.frames[i];
    check_unit_heading(f[2], f[3], what);
    if (!(f[6] > 0.0) || !(f[7] > 0.0))
      throw std::invalid_argument(what + ": width and length must be positive on valid frames");
  }
  check_onehot(a.type_onehot.data(), kAgentTypeDim, what + " type");
}

inline void validate_scene(const Scene& scene) {
  validate_track(scene.ego, "ego");
  for (std::size_t i = 0; i < scene.agents.size(); ++i)
    validate_track(scene.agents[i], "agent " + std::to_string(i));
  for (std::size_t i = 0; i < scene.statics.size(); ++i) {
    const auto& s = scene.statics[i];
    check_unit_heading(s.feature[2], s.feature[3], "static " + std::to_string(i));
    check_onehot(s.type_code.data(), kStaticTypeDim, "static " + std::to_string(i) + " type");
  }
  for (std::size_t i = 0; i < scene.lanes.size(); ++i) {
    const auto& l = scene.lanes[i];
    if (l.points.size() < 2)
      throw std::invalid_argument("lane " + std::to_string(i) + ": needs at least 2 points");
    for (const auto& p : l.points)
      for (double v : p)
        if (!std::isfinite(v))
          throw std::invalid_argument("lane " + std::to_string(i) + ": non-finite geometry");
  }
  for (std::size_t r : scene.route)
    if (r >= scene.lanes.size())
      throw std::invalid_argument("route references lane " + std::to_string(r) +
                                  " but only " + std::to_string(scene.lanes.size()) + " exist");
  if (!(scene.frequency_hz > 0.0))
    throw std::invalid_argument("frequency_hz must be positive");
}

}  // namespace pidimt
