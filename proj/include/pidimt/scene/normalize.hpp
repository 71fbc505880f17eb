#pragma once

#include <cmath>
#include <stdexcept>

#include "pidimt/scene/types.hpp"

namespace pidimt {

// Rigid transform of a point into the frame anchored at `pose`:
// translate by -pose, rotate by -heading.
inline void to_frame(const Pose2d& pose, double x, double y, double& ox, double& oy) {
  double dx = x - pose.x, dy = y - pose.y;
  ox = pose.cos_h * dx + pose.sin_h * dy;
  oy = -pose.sin_h * dx + pose.cos_h * dy;
}

// Headings and other direction pairs rotate without translating.
inline void rotate_to_frame(const Pose2d& pose, double c, double s, double& oc, double& os) {
  oc = pose.cos_h * c + pose.sin_h * s;
  os = -pose.sin_h * c + pose.cos_h * s;
}

inline Pose2d current_pose(const AgentTrack& track) {
  if (track.frames.empty()) throw std::invalid_argument("current_pose: track has no frames");
  for (std::size_t i = track.frames.size(); i-- > 0;) {
    if (track.frame_valid[i]) {
      const auto& f = track.frames[i];
      return Pose2d{f[0], f[1], f[2], f[3]};
    }
  }
  throw std::invalid_argument("current_pose: track has no valid frame");
}

namespace detail {

inline void normalize_track(AgentTrack& a, const Pose2d& pose) {
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    if (!a.frame_valid[i]) {
      a.frames[i].fill(0.0);
      continue;
    }
    auto& f = a.frames[i];
    to_frame(pose, f[0], f[1], f[0], f[1]);
    rotate_to_frame(pose, f[2], f[3], f[2], f[3]);
    rotate_to_frame(pose, f[4], f[5], f[4], f[5]);
  }
}

}  // namespace detail

// Expresses every position, heading, and velocity of the scene in the frame
// of the supplied ego pose (normally the ego's current state). Invalid
// frames are zero-filled with their mask bit already cleared.
inline Scene normalize_scene(const Scene& raw, const Pose2d& ego_pose) {
  check_unit_heading(ego_pose.cos_h, ego_pose.sin_h, "ego pose");
  if (!std::isfinite(ego_pose.x) || !std::isfinite(ego_pose.y))
    throw std::invalid_argument("ego pose: non-finite position");
  if (!raw.ego.valid) throw std::invalid_argument("normalize_scene: ego track must be valid");
  bool any = false;
  for (bool b : raw.ego.frame_valid) any = any || b;
  if (!any) throw std::invalid_argument("normalize_scene: ego track has no valid frame");

  Scene out = raw;
  detail::normalize_track(out.ego, ego_pose);
  for (auto& a : out.agents) {
    if (!a.valid) {
      for (auto& f : a.frames) f.fill(0.0);
      a.frame_valid.assign(a.frames.size(), false);
      continue;
    }
    detail::normalize_track(a, ego_pose);
  }
  for (auto& s : out.statics) {
    to_frame(ego_pose, s.feature[0], s.feature[1], s.feature[0], s.feature[1]);
    rotate_to_frame(ego_pose, s.feature[2], s.feature[3], s.feature[2], s.feature[3]);
  }
  for (auto& l : out.lanes) {
    for (auto& p : l.points) {
      to_frame(ego_pose, p[0], p[1], p[0], p[1]);
      rotate_to_frame(ego_pose, p[2], p[3], p[2], p[3]);
      rotate_to_frame(ego_pose, p[4], p[5], p[4], p[5]);
      rotate_to_frame(ego_pose, p[6], p[7], p[6], p[7]);
    }
  }
  return out;
}

inline Scene normalize_scene(const Scene& raw) {
  return normalize_scene(raw, current_pose(raw.ego));
}

}  // namespace pidimt
