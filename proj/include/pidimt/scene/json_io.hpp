#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "pidimt/scene/types.hpp"

namespace pidimt {

namespace detail {

template <std::size_t N>
std::array<double, N> read_fixed_array(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != N)
    throw std::invalid_argument(what + ": expected array of " + std::to_string(N) + " numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = j[i].get<double>();
  return out;
}

inline AgentTrack read_track(const nlohmann::json& j, const std::string& what) {
  AgentTrack a;
  const auto& frames = j.at("frames");
  if (!frames.is_array()) throw std::invalid_argument(what + ": frames must be an array");
  for (const auto& f : frames)
    a.frames.push_back(read_fixed_array<kAgentFeatureDim>(f, what + " frame"));
  if (j.contains("frame_valid")) {
    for (const auto& b : j.at("frame_valid")) a.frame_valid.push_back(b.get<bool>());
  } else {
    a.frame_valid.assign(a.frames.size(), true);
  }
  a.type_onehot = read_fixed_array<kAgentTypeDim>(j.at("type"), what + " type");
  a.valid = j.value("valid", true);
  return a;
}

inline nlohmann::json write_track(const AgentTrack& a) {
  nlohmann::json j;
  j["frames"] = nlohmann::json::array();
  for (const auto& f : a.frames) j["frames"].push_back(f);
  j["frame_valid"] = a.frame_valid;
  j["type"] = a.type_onehot;
  j["valid"] = a.valid;
  return j;
}

}  // namespace detail

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.frequency_hz = j.value("frequency_hz", 10.0);
  s.ego = detail::read_track(j.at("ego"), "ego");
  if (j.contains("agents"))
    for (const auto& a : j.at("agents"))
      s.agents.push_back(detail::read_track(a, "agent"));
  if (j.contains("statics")) {
    for (const auto& o : j.at("statics")) {
      StaticObject st;
      st.feature = detail::read_fixed_array<kStaticFeatureDim>(o.at("feature"), "static feature");
      st.type_code = detail::read_fixed_array<kStaticTypeDim>(o.at("type"), "static type");
      s.statics.push_back(st);
    }
  }
  if (j.contains("lanes")) {
    for (const auto& l : j.at("lanes")) {
      LaneElement lane;
      for (const auto& p : l.at("points"))
        lane.points.push_back(detail::read_fixed_array<kLanePointDim>(p, "lane point"));
      lane.traffic_state =
          detail::read_fixed_array<kTrafficStateDim>(l.at("traffic_state"), "traffic state");
      const auto& sl = l.at("speed_limit");
      if (sl.is_null()) {
        lane.speed_limit_known = false;
      } else {
        lane.speed_limit = sl.get<double>();
        lane.speed_limit_known = true;
      }
      s.lanes.push_back(std::move(lane));
    }
  }
  if (j.contains("route"))
    for (const auto& r : j.at("route")) s.route.push_back(r.get<std::size_t>());
  validate_scene(s);
  return s;
}

inline nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json j;
  j["frequency_hz"] = s.frequency_hz;
  j["ego"] = detail::write_track(s.ego);
  j["agents"] = nlohmann::json::array();
  for (const auto& a : s.agents) j["agents"].push_back(detail::write_track(a));
  j["statics"] = nlohmann::json::array();
  for (const auto& o : s.statics)
    j["statics"].push_back({{"feature", o.feature}, {"type", o.type_code}});
  j["lanes"] = nlohmann::json::array();
  for (const auto& l : s.lanes) {
    nlohmann::json lj;
    lj["points"] = nlohmann::json::array();
    for (const auto& p : l.points) lj["points"].push_back(p);
    lj["traffic_state"] = l.traffic_state;
    if (l.speed_limit_known) lj["speed_limit"] = l.speed_limit;
    else lj["speed_limit"] = nullptr;
    j["lanes"].push_back(lj);
  }
  j["route"] = s.route;
  return j;
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file " + path);
  nlohmann::json j;
  in >> j;
  return scene_from_json(j);
}

inline void save_scene(const Scene& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scene file " + path);
  out << scene_to_json(s).dump(2) << "\n";
}

}  // namespace pidimt
