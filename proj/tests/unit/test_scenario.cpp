#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pidimt/harness/scenario.hpp"

using namespace pidimt;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

bool tracks_equal(const AgentTrack& a, const AgentTrack& b) {
  if (a.frames.size() != b.frames.size() || a.frame_valid != b.frame_valid) return false;
  for (std::size_t i = 0; i < a.frames.size(); ++i)
    for (std::size_t j = 0; j < kAgentFeatureDim; ++j)
      if (a.frames[i][j] != b.frames[i][j]) return false;
  return true;
}

}  // namespace

TEST_CASE("constant velocity ground truth follows the closed form") {
  ScenarioParams prm;
  prm.identity_start = true;
  prm.speed = 5.0;
  auto sc = generate_scenario(ScenarioKind::kConstantVelocity, 3, prm);

  const double dt = sc.dt();
  REQUIRE(sc.future[0].size() == prm.horizon);
  for (std::size_t k = 0; k < prm.horizon; ++k) {
    const double t = double(k + 1) * dt;
    REQUIRE_THAT(sc.future[0][k][0], WithinAbs(5.0 * t, 1e-12));
    REQUIRE_THAT(sc.future[0][k][1], WithinAbs(0.0, 1e-12));
    REQUIRE_THAT(sc.future[0][k][2], WithinAbs(5.0, 1e-9));
    REQUIRE_THAT(sc.future[0][k][3], WithinAbs(0.0, 1e-9));
  }
  // Current frame sits at the origin moving along +x.
  const auto& cur = sc.scene.ego.frames.back();
  REQUIRE_THAT(cur[0], WithinAbs(0.0, 1e-12));
  REQUIRE_THAT(cur[4], WithinAbs(5.0, 1e-9));
}

TEST_CASE("constant acceleration from rest covers half a meter in one second") {
  ScenarioParams prm;
  prm.identity_start = true;
  prm.speed = 0.0;
  prm.accel = 1.0;
  auto sc = generate_scenario(ScenarioKind::kConstantAccel, 7, prm);
  // Frame at t = 1 s is future index 9 at 10 Hz.
  REQUIRE_THAT(sc.future[0][9][0], WithinAbs(0.5, 1e-9));
  // History is at rest at the origin; the current frame's stored velocity is
  // the forward difference into the first accelerated step.
  for (const auto& f : sc.scene.ego.frames) REQUIRE_THAT(f[0], WithinAbs(0.0, 1e-12));
  for (std::size_t k = 0; k + 1 < sc.scene.ego.frames.size(); ++k)
    REQUIRE(std::abs(sc.scene.ego.frames[k][4]) < 1e-9);
  REQUIRE_THAT(sc.scene.ego.frames.back()[4], WithinAbs(0.05, 1e-9));
}

TEST_CASE("same kind and seed give identical scenarios") {
  for (ScenarioKind kind : all_scenario_kinds()) {
    auto a = generate_scenario(kind, 42);
    auto b = generate_scenario(kind, 42);
    REQUIRE(tracks_equal(a.scene.ego, b.scene.ego));
    REQUIRE(a.scene.agents.size() == b.scene.agents.size());
    for (std::size_t i = 0; i < a.scene.agents.size(); ++i)
      REQUIRE(tracks_equal(a.scene.agents[i], b.scene.agents[i]));
    REQUIRE(a.future == b.future);
    REQUIRE(a.scene.lanes.size() == b.scene.lanes.size());
    for (std::size_t i = 0; i < a.scene.lanes.size(); ++i)
      REQUIRE(a.scene.lanes[i].points == b.scene.lanes[i].points);

    auto c = generate_scenario(kind, 43);
    REQUIRE_FALSE(tracks_equal(a.scene.ego, c.scene.ego));
  }
}

TEST_CASE("stored velocities are forward differences for every kind") {
  for (ScenarioKind kind : all_scenario_kinds()) {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      auto sc = generate_scenario(kind, seed);
      REQUIRE_NOTHROW(validate_scenario(sc, 1e-6));
      REQUIRE_NOTHROW(validate_scene(sc.scene));
    }
  }
}

TEST_CASE("scenario shapes and masks") {
  ScenarioParams prm;
  prm.neighbors = 3;
  auto sc = generate_scenario(ScenarioKind::kLaneFollowTurn, 11, prm);
  REQUIRE(sc.scene.agents.size() == 3);
  REQUIRE(sc.future.size() == 4);
  REQUIRE(sc.scene.ego.frames.size() == prm.history);
  for (const auto& f : sc.future) REQUIRE(f.size() == prm.horizon);
  // The last neighbor enters the scene late.
  const auto& late = sc.scene.agents.back();
  REQUIRE_FALSE(late.frame_valid.front());
  REQUIRE(late.frame_valid.back());
  REQUIRE(!sc.scene.lanes.empty());
  REQUIRE(!sc.scene.route.empty());
  REQUIRE(!sc.scene.statics.empty());
}

TEST_CASE("u-turn reverses the ego heading") {
  ScenarioParams prm;
  prm.identity_start = true;
  prm.speed = 3.0;
  prm.horizon = 80;
  auto sc = generate_scenario(ScenarioKind::kUTurn, 5, prm);
  const auto& first = sc.future[0].front();
  const auto& last = sc.future[0].back();
  // Forward at the start of the future, backward along x at its end.
  REQUIRE(first[2] > 2.0);
  REQUIRE(last[2] < -2.0);
}

TEST_CASE("stop scenario ends near rest") {
  ScenarioParams prm;
  prm.identity_start = true;
  auto sc = generate_scenario(ScenarioKind::kStop, 9, prm);
  const auto& last = sc.future[0].back();
  REQUIRE(std::hypot(last[2], last[3]) < 0.5);
  const auto& cur = sc.scene.ego.frames.back();
  REQUIRE(std::hypot(cur[4], cur[5]) > 3.0);
}

TEST_CASE("scenario JSON round-trip") {
  auto sc = generate_scenario(ScenarioKind::kLaneFollowTurn, 23);
  auto j = scenario_to_json(sc);
  auto back = scenario_from_json(j);
  REQUIRE(back.kind == sc.kind);
  REQUIRE(back.seed == sc.seed);
  REQUIRE(back.future == sc.future);
  REQUIRE(tracks_equal(back.scene.ego, sc.scene.ego));
  REQUIRE(back.scene.lanes.size() == sc.scene.lanes.size());
  REQUIRE_NOTHROW(validate_scenario(back, 1e-6));
}

TEST_CASE("scenario validation rejects bad parameters") {
  ScenarioParams prm;
  prm.history = 1;
  REQUIRE_THROWS_AS(generate_scenario(ScenarioKind::kStop, 1, prm), std::invalid_argument);
  prm = ScenarioParams{};
  prm.horizon = 0;
  REQUIRE_THROWS_AS(generate_scenario(ScenarioKind::kStop, 1, prm), std::invalid_argument);
  prm = ScenarioParams{};
  prm.frequency_hz = 0.0;
  REQUIRE_THROWS_AS(generate_scenario(ScenarioKind::kStop, 1, prm), std::invalid_argument);
  prm = ScenarioParams{};
  prm.turn_rate = 0.0;
  REQUIRE_THROWS_AS(generate_scenario(ScenarioKind::kLaneFollowTurn, 1, prm),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(scenario_kind_from_string("zigzag"), std::invalid_argument);
}

TEST_CASE("kind names round-trip") {
  for (ScenarioKind kind : all_scenario_kinds())
    REQUIRE(scenario_kind_from_string(scenario_kind_string(kind)) == kind);
}

TEST_CASE("tampered velocities fail the consistency check") {
  auto sc = generate_scenario(ScenarioKind::kConstantVelocity, 2);
  sc.future[0][5][2] += 0.5;
  REQUIRE_THROWS_AS(validate_scenario(sc, 1e-6), std::invalid_argument);
}
