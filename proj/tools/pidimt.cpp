// Command-line front end: scenario generation, training, sampling,
// evaluation, and a quick self-check. Every knob is a --key=value override
// on top of an optional config file; a few common ones have named flags.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "pidimt/harness/evaluate.hpp"
#include "pidimt/harness/run_config.hpp"
#include "pidimt/harness/sampler.hpp"
#include "pidimt/harness/trainer.hpp"
#include "pidimt/scene/json_io.hpp"

namespace {

using namespace pidimt;

void write_text(const std::string& path, const std::string& body) {
  if (path == "-") {
    std::cout << body;
    return;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << body;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  is >> j;
  return j;
}

// A scene argument is a scenario object (its "scene" member is used), a
// bare scene object, or an array of either (first element is used).
Scene load_scene_arg(const std::string& path) {
  nlohmann::json j = read_json_file(path);
  if (j.is_array()) {
    if (j.empty()) throw std::runtime_error(path + ": empty scenario array");
    j = j.at(0);
  }
  if (j.contains("scene")) return scenario_from_json(j).scene;
  return scene_from_json(j);
}

nlohmann::json plan_to_json(const PlanSample& s) {
  nlohmann::json agents = nlohmann::json::array();
  for (std::size_t a = 0; a < s.n_agents; ++a) {
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t f = 0; f < s.n_frames; ++f)
      frames.push_back({s.traj.at2(a * s.n_frames + f, 0), s.traj.at2(a * s.n_frames + f, 1),
                        s.traj.at2(a * s.n_frames + f, 2), s.traj.at2(a * s.n_frames + f, 3)});
    agents.push_back(frames);
  }
  nlohmann::json out{{"n_agents", s.n_agents},
                     {"n_frames", s.n_frames},
                     {"agent_valid", s.agent_valid},
                     {"anchor_violations", s.anchor_violations},
                     {"refined", s.refined},
                     {"agents", agents}};
  if (s.refined)
    out["accel"] = {{"a_wavg", s.accel.a_wavg}, {"a_est", s.accel.a_est}, {"q_nc", s.accel.q_nc}};
  return out;
}

// Shared option plumbing: --config file, named flags, then raw --key=value
// extras. Named flags win over extras, extras over the file.
struct CommonOpts {
  std::string config_file;
  std::vector<std::pair<std::string, std::string*>> named;
  std::vector<std::string*> owned;

  ~CommonOpts() {
    for (auto* s : owned) delete s;
  }

  void add_config(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "config file with key = value lines");
    cmd->allow_extras();
  }

  void add_named(CLI::App* cmd, const std::string& flag, const std::string& key,
                 const std::string& help) {
    auto* slot = new std::string();
    owned.push_back(slot);
    cmd->add_option(flag, *slot, help);
    named.emplace_back(key, slot);
  }

  RunConfig build(CLI::App* cmd) const {
    RunConfig rc;
    if (!config_file.empty()) rc.load_file(config_file);
    rc.apply_env();
    rc.apply_flags(cmd->remaining());
    for (const auto& [key, slot] : named)
      if (!slot->empty()) rc.set(key, *slot);
    return rc;
  }
};

void add_ph_flags(CLI::App* cmd, CommonOpts& co) {
  co.add_named(cmd, "--phnn", "ph.enabled", "refinement pass: on or off");
  co.add_named(cmd, "--ph-steps", "ph.steps", "symplectic updates per refinement");
  co.add_named(cmd, "--ph-anchor", "ph.anchor", "ego future frames replaced by the rollout");
  co.add_named(cmd, "--ph-dt", "ph.dt", "rollout step in seconds");
  co.add_named(cmd, "--ph-impulse", "ph.impulse", "impulse convention: dt_scaled or literal");
}

// "on"/"off" are accepted wherever a boolean key is set via named flags.
std::string norm_onoff(const std::string& v) { return v; }

int cmd_gen_scenarios(const std::string& out, std::size_t count, std::uint64_t seed,
                      const std::string& kind, std::size_t history, std::size_t horizon) {
  ScenarioParams sp;
  sp.history = history;
  sp.horizon = horizon;
  const auto kinds = all_scenario_kinds();
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < count; ++i) {
    const ScenarioKind k =
        kind.empty() ? kinds[i % kinds.size()] : scenario_kind_from_string(kind);
    arr.push_back(scenario_to_json(generate_scenario(k, Rng::mix(seed, i), sp)));
  }
  write_text(out, arr.dump(2) + "\n");
  if (out != "-") std::printf("wrote %zu scenarios to %s\n", count, out.c_str());
  return 0;
}

int cmd_train(const RunConfig& rc, const std::string& resume) {
  TrainConfig tc = train_config_from(rc);
  PlannerModel<double> model;
  std::uint64_t seed = rc.u64("seed");
  std::size_t start = 0;
  if (!resume.empty()) {
    const nlohmann::json hdr = load_planner(resume, model);
    start = hdr.at("step").get<std::size_t>();
    seed = hdr.at("seed").get<std::uint64_t>();
    std::printf("resuming %s at step %zu (seed %llu)\n", resume.c_str(), start,
                static_cast<unsigned long long>(seed));
  } else {
    model.build(planner_config_from(rc));
    Rng rng(seed);
    model.init(rng);
  }
  if (start >= tc.steps) {
    std::printf("checkpoint already at step %zu >= train.steps %zu, nothing to do\n", start,
                tc.steps);
    return 0;
  }

  ScenarioParams sp;
  sp.history = model.cfg.scene.history_frames;
  sp.horizon = model.cfg.horizon;
  const auto pool = build_scenario_pool(rc.size("train.pool"), seed, sp);
  const auto items = build_plan_items(pool, model.cfg.horizon);
  std::printf("training on %zu scenarios, %zu steps, batch %zu\n", items.size(), tc.steps,
              tc.batch_size);

  const std::size_t every = tc.steps > 100 ? tc.steps / 100 : 1;
  train(model, items, tc, seed, start, [&](const StepStats& st) {
    if (st.step % every == 0 || st.step + 1 == tc.steps)
      std::printf("step %5zu  loss %.6f  mse %.6f  ph %.6f  |g| %.4f  lr %.2e\n", st.step,
                  st.loss, st.mse, st.ph, st.grad_norm, st.lr);
  });
  if (!tc.out.empty()) std::printf("saved %s (step %zu)\n", tc.out.c_str(), tc.steps);
  return 0;
}

int cmd_sample(const RunConfig& rc, const std::string& ckpt, const std::string& scene_path,
               const std::string& out, const CommonOpts& co) {
  PlannerModel<double> model;
  load_planner(ckpt, model);
  // Refinement flags override the stored config.
  PlannerConfig cfg = model.cfg;
  for (const auto& [key, slot] : co.named) {
    if (slot->empty()) continue;
    if (key == "ph.enabled") {
      RunConfig probe;
      probe.set("ph.enabled", norm_onoff(*slot));
      cfg.ph_enabled = probe.flag("ph.enabled");
    } else if (key == "ph.steps")
      cfg.ph.steps = rc.size("ph.steps");
    else if (key == "ph.anchor")
      cfg.ph.anchor = rc.size("ph.anchor");
    else if (key == "ph.dt")
      cfg.ph.dt = rc.dbl("ph.dt");
    else if (key == "ph.impulse")
      cfg.ph.impulse = impulse_mode_from_string(rc.str("ph.impulse"));
  }
  cfg.validate();
  model.cfg = cfg;

  SampleParams prm;
  prm.n_steps = rc.size("sample.steps");
  prm.temperature = rc.dbl("sample.temperature");
  prm.seed = rc.u64("seed");
  prm.refine = cfg.ph_enabled;
  prm.validate();

  const Scene scene = load_scene_arg(scene_path);
  const PlanSample s = sample_plan(model, scene, prm);
  write_text(out, plan_to_json(s).dump(2) + "\n");
  if (out != "-")
    std::printf("wrote plan to %s (%zu agents, %zu frames, refined=%s)\n", out.c_str(),
                s.n_agents, s.n_frames, s.refined ? "yes" : "no");
  return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& ckpt, const CommonOpts& co,
             const std::string& json_out) {
  PlannerModel<double> model;
  load_planner(ckpt, model);
  PlannerConfig cfg = model.cfg;
  for (const auto& [key, slot] : co.named) {
    if (slot->empty()) continue;
    if (key == "ph.enabled") {
      RunConfig probe;
      probe.set("ph.enabled", norm_onoff(*slot));
      cfg.ph_enabled = probe.flag("ph.enabled");
    } else if (key == "ph.steps")
      cfg.ph.steps = rc.size("ph.steps");
    else if (key == "ph.anchor")
      cfg.ph.anchor = rc.size("ph.anchor");
    else if (key == "ph.dt")
      cfg.ph.dt = rc.dbl("ph.dt");
    else if (key == "ph.impulse")
      cfg.ph.impulse = impulse_mode_from_string(rc.str("ph.impulse"));
  }
  cfg.validate();
  model.cfg = cfg;

  SampleParams prm;
  prm.n_steps = rc.size("sample.steps");
  prm.temperature = rc.dbl("sample.temperature");
  prm.refine = cfg.ph_enabled;
  const std::uint64_t seed = rc.u64("seed");

  ScenarioParams sp;
  sp.history = cfg.scene.history_frames;
  sp.horizon = cfg.horizon;
  const auto pool = build_scenario_pool(rc.size("eval.scenarios"), seed, sp);
  const EvalReport rep = evaluate(model, pool, prm, seed);
  std::printf("%s", eval_report_table(rep).c_str());
  const std::string csv_path = rc.str("eval.csv");
  if (!csv_path.empty()) {
    write_text(csv_path, eval_report_csv(rep));
    std::printf("wrote per-scenario csv to %s\n", csv_path.c_str());
  }
  if (!json_out.empty()) {
    write_text(json_out, eval_report_to_json(rep).dump(2) + "\n");
    std::printf("wrote report json to %s\n", json_out.c_str());
  }
  return 0;
}

int cmd_check() {
  int failures = 0;
  auto report = [&](const char* name, bool ok) {
    std::printf("[%s] %s\n", ok ? "ok" : "FAIL", name);
    if (!ok) ++failures;
  };

  {
    NoiseSchedule sch;
    const bool ok = std::abs(sch.alpha(0.5) - 0.2811828808) < 1e-9 &&
                    std::abs(sch.sigma(0.5) - 0.9596542021) < 1e-9 &&
                    sch.log_snr(0.2) > sch.log_snr(0.8);
    report("noise schedule reference values", ok);
  }
  {
    PHState st;
    st.q = {0.0, 0.0};
    st.p = {2.0, 0.0};
    st.dt = 0.1;
    st.steps = 3;
    auto pts = symplectic_refine(st, {0.5, 0.0});
    const bool ok = std::abs(pts[0].p[0] - 2.05) < 1e-12 && std::abs(pts[0].q[0] - 0.2) < 1e-12 &&
                    std::abs(pts[2].q[0] - 0.615) < 1e-12;
    report("symplectic recurrence hand values", ok);
  }
  {
    Rng rng(3);
    Tensor<double> x({4, 4});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.gaussian();
    AnchorSlice<double> anchor;
    anchor.index = {0, 1, 2, 3};
    anchor.value = {x[0], x[1], x[2], x[3]};
    auto st = make_solver_state(x, anchor, NoiseSchedule{}, 8, PredictionMode::kCleanSignal);
    run_solver(st, [](const Tensor<double>& xt, double) {
      Tensor<double> out(xt.shape());
      for (std::size_t i = 0; i < xt.numel(); ++i) out[i] = 0.5 * xt[i];
      return out;
    });
    report("solver anchor clamp", st.anchor_violations == 0);
  }
  {
    ScenarioParams sp;
    sp.history = 6;
    sp.horizon = 6;
    bool ok = true;
    for (auto kind : all_scenario_kinds()) {
      Scenario sc = generate_scenario(kind, 5, sp);
      try {
        validate_scenario(sc);
      } catch (const std::exception&) {
        ok = false;
      }
    }
    report("scenario kinematic consistency", ok);
  }
  std::printf(failures == 0 ? "all checks passed\n" : "%d check(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajectory diffusion planner"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-scenarios", "generate synthetic scenarios as json");
  std::string gen_out = "-", gen_kind;
  std::size_t gen_count = 5, gen_history = 21, gen_horizon = 40;
  std::uint64_t gen_seed = 1;
  gen->add_option("--count", gen_count, "number of scenarios");
  gen->add_option("--out", gen_out, "output path, - for stdout");
  gen->add_option("--kind", gen_kind,
                  "pin one kind: constant_velocity, constant_accel, lane_follow_turn, stop, "
                  "u_turn (default: cycle through all)");
  gen->add_option("--seed", gen_seed, "master seed");
  gen->add_option("--history", gen_history, "history frames per track");
  gen->add_option("--horizon", gen_horizon, "future frames per track");

  auto* tr = app.add_subcommand("train", "train a planner");
  CommonOpts tr_co;
  tr_co.add_config(tr);
  std::string tr_resume;
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");
  tr_co.add_named(tr, "--steps", "train.steps", "optimization steps");
  tr_co.add_named(tr, "--seed", "seed", "master seed");
  tr_co.add_named(tr, "--out", "train.out", "checkpoint output path");
  tr_co.add_named(tr, "--mode", "diffusion.mode", "model target: clean_signal or scaled_noise");

  auto* sa = app.add_subcommand("sample", "sample a plan for one scene");
  CommonOpts sa_co;
  sa_co.add_config(sa);
  std::string sa_ckpt, sa_scene, sa_out = "-";
  sa->add_option("--ckpt", sa_ckpt, "planner checkpoint")->required();
  sa->add_option("--scene", sa_scene, "scenario or scene json file")->required();
  sa->add_option("--out", sa_out, "output path, - for stdout");
  sa_co.add_named(sa, "--steps", "sample.steps", "solver steps");
  sa_co.add_named(sa, "--temperature", "sample.temperature", "initial-noise scale");
  sa_co.add_named(sa, "--seed", "seed", "sampling seed");
  add_ph_flags(sa, sa_co);

  auto* ev = app.add_subcommand("eval", "evaluate a planner on generated scenarios");
  CommonOpts ev_co;
  ev_co.add_config(ev);
  std::string ev_ckpt, ev_json;
  ev->add_option("--ckpt", ev_ckpt, "planner checkpoint")->required();
  ev->add_option("--json", ev_json, "write the full report as json");
  ev_co.add_named(ev, "--scenarios", "eval.scenarios", "number of scenarios");
  ev_co.add_named(ev, "--steps", "sample.steps", "solver steps");
  ev_co.add_named(ev, "--temperature", "sample.temperature", "initial-noise scale");
  ev_co.add_named(ev, "--seed", "seed", "master seed");
  ev_co.add_named(ev, "--csv", "eval.csv", "write per-scenario rows as csv");
  add_ph_flags(ev, ev_co);

  auto* ck = app.add_subcommand("check", "run quick internal consistency checks");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_scenarios(gen_out, gen_count, gen_seed, gen_kind, gen_history, gen_horizon);
    if (tr->parsed()) return cmd_train(tr_co.build(tr), tr_resume);
    if (sa->parsed()) return cmd_sample(sa_co.build(sa), sa_ckpt, sa_scene, sa_out, sa_co);
    if (ev->parsed()) return cmd_eval(ev_co.build(ev), ev_ckpt, ev_co, ev_json);
    if (ck->parsed()) return cmd_check();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
