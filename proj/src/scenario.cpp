#include "sfilter/scenario.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <unistd.h>

#include "sfilter/csv.hpp"

namespace sfilter {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute() || base_dir.empty()) return path;
  return (fs::path(base_dir) / path).string();
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct NoFallback : std::runtime_error {
  NoFallback() : std::runtime_error("no fallback planner configured") {}
};

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

}  // namespace

bool log_enabled() {
  static const bool enabled = [] {
    const char* level = std::getenv("SFILTER_LOG");
    return level && std::string(level) != "quiet" && std::string(level) != "0";
  }();
  return enabled;
}

void log_line(const std::string& msg) {
  if (log_enabled()) std::cerr << "[sfilter] " << msg << "\n";
}

Scenario scenario_from_json(const nlohmann::json& j, const std::string& base_dir) {
  Scenario s;
  s.name = j.value("name", "scenario");
  s.model_path = resolve(base_dir, j.at("model").get<std::string>());
  s.scene_path = resolve(base_dir, j.at("scene").get<std::string>());
  if (j.contains("reference")) s.reference_path = resolve(base_dir, j.at("reference").get<std::string>());
  s.behavior = j.value("behavior", "");
  const std::string mode = j.value("mode", "kinematic");
  if (mode == "kinematic")
    s.mode = Scenario::Mode::Kinematic;
  else if (mode == "dynamic")
    s.mode = Scenario::Mode::Dynamic;
  else
    throw std::invalid_argument("unknown scenario mode: " + mode);
  s.dt = j.value("dt", s.dt);
  s.t_max = j.value("t_max", s.t_max);
  s.seed = j.value("seed", 0u);
  if (j.contains("cbf")) j.at("cbf").get_to(s.cbf);
  if (j.contains("tracker")) j.at("tracker").get_to(s.tracker);
  if (j.contains("plant")) j.at("plant").get_to(s.plant);
  if (j.contains("q0")) s.q0 = j.at("q0").get<std::vector<double>>();
  if (j.contains("qdot0")) s.qdot0 = j.at("qdot0").get<std::vector<double>>();
  if (j.contains("events")) {
    for (const auto& je : j.at("events")) {
      SceneEvent e;
      je.get_to(e);
      s.events.push_back(e);
    }
    for (size_t i = 1; i < s.events.size(); ++i)
      if (s.events[i].time < s.events[i - 1].time)
        throw std::invalid_argument("scenario events must be time-ordered");
  }
  return s;
}

Scenario load_scenario(const std::string& path) {
  return scenario_from_json(read_json_file(path), fs::path(path).parent_path().string());
}

ScenarioAssets prepare_scenario(const Scenario& scenario) {
  ScenarioAssets a{load_robot_model(scenario.model_path), PlanningScene(), Trajectory(),
                   Eigen::VectorXd(), Eigen::VectorXd(), scenario.cbf};
  a.scene = load_scene(scenario.scene_path, a.model);

  if (scenario.reference_path.empty())
    throw std::invalid_argument("scenario has no reference trajectory");
  if (fs::path(scenario.reference_path).extension() == ".json") {
    read_json_file(scenario.reference_path).get_to(a.reference);
  } else {
    a.reference = read_trajectory_csv(scenario.reference_path, scenario.behavior);
  }
  if (!scenario.behavior.empty()) a.reference.behavior = scenario.behavior;

  const long n = a.model.joint_count();
  if (a.reference.waypoints.front().q.size() != n)
    throw std::invalid_argument("reference dimension does not match the model");

  if (scenario.q0) {
    if (static_cast<long>(scenario.q0->size()) != n)
      throw std::invalid_argument("q0 dimension mismatch");
    a.q0 = Eigen::Map<const Eigen::VectorXd>(scenario.q0->data(), n);
  } else {
    a.q0 = a.reference.waypoints.front().q;
  }
  a.qdot0 = Eigen::VectorXd::Zero(n);
  if (!scenario.qdot0.empty()) {
    if (static_cast<long>(scenario.qdot0.size()) != n)
      throw std::invalid_argument("qdot0 dimension mismatch");
    a.qdot0 = Eigen::Map<const Eigen::VectorXd>(scenario.qdot0.data(), n);
  }

  if (a.cbf.j_max <= 0.0) {
    a.cbf.j_max = jacobian_norm_bound(a.model, 2000, scenario.seed);
    log_line("jacobian_norm_bound -> " + format_double(a.cbf.j_max));
  }
  return a;
}

int cmd_filter(const Scenario& scenario, const std::string& out_dir) {
  const ScenarioAssets a = prepare_scenario(scenario);
  fs::create_directories(out_dir);

  RolloutResult rollout;
  std::optional<SafetyCertificate> certificate;
  if (scenario.mode == Scenario::Mode::Kinematic) {
    rollout = rollout_kinematic(a.model, a.scene, a.reference, a.q0, a.cbf, scenario.tracker,
                                scenario.dt, scenario.t_max, scenario.events);
  } else {
    DynamicRollout dyn =
        rollout_dynamic(a.model, a.scene, a.reference, a.q0, a.qdot0, scenario.plant, a.cbf,
                        scenario.tracker, scenario.dt, scenario.t_max, scenario.events);
    rollout = std::move(dyn.rollout);
    certificate = dyn.certificate;
  }

  write_trace_csv(rollout.trace, (fs::path(out_dir) / "trace.csv").string());
  write_trajectory_csv(rollout.output, (fs::path(out_dir) / "filtered.csv").string());

  const double h0 = rollout.trace.empty() ? 0.0 : rollout.trace.front().h_min;
  const bool invariance_applies = h0 >= 0.0;
  const bool invariance_held = !invariance_applies || rollout.min_h >= -1e-4;

  nlohmann::json manifest;
  manifest["name"] = scenario.name;
  manifest["version"] = kVersion;
  manifest["seed"] = scenario.seed;
  manifest["mode"] = scenario.mode == Scenario::Mode::Kinematic ? "kinematic" : "dynamic";
  manifest["dt"] = scenario.dt;
  manifest["j_max"] = a.cbf.j_max;
  {
    nlohmann::json cfg;
    to_json(cfg["cbf"], a.cbf);
    to_json(cfg["tracker"], scenario.tracker);
    to_json(cfg["plant"], scenario.plant);
    manifest["config_hash"] = fnv1a(cfg.dump());
  }
  manifest["converged"] = rollout.converged;
  manifest["min_h"] = rollout.min_h;
  manifest["h0"] = h0;
  manifest["invariance_held"] = invariance_held;
  if (certificate) to_json(manifest["certificate"], *certificate);

  int code = 0;
  std::string status = "ok";
  if (!rollout.converged) {
    code = 2;
    status = "not_converged";
  } else if (!invariance_held) {
    code = 1;
    status = "invariance_violated";
  }
  manifest["status"] = status;
  manifest["exit_code"] = code;
  write_text_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");

  std::cout << nlohmann::json{{"status", status},
                              {"converged", rollout.converged},
                              {"min_h", rollout.min_h},
                              {"out", out_dir}}
                   .dump()
            << "\n";
  return code;
}

int cmd_bench(const Scenario& scenario, int iterations, const std::string& out_path) {
  using clock = std::chrono::steady_clock;

  nlohmann::json report;
  report["name"] = scenario.name;
  report["iterations"] = iterations;

  if (iterations > 0) {
    const ScenarioAssets a = prepare_scenario(scenario);
    std::vector<double> step_ms;
    std::vector<double> behavior_ms;
    for (int it = 0; it < iterations; ++it) {
      TrackerState state;
      state.params = scenario.tracker;
      Eigen::VectorXd q = a.q0;
      const long steps = static_cast<long>(scenario.t_max / scenario.dt);
      const auto run_start = clock::now();
      for (long k = 0; k <= steps; ++k) {
        const Eigen::VectorXd v_des = desired_velocity(state, a.reference, q, scenario.dt);
        const auto t0 = clock::now();
        const CbfStepResult step = cbf_step(a.model, a.scene, q, v_des, a.cbf, scenario.dt);
        const auto t1 = clock::now();
        step_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (reached_goal(state, a.reference, q)) break;
        q = step.q_next;
      }
      const auto run_end = clock::now();
      behavior_ms.push_back(std::chrono::duration<double, std::milli>(run_end - run_start).count());
    }

    auto percentile = [](std::vector<double> v, double p) {
      const size_t idx = static_cast<size_t>(p * (v.size() - 1));
      std::nth_element(v.begin(), v.begin() + idx, v.end());
      return v[idx];
    };
    double mean = 0.0;
    for (double v : step_ms) mean += v;
    mean /= static_cast<double>(step_ms.size());
    double behavior_mean = 0.0;
    for (double v : behavior_ms) behavior_mean += v;
    behavior_mean /= static_cast<double>(behavior_ms.size());

    report["steps"] = step_ms.size();
    report["per_step_ms"] = {{"mean", mean},
                             {"p50", percentile(step_ms, 0.5)},
                             {"p99", percentile(step_ms, 0.99)}};
    report["behavior_ms"] = {{"mean", behavior_mean}};
  }

  const std::string text = report.dump(2) + "\n";
  if (!out_path.empty()) write_text_file(out_path, text);
  std::cout << text;
  return 0;
}

namespace {

FilterContext context_from_params(const std::string& params_path, const RobotModel& model) {
  FilterContext ctx;
  if (!params_path.empty()) {
    const nlohmann::json j = read_json_file(params_path);
    if (j.contains("cbf")) j.at("cbf").get_to(ctx.cbf);
    if (j.contains("tracker")) j.at("tracker").get_to(ctx.tracker);
    ctx.dt = j.value("dt", ctx.dt);
    ctx.t_max = j.value("t_max", ctx.t_max);
  }
  if (ctx.cbf.j_max <= 0.0) ctx.cbf.j_max = jacobian_norm_bound(model, 2000, 0);
  return ctx;
}

Eigen::VectorXd state_from_file(const std::string& path, long n) {
  JointState state;
  read_json_file(path).get_to(state);
  if (state.q.size() != n) throw std::invalid_argument("robot state dimension mismatch");
  return state.q;
}

PlannerFallback make_subprocess_fallback(const std::string& cmd) {
  if (cmd.empty()) return [](const PlanningScene&, const Eigen::VectorXd&) -> Trajectory {
    throw NoFallback();
  };
  return [cmd](const PlanningScene& scene, const Eigen::VectorXd& q) -> Trajectory {
    const fs::path dir =
        fs::temp_directory_path() / ("sfilter_fallback_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const std::string scene_path = (dir / "scene.json").string();
    const std::string state_path = (dir / "state.json").string();
    const std::string out_path = (dir / "planned.csv").string();
    write_text_file(scene_path, scene_to_json(scene).dump(2) + "\n");
    nlohmann::json js;
    JointState state{q, std::nullopt};
    to_json(js, state);
    write_text_file(state_path, js.dump() + "\n");
    const std::string full =
        cmd + " '" + scene_path + "' '" + state_path + "' '" + out_path + "'";
    log_line("fallback: " + full);
    const int rc = std::system(full.c_str());
    if (rc != 0) throw std::runtime_error("fallback planner failed with exit code " +
                                          std::to_string(rc));
    return read_trajectory_csv(out_path);
  };
}

}  // namespace

int cmd_cache_query(const CacheCmdOptions& opt) {
  const RobotModel model = load_robot_model(opt.model_path);
  const BehaviorCache cache = load_cache(opt.cache_path, model);
  const PlanningScene scene = load_scene(opt.scene_path, model);
  const Eigen::VectorXd q = state_from_file(opt.state_path, model.joint_count());

  for (size_t i = 0; i < cache.entries().size(); ++i) {
    const CachedBehavior& e = cache.entries()[i];
    if (!opt.behavior.empty() && e.behavior != opt.behavior) continue;
    const double score = suitability(e, scene, q);
    std::cout << i << "," << e.behavior << "," << format_double(score) << "\n";
  }
  return 0;
}

int cmd_cache_run(const CacheCmdOptions& opt) {
  const RobotModel model = load_robot_model(opt.model_path);
  BehaviorCache cache = load_cache(opt.cache_path, model);
  const PlanningScene scene = load_scene(opt.scene_path, model);
  const Eigen::VectorXd q = state_from_file(opt.state_path, model.joint_count());

  FilterContext ctx = context_from_params(opt.params_path, model);
  ctx.model = &model;

  try {
    const PlanOrFilterResult result =
        plan_or_filter(cache, opt.behavior, scene, q, ctx, make_subprocess_fallback(opt.fallback_cmd));
    save_cache(cache, opt.cache_path);
    if (!opt.trajectory_path.empty()) write_trajectory_csv(result.trajectory, opt.trajectory_path);
    std::cout << nlohmann::json{{"decision", to_string(result.decision)},
                                {"probes", result.probes},
                                {"chosen_index", result.chosen_index},
                                {"inserted", result.inserted},
                                {"cache_size", cache.size()}}
                     .dump()
              << "\n";
    return 0;
  } catch (const NoFallback&) {
    std::cout << nlohmann::json{{"error", "no suitable cached behavior and no fallback"}}.dump()
              << "\n";
    return 3;
  }
}

int cmd_cache_insert(const CacheCmdOptions& opt) {
  const RobotModel model = load_robot_model(opt.model_path);
  BehaviorCache cache = fs::exists(opt.cache_path) ? load_cache(opt.cache_path, model)
                                                   : BehaviorCache(CachePolicy{});
  const PlanningScene scene = load_scene(opt.scene_path, model);
  const Trajectory traj = read_trajectory_csv(opt.trajectory_path, opt.behavior);
  cache.insert(opt.behavior, scene, traj);
  save_cache(cache, opt.cache_path);
  std::cout << nlohmann::json{{"inserted", true}, {"cache_size", cache.size()}}.dump() << "\n";
  return 0;
}

}  // namespace sfilter
