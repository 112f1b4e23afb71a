#include <CLI11.hpp>

#include <exception>
#include <iostream>

#include "sfilter/scenario.hpp"

int main(int argc, char** argv) {
  CLI::App app{"CBF trajectory safety filter"};
  app.require_subcommand(1);

  // filter
  std::string scenario_path, out_dir = "out";
  CLI::App* filter = app.add_subcommand("filter", "run the safety filter on a scenario");
  filter->add_option("--scenario", scenario_path, "scenario JSON")->required();
  filter->add_option("--out", out_dir, "output directory");

  // bench
  std::string bench_scenario, bench_out;
  int iterations = 10;
  CLI::App* bench = app.add_subcommand("bench", "measure per-step filter latency");
  bench->add_option("--scenario", bench_scenario, "scenario JSON")->required();
  bench->add_option("--iters", iterations, "rollout repetitions");
  bench->add_option("--out", bench_out, "report JSON path");

  // cache
  sfilter::CacheCmdOptions copt;
  CLI::App* cache = app.add_subcommand("cache", "query or run the behavior cache");
  cache->require_subcommand(1);
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--cache", copt.cache_path, "cache JSON file")->required();
    sub->add_option("--model", copt.model_path, "robot model JSON")->required();
    sub->add_option("--behavior", copt.behavior, "behavior tag")->required();
    sub->add_option("--scene", copt.scene_path, "planning scene JSON")->required();
  };
  CLI::App* cquery = cache->add_subcommand("query", "print suitability scores");
  add_common(cquery);
  cquery->add_option("--state", copt.state_path, "robot state JSON")->required();

  CLI::App* crun = cache->add_subcommand("run", "filter or re-plan per the cache policy");
  add_common(crun);
  crun->add_option("--state", copt.state_path, "robot state JSON")->required();
  crun->add_option("--fallback-cmd", copt.fallback_cmd,
                   "planner command, invoked as: cmd <scene.json> <state.json> <out.csv>");
  crun->add_option("--params", copt.params_path, "filter parameter JSON");
  crun->add_option("--out", copt.trajectory_path, "output trajectory CSV");

  CLI::App* cinsert = cache->add_subcommand("insert", "add an entry to the cache");
  add_common(cinsert);
  cinsert->add_option("--trajectory", copt.trajectory_path, "trajectory CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*filter) return sfilter::cmd_filter(sfilter::load_scenario(scenario_path), out_dir);
    if (*bench)
      return sfilter::cmd_bench(sfilter::load_scenario(bench_scenario), iterations, bench_out);
    if (*cquery) return sfilter::cmd_cache_query(copt);
    if (*crun) return sfilter::cmd_cache_run(copt);
    if (*cinsert) return sfilter::cmd_cache_insert(copt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
