#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "sfilter/csv.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = SFILTER_CLI_PATH;
const std::string kSourceDir = SFILTER_SOURCE_DIR;

struct CmdResult {
  int code = -1;
  std::string out;
};

CmdResult run(const std::string& args, const fs::path& dir) {
  const fs::path out_file = dir / "stdout.txt";
  const std::string full = kCli + " " + args + " > " + out_file.string() + " 2> " +
                           (dir / "stderr.txt").string();
  const int status = std::system(full.c_str());
  CmdResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

// Single revolute joint with a small tool sphere at radius 0.5.
const char* kTinyModel = R"({
  "joints": [ { "type": "revolute", "axis": [0, 0, 1],
                "limits": { "lower": -3.1, "upper": 3.1, "velocity": 3.0 } } ],
  "geometry": [ { "link": 0, "shape": { "type": "sphere", "radius": 0.05 },
                  "origin": { "xyz": [0.5, 0, 0] }, "name": "tool" } ]
})";

const char* kEmptyScene = R"({ "obstacles": [], "allowed_pairs": [] })";

}  // namespace

TEST_CASE("filter: example1 scenario exits 0 and writes artifacts") {
  const fs::path dir = fresh_dir("sfilter_cli_filter");
  const CmdResult r = run("filter --scenario " + kSourceDir +
                              "/scenarios/example1/scenario.json --out " +
                              (dir / "out").string(),
                          dir);
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "out" / "trace.csv"));
  CHECK(fs::exists(dir / "out" / "filtered.csv"));
  CHECK(fs::exists(dir / "out" / "manifest.json"));

  const nlohmann::json manifest = nlohmann::json::parse(std::ifstream(dir / "out" / "manifest.json"));
  CHECK(manifest.at("converged").get<bool>());
  CHECK(manifest.at("min_h").get<double>() >= 0.0);

  const nlohmann::json line = nlohmann::json::parse(r.out);
  CHECK(line.at("status") == "ok");
}

TEST_CASE("filter: obstacle-free scenario tracks the reference") {
  const fs::path dir = fresh_dir("sfilter_cli_free");
  write(dir / "model.json", kTinyModel);
  write(dir / "scene.json", kEmptyScene);
  write(dir / "ref.csv", "t,q_1\n0,0\n1,1.0\n");
  write(dir / "scenario.json", R"({
    "name": "free", "model": "model.json", "scene": "scene.json",
    "reference": "ref.csv", "dt": 0.01, "t_max": 10.0,
    "cbf": { "alpha": 3.0, "robust_margin": false, "q_dot_max": 3.0 },
    "tracker": { "v_sat": 3.0 }
  })");
  const CmdResult r = run("filter --scenario " + (dir / "scenario.json").string() + " --out " +
                              (dir / "out").string(),
                          dir);
  CHECK(r.code == 0);
  const auto out = sfilter::read_trajectory_csv((dir / "out" / "filtered.csv").string());
  CHECK(std::abs(out.waypoints.back().q(0) - 1.0) < 0.02);
}

TEST_CASE("filter: impossible goal exits 2 with a partial trace") {
  const fs::path dir = fresh_dir("sfilter_cli_stuck");
  write(dir / "model.json", kTinyModel);
  // Obstacle sitting on the goal position of the tool.
  write(dir / "scene.json", R"({
    "obstacles": [ { "name": "wall", "shape": { "type": "sphere", "radius": 0.1 },
                     "pose": { "xyz": [0.2701511529340699, 0.4207354924039483, 0] } } ]
  })");
  write(dir / "ref.csv", "t,q_1\n0,0\n1,1.0\n");
  write(dir / "scenario.json", R"({
    "name": "stuck", "model": "model.json", "scene": "scene.json",
    "reference": "ref.csv", "dt": 0.01, "t_max": 3.0,
    "cbf": { "alpha": 3.0, "robust_margin": false, "q_dot_max": 3.0 },
    "tracker": { "v_sat": 3.0, "stall_timeout": 1.0 }
  })");
  const CmdResult r = run("filter --scenario " + (dir / "scenario.json").string() + " --out " +
                              (dir / "out").string(),
                          dir);
  CHECK(r.code == 2);
  CHECK(fs::exists(dir / "out" / "trace.csv"));
  const nlohmann::json line = nlohmann::json::parse(r.out);
  CHECK(line.at("status") == "not_converged");
  CHECK(line.at("min_h").get<double>() >= -1e-4);
}

TEST_CASE("filter: identical runs produce byte-identical traces") {
  const fs::path dir = fresh_dir("sfilter_cli_det");
  for (const char* out : {"a", "b"}) {
    const CmdResult r = run("filter --scenario " + kSourceDir +
                                "/scenarios/example1/scenario.json --out " + (dir / out).string(),
                            dir);
    REQUIRE(r.code == 0);
  }
  CHECK(sfilter::read_text_file((dir / "a" / "trace.csv").string()) ==
        sfilter::read_text_file((dir / "b" / "trace.csv").string()));
  CHECK(sfilter::read_text_file((dir / "a" / "filtered.csv").string()) ==
        sfilter::read_text_file((dir / "b" / "filtered.csv").string()));
}

TEST_CASE("cache: insert, query, run, and the no-fallback exit code") {
  const fs::path dir = fresh_dir("sfilter_cli_cache");
  write(dir / "model.json", kTinyModel);
  write(dir / "scene.json", kEmptyScene);
  write(dir / "traj.csv", "t,q_1\n0,0\n1,0.8\n");
  write(dir / "state.json", R"({ "q": [0.0] })");
  write(dir / "params.json", R"({
    "cbf": { "alpha": 3.0, "robust_margin": false, "q_dot_max": 3.0 },
    "tracker": { "v_sat": 3.0 }, "dt": 0.01, "t_max": 10.0
  })");
  const std::string common = " --model " + (dir / "model.json").string() + " --scene " +
                             (dir / "scene.json").string() + " --cache " +
                             (dir / "cache.json").string();

  CmdResult r = run("cache insert" + common + " --behavior move --trajectory " +
                        (dir / "traj.csv").string(),
                    dir);
  CHECK(r.code == 0);
  CHECK(nlohmann::json::parse(r.out).at("cache_size") == 1);

  r = run("cache query" + common + " --behavior move --state " + (dir / "state.json").string(),
          dir);
  CHECK(r.code == 0);
  CHECK(r.out == "0,move,0\n");  // perfect match scores zero

  // Early hit straight through the filter.
  r = run("cache run" + common + " --behavior move --state " + (dir / "state.json").string() +
              " --params " + (dir / "params.json").string() + " --out " +
              (dir / "run_out.csv").string(),
          dir);
  CHECK(r.code == 0);
  {
    const nlohmann::json line = nlohmann::json::parse(r.out);
    CHECK(line.at("decision") == "early_hit");
    CHECK(line.at("cache_size") == 1);
  }
  const auto filtered = sfilter::read_trajectory_csv((dir / "run_out.csv").string());
  CHECK(std::abs(filtered.waypoints.back().q(0) - 0.8) < 0.02);

  // Unknown behavior without a fallback: exit 3.
  r = run("cache run" + common + " --behavior lift --state " + (dir / "state.json").string() +
              " --params " + (dir / "params.json").string(),
          dir);
  CHECK(r.code == 3);

  // Unknown behavior with a scripted planner: replanned and persisted.
  write(dir / "planned.csv", "t,q_1\n0,0\n1,0.4\n");
  write(dir / "planner.sh", "#!/bin/sh\ncp " + (dir / "planned.csv").string() + " \"$3\"\n");
  fs::permissions(dir / "planner.sh", fs::perms::owner_all);
  r = run("cache run" + common + " --behavior lift --state " + (dir / "state.json").string() +
              " --params " + (dir / "params.json").string() + " --fallback-cmd " +
              (dir / "planner.sh").string(),
          dir);
  CHECK(r.code == 0);
  {
    const nlohmann::json line = nlohmann::json::parse(r.out);
    CHECK(line.at("decision") == "replanned");
    CHECK(line.at("cache_size") == 2);
  }

  // The next request for the same behavior hits the new entry.
  r = run("cache run" + common + " --behavior lift --state " + (dir / "state.json").string() +
              " --params " + (dir / "params.json").string(),
          dir);
  CHECK(r.code == 0);
  CHECK(nlohmann::json::parse(r.out).at("decision") == "early_hit");
}

TEST_CASE("cache run is deterministic on identical inputs") {
  const fs::path dir = fresh_dir("sfilter_cli_cache_det");
  write(dir / "model.json", kTinyModel);
  write(dir / "scene.json", kEmptyScene);
  write(dir / "traj.csv", "t,q_1\n0,0\n1,0.8\n");
  write(dir / "state.json", R"({ "q": [0.05] })");
  write(dir / "params.json", R"({
    "cbf": { "alpha": 3.0, "robust_margin": false, "q_dot_max": 3.0 },
    "tracker": { "v_sat": 3.0 }, "dt": 0.01, "t_max": 10.0
  })");
  const std::string common = " --model " + (dir / "model.json").string() + " --scene " +
                             (dir / "scene.json").string();

  std::string outputs[2];
  for (int i = 0; i < 2; ++i) {
    const std::string cache = (dir / ("cache" + std::to_string(i) + ".json")).string();
    CmdResult r = run("cache insert" + common + " --cache " + cache + " --behavior move" +
                          " --trajectory " + (dir / "traj.csv").string(),
                      dir);
    REQUIRE(r.code == 0);
    r = run("cache run" + common + " --cache " + cache + " --behavior move --state " +
                (dir / "state.json").string() + " --params " + (dir / "params.json").string() +
                " --out " + (dir / ("out" + std::to_string(i) + ".csv")).string(),
            dir);
    REQUIRE(r.code == 0);
    outputs[i] = r.out + sfilter::read_text_file((dir / ("out" + std::to_string(i) + ".csv")).string());
  }
  CHECK(outputs[0] == outputs[1]);
}

TEST_CASE("bench: zero iterations writes an empty report and exits 0") {
  const fs::path dir = fresh_dir("sfilter_cli_bench");
  const CmdResult r = run("bench --scenario " + kSourceDir +
                              "/scenarios/example1/scenario.json --iters 0 --out " +
                              (dir / "report.json").string(),
                          dir);
  CHECK(r.code == 0);
  const nlohmann::json report = nlohmann::json::parse(std::ifstream(dir / "report.json"));
  CHECK(report.at("iterations") == 0);
  CHECK_FALSE(report.contains("per_step_ms"));
}

TEST_CASE("bench: small run reports latency percentiles") {
  const fs::path dir = fresh_dir("sfilter_cli_bench2");
  write(dir / "model.json", kTinyModel);
  write(dir / "scene.json", kEmptyScene);
  write(dir / "ref.csv", "t,q_1\n0,0\n1,0.5\n");
  write(dir / "scenario.json", R"({
    "name": "bench", "model": "model.json", "scene": "scene.json",
    "reference": "ref.csv", "dt": 0.01, "t_max": 1.0,
    "cbf": { "alpha": 3.0, "robust_margin": false, "q_dot_max": 3.0 },
    "tracker": { "v_sat": 3.0 }
  })");
  const CmdResult r = run("bench --scenario " + (dir / "scenario.json").string() +
                              " --iters 3 --out " + (dir / "report.json").string(),
                          dir);
  CHECK(r.code == 0);
  const nlohmann::json report = nlohmann::json::parse(std::ifstream(dir / "report.json"));
  CHECK(report.at("per_step_ms").contains("mean"));
  CHECK(report.at("per_step_ms").contains("p50"));
  CHECK(report.at("per_step_ms").contains("p99"));
  CHECK(report.at("behavior_ms").contains("mean"));
}
