#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sfilter/json_fwd.hpp"
#include "sfilter/scene.hpp"
#include "sfilter/tracker.hpp"

namespace sfilter {

struct CachedBehavior {
  std::string behavior;
  PlanningScene scene;
  Trajectory trajectory;
  std::int64_t created_at = 0;
};

struct CachePolicy {
  double t1 = 0.1;
  double t2 = 0.5;
  double t3 = 1.0;
  int max_entries = 500;

  void validate() const;  // enforces 0 <= t1 <= t2 <= t3
};

enum class CacheDecision { EarlyHit, Filtered, FilteredAndCached, Replanned };

std::string to_string(CacheDecision d);

/// Insertion-ordered behavior cache with a soft entry cap (oldest evicted).
class BehaviorCache {
 public:
  BehaviorCache() = default;
  explicit BehaviorCache(CachePolicy policy);

  const CachePolicy& policy() const { return policy_; }
  const std::vector<CachedBehavior>& entries() const { return entries_; }
  size_t size() const { return entries_.size(); }

  void insert(std::string behavior, PlanningScene scene, Trajectory trajectory);

  /// Re-inserts a persisted entry keeping its original timestamp.
  void restore(CachedBehavior entry);

 private:
  CachePolicy policy_;
  std::vector<CachedBehavior> entries_;
  std::int64_t next_stamp_ = 0;
};

/// Suitability metric T = |first waypoint - q|_2 + scene difference.
double suitability(const CachedBehavior& entry, const PlanningScene& scene,
                   const Eigen::VectorXd& q, const SceneDiffParams& diff_params = {});

/// Everything plan_or_filter needs to run the safety filter on a candidate.
struct FilterContext {
  const RobotModel* model = nullptr;
  CbfParams cbf;
  TrackerParams tracker;
  double dt = 0.01;
  double t_max = 30.0;
  SceneDiffParams diff;
};

using PlannerFallback =
    std::function<Trajectory(const PlanningScene& scene, const Eigen::VectorXd& q)>;

struct PlanOrFilterResult {
  Trajectory trajectory;
  CacheDecision decision = CacheDecision::Replanned;
  int probes = 0;        // suitability evaluations performed
  int chosen_index = -1; // cache index that was filtered, -1 for replanned
  bool inserted = false;
};

/// Algorithm: scan matching-behavior entries in insertion order and filter
/// the first one with T < T1 (early hit). Otherwise take the best score:
/// below T2 filter only, between T2 and T3 filter and insert the result,
/// above T3 (or when nothing matches) call the planner fallback and insert.
/// A filter that fails to converge escalates to the fallback.
PlanOrFilterResult plan_or_filter(BehaviorCache& cache, const std::string& behavior,
                                  const PlanningScene& scene, const Eigen::VectorXd& q,
                                  const FilterContext& ctx, const PlannerFallback& fallback);

void save_cache(const BehaviorCache& cache, const std::string& path);
BehaviorCache load_cache(const std::string& path, const RobotModel& model);
nlohmann::json cache_to_json(const BehaviorCache& cache);
BehaviorCache cache_from_json(const nlohmann::json& j, const RobotModel& model);

void to_json(nlohmann::json& j, const CachePolicy& p);
void from_json(const nlohmann::json& j, CachePolicy& p);

}  // namespace sfilter
