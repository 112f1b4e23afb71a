#include "sfilter/cache.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <limits>

namespace sfilter {

void CachePolicy::validate() const {
  if (!(0.0 <= t1 && t1 <= t2 && t2 <= t3))
    throw std::invalid_argument("cache policy thresholds must satisfy 0 <= T1 <= T2 <= T3");
  if (max_entries < 1) throw std::invalid_argument("cache max_entries must be >= 1");
}

std::string to_string(CacheDecision d) {
  switch (d) {
    case CacheDecision::EarlyHit:
      return "early_hit";
    case CacheDecision::Filtered:
      return "filtered";
    case CacheDecision::FilteredAndCached:
      return "filtered_and_cached";
    case CacheDecision::Replanned:
      return "replanned";
  }
  return "unknown";
}

BehaviorCache::BehaviorCache(CachePolicy policy) : policy_(policy) { policy_.validate(); }

void BehaviorCache::insert(std::string behavior, PlanningScene scene, Trajectory trajectory) {
  if (behavior.empty()) throw std::invalid_argument("cache: behavior tag is empty");
  trajectory.validate();
  CachedBehavior e;
  e.behavior = std::move(behavior);
  e.scene = std::move(scene);
  e.trajectory = std::move(trajectory);
  e.created_at = next_stamp_++;
  entries_.push_back(std::move(e));
  while (entries_.size() > static_cast<size_t>(policy_.max_entries))
    entries_.erase(entries_.begin());
}

void BehaviorCache::restore(CachedBehavior entry) {
  if (entry.behavior.empty()) throw std::invalid_argument("cache: behavior tag is empty");
  entry.trajectory.validate();
  next_stamp_ = std::max(next_stamp_, entry.created_at + 1);
  entries_.push_back(std::move(entry));
  while (entries_.size() > static_cast<size_t>(policy_.max_entries))
    entries_.erase(entries_.begin());
}

double suitability(const CachedBehavior& entry, const PlanningScene& scene,
                   const Eigen::VectorXd& q, const SceneDiffParams& diff_params) {
  entry.trajectory.validate();
  if (entry.trajectory.waypoints.front().q.size() != q.size())
    throw std::invalid_argument("suitability: configuration dimension mismatch");
  const double delta_q = (entry.trajectory.waypoints.front().q - q).norm();
  return delta_q + scene_difference(entry.scene, scene, diff_params);
}

namespace {

struct FilterAttempt {
  bool ok = false;
  Trajectory trajectory;
};

FilterAttempt try_filter(const CachedBehavior& entry, const PlanningScene& scene,
                         const Eigen::VectorXd& q, const FilterContext& ctx,
                         const std::string& behavior) {
  FilterAttempt a;
  const RolloutResult r = run_filtered_tracking(*ctx.model, scene, entry.trajectory, q, ctx.cbf,
                                                ctx.tracker, ctx.dt, ctx.t_max);
  a.ok = r.converged;
  a.trajectory = r.output;
  a.trajectory.behavior = behavior;
  return a;
}

}  // namespace

PlanOrFilterResult plan_or_filter(BehaviorCache& cache, const std::string& behavior,
                                  const PlanningScene& scene, const Eigen::VectorXd& q,
                                  const FilterContext& ctx, const PlannerFallback& fallback) {
  if (!ctx.model) throw std::invalid_argument("plan_or_filter: missing robot model");
  cache.policy().validate();

  PlanOrFilterResult out;

  auto replan = [&]() {
    if (!fallback) throw std::runtime_error("plan_or_filter: no fallback planner configured");
    Trajectory planned = fallback(scene, q);
    planned.behavior = behavior;
    cache.insert(behavior, scene, planned);
    out.trajectory = std::move(planned);
    out.decision = CacheDecision::Replanned;
    out.chosen_index = -1;
    out.inserted = true;
    return out;
  };

  double best_score = std::numeric_limits<double>::infinity();
  int best_index = -1;
  for (size_t i = 0; i < cache.entries().size(); ++i) {
    const CachedBehavior& entry = cache.entries()[i];
    if (entry.behavior != behavior) continue;
    const double score = suitability(entry, scene, q, ctx.diff);
    ++out.probes;
    if (score < cache.policy().t1) {
      // Extremely similar reference: stop searching.
      const FilterAttempt a = try_filter(entry, scene, q, ctx, behavior);
      if (!a.ok) return replan();
      out.trajectory = a.trajectory;
      out.decision = CacheDecision::EarlyHit;
      out.chosen_index = static_cast<int>(i);
      return out;
    }
    if (score < best_score) {
      best_score = score;
      best_index = static_cast<int>(i);
    }
  }

  if (best_index < 0 || best_score >= cache.policy().t3) return replan();

  const FilterAttempt a = try_filter(cache.entries()[best_index], scene, q, ctx, behavior);
  if (!a.ok) return replan();
  out.trajectory = a.trajectory;
  out.chosen_index = best_index;
  if (best_score < cache.policy().t2) {
    out.decision = CacheDecision::Filtered;
  } else {
    out.decision = CacheDecision::FilteredAndCached;
    cache.insert(behavior, scene, out.trajectory);
    out.inserted = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

nlohmann::json cache_to_json(const BehaviorCache& cache) {
  nlohmann::json entries = nlohmann::json::array();
  for (const CachedBehavior& e : cache.entries()) {
    nlohmann::json je;
    je["behavior"] = e.behavior;
    je["created_at"] = e.created_at;
    je["scene"] = scene_to_json(e.scene);
    to_json(je["trajectory"], e.trajectory);
    entries.push_back(je);
  }
  nlohmann::json j;
  to_json(j["policy"], cache.policy());
  j["entries"] = entries;
  return j;
}

BehaviorCache cache_from_json(const nlohmann::json& j, const RobotModel& model) {
  CachePolicy policy;
  if (j.contains("policy")) j.at("policy").get_to(policy);
  policy.validate();
  BehaviorCache cache(policy);
  if (j.contains("entries")) {
    size_t index = 0;
    for (const auto& je : j.at("entries")) {
      try {
        CachedBehavior entry;
        entry.behavior = je.at("behavior").get<std::string>();
        entry.created_at = je.value("created_at", static_cast<std::int64_t>(index));
        entry.scene = scene_from_json(je.at("scene"), model);
        je.at("trajectory").get_to(entry.trajectory);
        cache.restore(std::move(entry));
      } catch (const std::exception& e) {
        throw std::runtime_error("cache entry " + std::to_string(index) + ": " + e.what());
      }
      ++index;
    }
  }
  return cache;
}

void save_cache(const BehaviorCache& cache, const std::string& path) {
  std::ofstream outf(path);
  if (!outf) throw std::runtime_error("cannot write cache: " + path);
  outf << cache_to_json(cache).dump(2) << "\n";
}

BehaviorCache load_cache(const std::string& path, const RobotModel& model) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open cache: " + path);
  nlohmann::json j;
  in >> j;
  return cache_from_json(j, model);
}

void to_json(nlohmann::json& j, const CachePolicy& p) {
  j = {{"t1", p.t1}, {"t2", p.t2}, {"t3", p.t3}, {"max_entries", p.max_entries}};
}

void from_json(const nlohmann::json& j, CachePolicy& p) {
  p = CachePolicy{};
  p.t1 = j.value("t1", p.t1);
  p.t2 = j.value("t2", p.t2);
  p.t3 = j.value("t3", p.t3);
  p.max_entries = j.value("max_entries", p.max_entries);
  p.validate();
}

}  // namespace sfilter
