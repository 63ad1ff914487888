#pragma once

#include "poolforge/artifact_store.hpp"
#include "poolforge/calibration.hpp"
#include "poolforge/diversity.hpp"
#include "poolforge/prompt_fusion.hpp"

#include <optional>
#include <string>
#include <vector>

namespace poolforge {

/// Selection knobs. Defaults are the published configuration
/// (lambda 0.9, support k 100, k' 10, batch 32).
struct StrategyConfig {
  std::string strategy = "promptal";
  Eigen::Index b = 32;
  double lambda = 0.9;
  Eigen::Index k = 100;
  Eigen::Index k_prime = 10;
  std::uint64_t seed = 0;
  KMeansOptions kmeans;
  AttnScale attn_scale = AttnScale::head_d;
  double prior_floor = kDefaultPriorFloor;

  void validate() const;
};

/// One pool sample's scores. Unused scores are empty.
struct SampleScore {
  SampleId id = 0;
  std::optional<double> u;  // entropy of the calibrated distribution
  std::optional<double> d;  // local diversity
  std::optional<double> s;  // ranking score, higher is preferred
  std::optional<Eigen::Index> cluster;
  bool selected = false;
};

struct BatchReport {
  std::string strategy;
  int round = 0;
  std::uint64_t seed = 0;
  std::vector<SampleId> selected;    // selection order (cluster order for clustered strategies)
  std::vector<SampleScore> records;  // every unlabeled sample, ascending id
  int floored_priors = 0;
  std::optional<double> inertia;
};

const std::vector<std::string>& strategy_names();

/// lambda * u + (1 - lambda) * d_local.
double joint_score(double u, double d_local, double lambda);

BatchReport select_promptal(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg, int round = 0);
BatchReport select_entropy(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg, int round = 0);
BatchReport select_least_confidence(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg,
                                    int round = 0);
BatchReport select_bertkm(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg, int round = 0);
BatchReport select_random(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg, int round = 0);

/// Dispatches on cfg.strategy ("promptal", "entropy", "lc", "bertkm", "random").
BatchReport select_batch(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg, int round = 0);

/// One JSON object per line, fields in the order id, u, d, s, cluster, selected.
std::string batch_report_jsonl(const BatchReport& report);

}  // namespace poolforge
