#include "poolforge/strategy.hpp"

#include "json.hpp"

#include <algorithm>
#include <numeric>

namespace poolforge {

namespace {

// Unlabeled rows of the snapshot, ascending by id.
struct Candidates {
  std::vector<Eigen::Index> rows;
  std::vector<SampleId> ids;
};

Candidates unlabeled(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg) {
  cfg.validate();
  Candidates c;
  for (Eigen::Index r = 0; r < pool.size(); ++r) {
    const SampleId id = pool.sample_ids[static_cast<std::size_t>(r)];
    if (!labeled.contains(id)) c.rows.push_back(r);
  }
  std::sort(c.rows.begin(), c.rows.end(), [&](Eigen::Index a, Eigen::Index b) {
    return pool.sample_ids[static_cast<std::size_t>(a)] < pool.sample_ids[static_cast<std::size_t>(b)];
  });
  for (auto r : c.rows) c.ids.push_back(pool.sample_ids[static_cast<std::size_t>(r)]);
  if (static_cast<Eigen::Index>(c.rows.size()) < cfg.b)
    throw ValidationError("pool", "unlabeled pool has " + std::to_string(c.rows.size()) + " samples, fewer than b = " +
                                      std::to_string(cfg.b));
  return c;
}

BatchReport start_report(const Candidates& c, const StrategyConfig& cfg, std::string name, int round) {
  BatchReport r;
  r.strategy = std::move(name);
  r.round = round;
  r.seed = cfg.seed;
  r.records.resize(c.ids.size());
  for (std::size_t i = 0; i < c.ids.size(); ++i) r.records[i].id = c.ids[i];
  return r;
}

void mark_selected(BatchReport& r, std::vector<std::size_t> picks) {
  for (auto i : picks) {
    r.records[i].selected = true;
    r.selected.push_back(r.records[i].id);
  }
}

PoolCalibration calibrated(const PoolArtifacts& pool, const Candidates& c, const StrategyConfig& cfg) {
  const RowMatrixd probs = gather_rows(pool.word_probs, c.rows);
  return calibrate_pool(probs, cfg.k, c.ids, cfg.prior_floor);
}

// Top b by score descending, ties to the lower id (records are id-ascending,
// so a stable sort keeps that order).
std::vector<std::size_t> top_b(const std::vector<double>& score, Eigen::Index b) {
  std::vector<std::size_t> order(score.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return score[a] > score[c]; });
  order.resize(static_cast<std::size_t>(b));
  return order;
}

}  // namespace

void StrategyConfig::validate() const {
  if (b < 1) throw ValidationError("b", "batch size must be at least 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda", "must lie in [0, 1]");
  if (k < 1) throw ValidationError("k", "support size must be positive");
  if (k_prime < 1) throw ValidationError("k_prime", "neighbor count must be positive");
  if (kmeans.max_iters < 0) throw ValidationError("kmeans.max_iters", "must be non-negative");
  if (!(prior_floor > 0.0)) throw ValidationError("prior_floor", "must be positive");
}

const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names = {"promptal", "entropy", "lc", "bertkm", "random"};
  return names;
}

double joint_score(double u, double d_local, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda", "must lie in [0, 1]");
  return lambda * u + (1.0 - lambda) * d_local;
}

BatchReport select_promptal(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg, int round) {
  const Candidates c = unlabeled(pool, labeled, cfg);
  if (labeled.empty()) throw ValidationError("labeled", "PromptAL needs a non-empty labeled set");
  BatchReport report = start_report(c, cfg, "promptal", round);

  const PoolCalibration cal = calibrated(pool, c, cfg);
  report.floored_priors = cal.floored_priors;

  std::vector<Eigen::Index> labeled_rows;
  for (const auto& e : labeled.entries()) labeled_rows.push_back(pool.row(e.id));
  const NeighborIndex index(gather_rows(pool.knowledge_features, labeled_rows), labeled.ids());

  const RowMatrixd features = gather_rows(pool.knowledge_features, c.rows);
  const auto n = static_cast<std::size_t>(features.rows());
  std::vector<double> local(n), joint(n);
  parallel_for(n, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    local[i] = local_diversity(index, features.row(r), cfg.k_prime);
    joint[i] = joint_score(cal.uncertainty(r), local[i], cfg.lambda);
  });

  const Clustering clusters = kmeans_pp(features, cfg.b, stream_seed(cfg.seed, "kmeans", static_cast<std::uint64_t>(round)),
                                        cfg.kmeans);
  report.inertia = clusters.inertia;

  std::vector<std::optional<std::size_t>> best(static_cast<std::size_t>(cfg.b));
  for (std::size_t i = 0; i < n; ++i) {
    auto& rec = report.records[i];
    rec.u = cal.uncertainty(static_cast<Eigen::Index>(i));
    rec.d = local[i];
    rec.s = joint[i];
    rec.cluster = clusters.assignments[i];
    auto& slot = best[static_cast<std::size_t>(clusters.assignments[i])];
    if (!slot || joint[i] > joint[*slot]) slot = i;
  }
  std::vector<std::size_t> picks;
  for (const auto& slot : best) picks.push_back(*slot);
  mark_selected(report, picks);
  return report;
}

BatchReport select_entropy(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg, int round) {
  const Candidates c = unlabeled(pool, labeled, cfg);
  BatchReport report = start_report(c, cfg, "entropy", round);
  const PoolCalibration cal = calibrated(pool, c, cfg);
  report.floored_priors = cal.floored_priors;
  std::vector<double> score(c.ids.size());
  for (std::size_t i = 0; i < score.size(); ++i) {
    score[i] = cal.uncertainty(static_cast<Eigen::Index>(i));
    report.records[i].u = score[i];
    report.records[i].s = score[i];
  }
  mark_selected(report, top_b(score, cfg.b));
  return report;
}

BatchReport select_least_confidence(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg,
                                    int round) {
  const Candidates c = unlabeled(pool, labeled, cfg);
  BatchReport report = start_report(c, cfg, "lc", round);
  const PoolCalibration cal = calibrated(pool, c, cfg);
  report.floored_priors = cal.floored_priors;
  std::vector<double> score(c.ids.size());
  for (std::size_t i = 0; i < score.size(); ++i) {
    // Ascending max probability == descending (1 - max probability).
    score[i] = 1.0 - cal.probs.row(static_cast<Eigen::Index>(i)).maxCoeff();
    report.records[i].u = cal.uncertainty(static_cast<Eigen::Index>(i));
    report.records[i].s = score[i];
  }
  mark_selected(report, top_b(score, cfg.b));
  return report;
}

BatchReport select_bertkm(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg, int round) {
  const Candidates c = unlabeled(pool, labeled, cfg);
  BatchReport report = start_report(c, cfg, "bertkm", round);

  RowMatrixd features = gather_rows(pool.encoder_features, c.rows);
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    const double norm = features.row(r).norm();
    if (!(norm > 0.0))
      throw ValidationError("encoder_features", "zero-norm row for id " + std::to_string(c.ids[static_cast<std::size_t>(r)]));
    features.row(r) /= norm;
  }
  const Clustering clusters = kmeans_pp(features, cfg.b, stream_seed(cfg.seed, "kmeans", static_cast<std::uint64_t>(round)),
                                        cfg.kmeans);
  report.inertia = clusters.inertia;

  std::vector<std::optional<std::size_t>> best(static_cast<std::size_t>(cfg.b));
  std::vector<double> dist(c.ids.size());
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const auto cl = clusters.assignments[i];
    dist[i] = std::sqrt(squared_distance(features.row(static_cast<Eigen::Index>(i)), clusters.centroids.row(cl)));
    report.records[i].cluster = cl;
    report.records[i].s = -dist[i];
    auto& slot = best[static_cast<std::size_t>(cl)];
    if (!slot || dist[i] < dist[*slot]) slot = i;
  }
  std::vector<std::size_t> picks;
  for (const auto& slot : best) picks.push_back(*slot);
  mark_selected(report, picks);
  return report;
}

BatchReport select_random(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg, int round) {
  const Candidates c = unlabeled(pool, labeled, cfg);
  BatchReport report = start_report(c, cfg, "random", round);
  Rng rng(cfg.seed, "random-strategy", static_cast<std::uint64_t>(round));
  std::vector<std::size_t> order(c.ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.b); ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
  }
  order.resize(static_cast<std::size_t>(cfg.b));
  mark_selected(report, order);
  return report;
}

BatchReport select_batch(const PoolArtifacts& pool, const LabeledSet& labeled, const StrategyConfig& cfg, int round) {
  if (cfg.strategy == "promptal") return select_promptal(pool, labeled, cfg, round);
  if (cfg.strategy == "entropy") return select_entropy(pool, labeled, cfg, round);
  if (cfg.strategy == "lc") return select_least_confidence(pool, labeled, cfg, round);
  if (cfg.strategy == "bertkm") return select_bertkm(pool, labeled, cfg, round);
  if (cfg.strategy == "random") return select_random(pool, labeled, cfg, round);
  throw ValidationError("strategy", "unknown strategy '" + cfg.strategy + "'");
}

std::string batch_report_jsonl(const BatchReport& report) {
  using ojson = nlohmann::ordered_json;
  auto opt = [](const auto& v) { return v ? ojson(*v) : ojson(nullptr); };
  std::string out;
  for (const auto& rec : report.records) {
    ojson line;
    line["id"] = rec.id;
    line["u"] = opt(rec.u);
    line["d"] = opt(rec.d);
    line["s"] = opt(rec.s);
    line["cluster"] = opt(rec.cluster);
    line["selected"] = rec.selected;
    out += line.dump();
    out += '\n';
  }
  return out;
}

}  // namespace poolforge
