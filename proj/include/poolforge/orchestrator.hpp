#pragma once

#include "poolforge/analysis.hpp"
#include "poolforge/artifact_store.hpp"
#include "poolforge/strategy.hpp"

#include "json.hpp"

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace poolforge {

class AnnotationHub;

/// External model adapter. Each round the orchestrator writes
/// `<exchange>/request.json`, runs `<command> <exchange>`, and expects
/// `<exchange>/response.json` ({"status": "ok", "accuracy"?}) plus a fresh
/// artifact directory `<exchange>/artifacts/`.
struct AdapterHandle {
  std::string command;                // empty -> synthetic backend
  std::filesystem::path exchange_dir;  // empty -> <run>/exchange
  std::chrono::seconds timeout{3600};

  bool enabled() const { return !command.empty(); }
};

struct RoundRecord {
  int round = 0;
  std::vector<SampleId> selected;
  std::optional<double> accuracy;
};

struct ALState {
  int round = 0;        // rounds completed
  int rounds_total = 0;
  LabeledSet labeled;
  std::vector<SampleId> pool;  // unlabeled ids, ascending
  std::vector<RoundRecord> history;
  std::filesystem::path run_dir;
  std::uint64_t seed = 0;
  Eigen::Index initial_size = 0;
  std::string input_digest;
  StrategyConfig config;

  std::filesystem::path artifacts_dir(int round) const;
  friend bool operator==(const ALState& a, const ALState& b);
};

struct RunOptions {
  std::filesystem::path pool_path;
  std::filesystem::path run_dir;
  StrategyConfig config;
  int rounds = 10;
  Eigen::Index initial_size = 32;
  /// Explicit seed labels; label < 0 means "look up the oracle label".
  std::optional<std::vector<std::pair<SampleId, ClassIndex>>> initial_entries;
  bool oracle_mode = true;
  bool record_time = false;  // adds wall-clock timestamps to run_manifest.json
};

/// Supplies labels for a queried batch.
class LabelProvider {
 public:
  virtual ~LabelProvider() = default;
  virtual Provenance provenance() const = 0;
  virtual std::map<SampleId, ClassIndex> label(const PoolArtifacts& snapshot, const std::vector<SampleId>& ids,
                                               int round) = 0;
};

class OracleLabels : public LabelProvider {
 public:
  Provenance provenance() const override { return Provenance::oracle; }
  std::map<SampleId, ClassIndex> label(const PoolArtifacts& snapshot, const std::vector<SampleId>& ids, int round) override;
};

/// Blocks on an annotation hub until a human has labeled the batch.
class ServiceLabels : public LabelProvider {
 public:
  explicit ServiceLabels(AnnotationHub& hub) : hub_(hub) {}
  Provenance provenance() const override { return Provenance::human; }
  std::map<SampleId, ClassIndex> label(const PoolArtifacts& snapshot, const std::vector<SampleId>& ids, int round) override;

 private:
  AnnotationHub& hub_;
};

/// Stored label of each id, in the order given.
std::vector<std::pair<SampleId, ClassIndex>> oracle_label(const PoolArtifacts& artifacts, const std::vector<SampleId>& ids);

/// Creates the run directory: snapshot artifacts/0, seed labels, state.json
/// and run_manifest.json.
ALState init_run(const RunOptions& options);

bool has_state(const std::filesystem::path& run_dir);
ALState load_state(const std::filesystem::path& run_dir);
void save_state(const ALState& state);

/// One query-label-update cycle. The new state is persisted last, after the
/// round directory and next artifact snapshot, so a failure anywhere leaves
/// the previous state.json in force.
ALState run_round(const ALState& state, const StrategyConfig& cfg, LabelProvider& labels, const AdapterHandle& adapter);

/// Runs rounds until rounds_total, or at most `max_rounds` more when given.
ALState run_loop(ALState state, const StrategyConfig& cfg, LabelProvider& labels, const AdapterHandle& adapter,
                 std::optional<int> max_rounds = std::nullopt);

nlohmann::json config_to_json(const StrategyConfig& cfg);
StrategyConfig config_from_json(const nlohmann::json& j);

nlohmann::json analysis_to_json(const SelectionAnalysis& a);

struct RoundMetrics {
  int round = 0;
  std::string strategy;
  SelectionAnalysis analysis;
};

/// Recomputes the selected-sample metrics of every completed round. With a
/// `reference` snapshot (e.g. a fully trained model's outputs) its encoder
/// features, distributions and oracle labels define the metric space;
/// otherwise each round's own snapshot does. Throws when no round exists.
std::vector<RoundMetrics> analyze_run(const std::filesystem::path& run_dir, const PoolArtifacts* reference,
                                      Eigen::Index rep_k);

/// Mean JS divergence between the calibrated distributions of `candidate`
/// and `reference` over the reference's samples.
double alignment_js(const PoolArtifacts& candidate, const PoolArtifacts& reference, Eigen::Index support_k);

}  // namespace poolforge
