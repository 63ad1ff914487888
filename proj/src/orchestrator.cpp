#include "poolforge/orchestrator.hpp"

#include "poolforge/annotation_service.hpp"
#include "poolforge/synth.hpp"
#include "poolforge/util.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <numeric>
#include <chrono>
#include <ctime>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace poolforge {

namespace {

constexpr int kStateVersion = 1;

json metric_json(const Metric& m) { return m ? json(*m) : json("overflow"); }

// Runs `sh -c '<command> "$1"' sh <arg>`; returns the exit status, or throws
// AdapterError on timeout or abnormal termination.
int run_command(const std::string& command, const fs::path& arg, std::chrono::seconds timeout) {
  const std::string script = command + " \"$1\"";
  const pid_t pid = fork();
  if (pid < 0) throw AdapterError("adapter: fork failed");
  if (pid == 0) {
    execl("/bin/sh", "sh", "-c", script.c_str(), "sh", arg.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  int status = 0;
  for (;;) {
    const pid_t done = waitpid(pid, &status, WNOHANG);
    if (done == pid) break;
    if (done < 0) throw AdapterError("adapter: waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      throw AdapterError("adapter: timed out after " + std::to_string(timeout.count()) + " s");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  if (!WIFEXITED(status)) throw AdapterError("adapter: terminated by signal");
  return WEXITSTATUS(status);
}

struct ModelUpdate {
  PoolArtifacts next;
  std::optional<double> accuracy;
};

ModelUpdate adapter_update(const ALState& after, const AdapterHandle& adapter, int round) {
  const fs::path exchange =
      (adapter.exchange_dir.empty() ? after.run_dir / "exchange" : adapter.exchange_dir) / std::to_string(round);
  fs::remove_all(exchange);
  fs::create_directories(exchange);

  json labeled = json::array();
  for (const auto& e : after.labeled.entries()) labeled.push_back({{"id", e.id}, {"label", e.label}});
  json request = {{"round", round},
                  {"labeled", labeled},
                  {"pool_artifacts", fs::absolute(after.artifacts_dir(round)).string()},
                  {"output_dir", "artifacts"},
                  {"seed", after.seed}};
  write_file_atomic(exchange / "request.json", request.dump(2) + "\n");

  const int code = run_command(adapter.command, exchange, adapter.timeout);
  if (code != 0) throw AdapterError("adapter exited with status " + std::to_string(code));
  if (!fs::exists(exchange / "response.json")) throw AdapterError("adapter wrote no response.json");
  ModelUpdate update;
  try {
    const json response = json::parse(read_file(exchange / "response.json"));
    if (response.at("status") != "ok")
      throw AdapterError("adapter reported status " + response.at("status").dump());
    if (response.contains("accuracy") && !response["accuracy"].is_null())
      update.accuracy = response["accuracy"].get<double>();
  } catch (const json::exception& e) {
    throw AdapterError(std::string("adapter response unreadable: ") + e.what());
  }
  try {
    update.next = load_artifacts(exchange / "artifacts");
  } catch (const ValidationError& e) {
    throw AdapterError(std::string("adapter artifacts invalid: ") + e.what());
  }
  return update;
}

// Refits the toy head on the labeled set and regenerates word probabilities.
ModelUpdate synthetic_update(const ALState& after, const PoolArtifacts& snapshot) {
  const SyntheticHead head = load_synthetic_head(after.artifacts_dir(0), snapshot.num_classes());
  std::vector<Eigen::Index> rows;
  std::vector<ClassIndex> labels;
  for (const auto& e : after.labeled.entries()) {
    rows.push_back(snapshot.row(e.id));
    labels.push_back(e.label);
  }
  const RowMatrixd weights = fit_head(gather_rows(snapshot.knowledge_features, rows), labels, snapshot.num_classes(), head.ridge);
  ModelUpdate update;
  update.next = snapshot;
  update.next.word_probs = synthetic_word_probs(snapshot.knowledge_features, weights, head);
  update.next.validate();
  if (snapshot.oracle_labels && snapshot.size() > 0) {
    Eigen::Index hits = 0;
    for (Eigen::Index r = 0; r < snapshot.size(); ++r) {
      Eigen::Index arg = 0;
      update.next.word_probs.row(r).maxCoeff(&arg);
      if (arg == (*snapshot.oracle_labels)[static_cast<std::size_t>(r)]) ++hits;
    }
    update.accuracy = static_cast<double>(hits) / static_cast<double>(snapshot.size());
  }
  return update;
}

// Metrics of one selected batch against the unlabeled pool it came from.
// `pool_ids` is ascending; `selected_labels` follows `selected` order.
SelectionAnalysis batch_analysis(const PoolArtifacts& snapshot, const std::vector<SampleId>& pool_ids,
                                 const std::vector<SampleId>& selected, const std::vector<ClassIndex>& selected_labels,
                                 Eigen::Index support_k, Eigen::Index rep_k, double prior_floor) {
  std::vector<Eigen::Index> rows;
  for (auto id : pool_ids) rows.push_back(snapshot.row(id));
  const RowMatrixd probs = gather_rows(snapshot.word_probs, rows);
  const PoolCalibration cal = calibrate_pool(probs, support_k, pool_ids, prior_floor);

  std::vector<Eigen::Index> selected_rows;
  for (auto id : selected) {
    const auto it = std::lower_bound(pool_ids.begin(), pool_ids.end(), id);
    if (it == pool_ids.end() || *it != id) throw ValidationError("selected", "id " + std::to_string(id) + " not in the pool");
    selected_rows.push_back(static_cast<Eigen::Index>(it - pool_ids.begin()));
  }
  SelectionInputs in;
  in.selected_labels = selected_labels;
  in.num_classes = snapshot.num_classes();
  if (snapshot.oracle_labels) in.true_frequencies = class_frequencies(*snapshot.oracle_labels, snapshot.num_classes());
  in.pool_features = gather_rows(snapshot.encoder_features, rows);
  in.selected_rows = selected_rows;
  in.selected_dists.resize(static_cast<Eigen::Index>(selected_rows.size()), snapshot.num_classes());
  for (std::size_t i = 0; i < selected_rows.size(); ++i)
    in.selected_dists.row(static_cast<Eigen::Index>(i)) = cal.probs.row(selected_rows[i]);
  in.rep_k = rep_k;
  return analyze_selection(in);
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

fs::path ALState::artifacts_dir(int r) const { return run_dir / "artifacts" / std::to_string(r); }

bool operator==(const ALState& a, const ALState& b) {
  auto same_history = [](const std::vector<RoundRecord>& x, const std::vector<RoundRecord>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i].round != y[i].round || x[i].selected != y[i].selected || x[i].accuracy != y[i].accuracy) return false;
    return true;
  };
  return a.round == b.round && a.rounds_total == b.rounds_total && a.labeled == b.labeled && a.pool == b.pool &&
         same_history(a.history, b.history) && a.seed == b.seed && a.initial_size == b.initial_size &&
         a.input_digest == b.input_digest && config_to_json(a.config) == config_to_json(b.config);
}

json config_to_json(const StrategyConfig& c) {
  return {{"strategy", c.strategy},
          {"b", c.b},
          {"lambda", c.lambda},
          {"k", c.k},
          {"k_prime", c.k_prime},
          {"seed", c.seed},
          {"kmeans_tol", c.kmeans.tol},
          {"kmeans_max_iters", c.kmeans.max_iters},
          {"attn_scale", to_string(c.attn_scale)},
          {"prior_floor", c.prior_floor}};
}

StrategyConfig config_from_json(const json& j) {
  StrategyConfig c;
  try {
    c.strategy = j.at("strategy").get<std::string>();
    c.b = j.at("b").get<Eigen::Index>();
    c.lambda = j.at("lambda").get<double>();
    c.k = j.at("k").get<Eigen::Index>();
    c.k_prime = j.at("k_prime").get<Eigen::Index>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.kmeans.tol = j.at("kmeans_tol").get<double>();
    c.kmeans.max_iters = j.at("kmeans_max_iters").get<int>();
    c.attn_scale = attn_scale_from_string(j.at("attn_scale").get<std::string>());
    c.prior_floor = j.at("prior_floor").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError("config", e.what());
  }
  c.validate();
  return c;
}

json analysis_to_json(const SelectionAnalysis& a) {
  json out = {{"class_counts", a.class_counts},
              {"imb", metric_json(a.imb)},
              {"ldd", a.ldd ? json(*a.ldd) : json(nullptr)},
              {"div", metric_json(a.div)},
              {"rep", a.rep ? metric_json(*a.rep) : json(nullptr)},
              {"unc", a.unc}};
  return out;
}

std::map<SampleId, ClassIndex> OracleLabels::label(const PoolArtifacts& snapshot, const std::vector<SampleId>& ids, int) {
  std::map<SampleId, ClassIndex> out;
  for (const auto& [id, y] : oracle_label(snapshot, ids)) out[id] = y;
  return out;
}

std::map<SampleId, ClassIndex> ServiceLabels::label(const PoolArtifacts& snapshot, const std::vector<SampleId>& ids,
                                                    int round) {
  if (!snapshot.has_texts()) throw ValidationError("texts", "annotation needs sample texts");
  std::vector<std::pair<SampleId, std::string>> items;
  for (auto id : ids) items.emplace_back(id, snapshot.texts[static_cast<std::size_t>(snapshot.row(id))]);
  hub_.begin_batch(round, std::move(items));
  return hub_.wait_for_labels();
}

std::vector<std::pair<SampleId, ClassIndex>> oracle_label(const PoolArtifacts& a, const std::vector<SampleId>& ids) {
  if (!a.oracle_labels) throw ValidationError("oracle_labels", "artifacts carry no oracle labels");
  std::vector<std::pair<SampleId, ClassIndex>> out;
  out.reserve(ids.size());
  for (auto id : ids) out.emplace_back(id, (*a.oracle_labels)[static_cast<std::size_t>(a.row(id))]);
  return out;
}

ALState init_run(const RunOptions& o) {
  o.config.validate();
  if (o.rounds < 0) throw ValidationError("rounds", "must be non-negative");
  if (o.initial_size < 0) throw ValidationError("initial", "must be non-negative");
  const PoolArtifacts pool = load_artifacts(o.pool_path);
  if (o.oracle_mode && !pool.oracle_labels) throw ValidationError("oracle_labels", "oracle mode needs oracle labels");

  ALState s;
  s.run_dir = o.run_dir;
  s.rounds_total = o.rounds;
  s.seed = o.config.seed;
  s.config = o.config;
  s.input_digest = directory_digest(o.pool_path);

  std::vector<SampleId> ids = pool.sample_ids;
  std::sort(ids.begin(), ids.end());
  if (o.initial_entries) {
    for (const auto& [id, label] : *o.initial_entries) {
      ClassIndex y = label;
      if (y < 0) y = oracle_label(pool, {id}).front().second;
      s.labeled.add(id, y, Provenance::seed);
    }
    s.labeled.validate_against(pool);
  } else {
    if (!pool.oracle_labels) throw ValidationError("initial", "without oracle labels a seed-id list is required");
    if (o.initial_size > static_cast<Eigen::Index>(ids.size()))
      throw ValidationError("initial", "initial size exceeds the pool");
    Rng rng(o.config.seed, "init");
    std::vector<SampleId> shuffled = ids;
    for (std::size_t i = 0; i < static_cast<std::size_t>(o.initial_size); ++i)
      std::swap(shuffled[i], shuffled[i + static_cast<std::size_t>(rng.below(shuffled.size() - i))]);
    shuffled.resize(static_cast<std::size_t>(o.initial_size));
    for (const auto& [id, y] : oracle_label(pool, shuffled)) s.labeled.add(id, y, Provenance::seed);
  }
  s.initial_size = static_cast<Eigen::Index>(s.labeled.size());
  for (auto id : ids)
    if (!s.labeled.contains(id)) s.pool.push_back(id);

  const auto needed = static_cast<Eigen::Index>(o.rounds) * o.config.b;
  if (static_cast<Eigen::Index>(s.pool.size()) < needed)
    throw ValidationError("pool", "insufficient pool: " + std::to_string(s.pool.size()) + " unlabeled samples, " +
                                      std::to_string(o.rounds) + " rounds of b = " + std::to_string(o.config.b) +
                                      " need " + std::to_string(needed));

  fs::create_directories(s.run_dir);
  copy_directory(o.pool_path, s.artifacts_dir(0));

  ojson manifest;
  manifest["tool"] = "poolforge";
  manifest["version"] = POOLFORGE_VERSION;
  manifest["seed"] = s.seed;
  manifest["config"] = config_to_json(s.config);
  manifest["rounds"] = s.rounds_total;
  manifest["initial_size"] = s.initial_size;
  manifest["mode"] = o.oracle_mode ? "oracle" : "serve";
  manifest["input_digest"] = s.input_digest;
  if (o.record_time) manifest["started_at"] = utc_now();
  write_file_atomic(s.run_dir / "run_manifest.json", manifest.dump(2) + "\n");

  save_state(s);
  return s;
}

bool has_state(const fs::path& run_dir) { return fs::exists(run_dir / "state.json"); }

void save_state(const ALState& s) {
  ojson j;
  j["version"] = kStateVersion;
  j["round"] = s.round;
  j["rounds_total"] = s.rounds_total;
  j["seed"] = s.seed;
  j["initial_size"] = s.initial_size;
  j["input_digest"] = s.input_digest;
  j["config"] = config_to_json(s.config);
  ojson labeled = ojson::array();
  for (const auto& e : s.labeled.entries())
    labeled.push_back({{"id", e.id}, {"label", e.label}, {"provenance", to_string(e.provenance)}});
  j["labeled"] = labeled;
  j["pool"] = s.pool;
  ojson history = ojson::array();
  for (const auto& r : s.history)
    history.push_back({{"round", r.round}, {"selected", r.selected}, {"accuracy", r.accuracy ? ojson(*r.accuracy) : ojson(nullptr)}});
  j["history"] = history;
  write_file_atomic(s.run_dir / "state.json", j.dump(1) + "\n");
}

ALState load_state(const fs::path& run_dir) {
  ALState s;
  s.run_dir = run_dir;
  try {
    const json j = json::parse(read_file(run_dir / "state.json"));
    if (j.at("version").get<int>() != kStateVersion) throw ValidationError("state", "unsupported state version");
    s.round = j.at("round").get<int>();
    s.rounds_total = j.at("rounds_total").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.initial_size = j.at("initial_size").get<Eigen::Index>();
    s.input_digest = j.at("input_digest").get<std::string>();
    s.config = config_from_json(j.at("config"));
    for (const auto& e : j.at("labeled"))
      s.labeled.add(e.at("id").get<SampleId>(), e.at("label").get<ClassIndex>(),
                    provenance_from_string(e.at("provenance").get<std::string>()));
    s.pool = j.at("pool").get<std::vector<SampleId>>();
    for (const auto& r : j.at("history")) {
      RoundRecord rec;
      rec.round = r.at("round").get<int>();
      rec.selected = r.at("selected").get<std::vector<SampleId>>();
      if (!r.at("accuracy").is_null()) rec.accuracy = r.at("accuracy").get<double>();
      s.history.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw ValidationError("state", e.what());
  }
  return s;
}

ALState run_round(const ALState& state, const StrategyConfig& cfg, LabelProvider& labels, const AdapterHandle& adapter) {
  if (state.round >= state.rounds_total)
    throw ValidationError("round", "all " + std::to_string(state.rounds_total) + " rounds already completed");
  const int round = state.round;
  const PoolArtifacts snapshot = load_artifacts(state.artifacts_dir(round));
  state.labeled.validate_against(snapshot);
  if (static_cast<Eigen::Index>(state.pool.size()) < cfg.b)
    throw ValidationError("pool", state.pool.empty() ? "empty pool" : "pool smaller than b");

  const BatchReport report = select_batch(snapshot, state.labeled, cfg, round);
  const auto assigned = labels.label(snapshot, report.selected, round);
  for (auto id : report.selected)
    if (!assigned.count(id)) throw ValidationError("labels", "no label delivered for id " + std::to_string(id));
  for (const auto& [id, y] : assigned) {
    if (std::find(report.selected.begin(), report.selected.end(), id) == report.selected.end())
      throw ValidationError("labels", "label for id " + std::to_string(id) + " outside the batch");
    if (y < 0 || y >= snapshot.num_classes()) throw ValidationError("labels", "label out of range");
  }

  ALState next = state;
  for (auto id : report.selected) next.labeled.add(id, assigned.at(id), labels.provenance());
  next.pool.erase(std::remove_if(next.pool.begin(), next.pool.end(), [&](SampleId id) { return next.labeled.contains(id); }),
                  next.pool.end());

  ModelUpdate update = adapter.enabled() ? adapter_update(next, adapter, round) : synthetic_update(next, snapshot);
  for (auto id : snapshot.sample_ids)
    if (!update.next.contains(id)) throw AdapterError("updated artifacts dropped id " + std::to_string(id));

  std::vector<ClassIndex> selected_labels;
  for (auto id : report.selected) selected_labels.push_back(assigned.at(id));
  const SelectionAnalysis analysis =
      batch_analysis(snapshot, state.pool, report.selected, selected_labels, cfg.k, cfg.k_prime, cfg.prior_floor);

  const fs::path round_dir = state.run_dir / "rounds" / std::to_string(round);
  fs::create_directories(round_dir);
  write_file_atomic(round_dir / "batch_report.jsonl", batch_report_jsonl(report));

  ojson summary;
  summary["round"] = round;
  summary["strategy"] = report.strategy;
  summary["seed"] = report.seed;
  summary["b"] = cfg.b;
  summary["selected"] = report.selected;
  summary["labels"] = selected_labels;
  summary["floored_priors"] = report.floored_priors;
  summary["kmeans_inertia"] = report.inertia ? ojson(*report.inertia) : ojson(nullptr);
  summary["accuracy"] = update.accuracy ? ojson(*update.accuracy) : ojson(nullptr);
  summary["labeled_size"] = next.labeled.size();
  summary["pool_size"] = next.pool.size();
  summary["analysis"] = ojson::parse(analysis_to_json(analysis).dump());
  write_file_atomic(round_dir / "summary.json", summary.dump(2) + "\n");

  const fs::path next_dir = next.artifacts_dir(round + 1);
  fs::remove_all(next_dir);
  write_artifacts(update.next, next_dir);
  // Side files (fusion params, synthetic head) carry over unchanged.
  for (const auto& entry : fs::directory_iterator(state.artifacts_dir(round))) {
    const auto name = entry.path().filename();
    if (name == "fusion" || name == "synthetic_head.json")
      if (!fs::exists(next_dir / name)) fs::copy(entry.path(), next_dir / name, fs::copy_options::recursive);
  }

  next.history.push_back({round, report.selected, update.accuracy});
  next.round = round + 1;
  save_state(next);
  log_info("round " + std::to_string(round) + ": selected " + std::to_string(report.selected.size()) + ", labeled " +
           std::to_string(next.labeled.size()) + ", pool " + std::to_string(next.pool.size()));
  return next;
}

ALState run_loop(ALState state, const StrategyConfig& cfg, LabelProvider& labels, const AdapterHandle& adapter,
                 std::optional<int> max_rounds) {
  int done = 0;
  while (state.round < state.rounds_total && (!max_rounds || done < *max_rounds)) {
    state = run_round(state, cfg, labels, adapter);
    ++done;
  }
  return state;
}

std::vector<RoundMetrics> analyze_run(const fs::path& run_dir, const PoolArtifacts* reference, Eigen::Index rep_k) {
  if (!has_state(run_dir)) throw ValidationError("run", "no state.json in " + run_dir.string());
  const ALState state = load_state(run_dir);
  if (state.history.empty()) throw ValidationError("rounds", "run has no completed rounds");
  std::vector<RoundMetrics> out;
  for (const auto& rec : state.history) {
    const fs::path round_dir = run_dir / "rounds" / std::to_string(rec.round);
    if (!fs::exists(round_dir / "summary.json") || !fs::exists(round_dir / "batch_report.jsonl"))
      throw ValidationError("rounds", "missing round " + std::to_string(rec.round));
    json summary;
    std::vector<SampleId> pool_ids;
    try {
      summary = json::parse(read_file(round_dir / "summary.json"));
      const std::string lines = read_file(round_dir / "batch_report.jsonl");
      std::size_t pos = 0;
      while (pos < lines.size()) {
        const auto end = lines.find('\n', pos);
        pool_ids.push_back(json::parse(lines.substr(pos, end - pos)).at("id").get<SampleId>());
        pos = end == std::string::npos ? lines.size() : end + 1;
      }
    } catch (const json::exception& e) {
      throw ValidationError("rounds", "round " + std::to_string(rec.round) + ": " + e.what());
    }
    std::sort(pool_ids.begin(), pool_ids.end());
    const auto selected = summary.at("selected").get<std::vector<SampleId>>();
    const auto labels = summary.at("labels").get<std::vector<ClassIndex>>();

    std::optional<PoolArtifacts> own;
    if (!reference) own = load_artifacts(state.artifacts_dir(rec.round));
    const PoolArtifacts& space = reference ? *reference : *own;
    out.push_back({rec.round, summary.at("strategy").get<std::string>(),
                   batch_analysis(space, pool_ids, selected, labels, state.config.k, rep_k, state.config.prior_floor)});
  }
  return out;
}

double alignment_js(const PoolArtifacts& candidate, const PoolArtifacts& reference, Eigen::Index support_k) {
  if (candidate.num_classes() != reference.num_classes()) throw ValidationError("align", "class counts differ");
  std::vector<Eigen::Index> cand_rows;
  for (auto id : reference.sample_ids) cand_rows.push_back(candidate.row(id));
  std::vector<Eigen::Index> ref_rows(reference.sample_ids.size());
  std::iota(ref_rows.begin(), ref_rows.end(), Eigen::Index{0});
  const auto p = calibrate_pool(gather_rows(candidate.word_probs, cand_rows), support_k, reference.sample_ids);
  const auto q = calibrate_pool(gather_rows(reference.word_probs, ref_rows), support_k, reference.sample_ids);
  return mean_js_divergence(p.probs, q.probs);
}

}  // namespace poolforge
