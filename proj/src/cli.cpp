#include "poolforge/cli.hpp"

#include "poolforge/annotation_service.hpp"
#include "poolforge/orchestrator.hpp"
#include "poolforge/synth.hpp"
#include "poolforge/util.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace poolforge {

namespace {

struct StrategyFlags {
  StrategyConfig cfg;
  std::string attn_scale = "head_d";

  void add_to(CLI::App& app, bool with_strategy = true) {
    if (with_strategy)
      app.add_option("--strategy", cfg.strategy, "Query strategy")
          ->check(CLI::IsMember(strategy_names()))
          ->capture_default_str();
    app.add_option("--b", cfg.b, "Batch size per round")->capture_default_str();
    app.add_option("--lambda", cfg.lambda, "Weight of uncertainty in the joint score")->capture_default_str();
    app.add_option("--k", cfg.k, "Support-set size per label")->capture_default_str();
    app.add_option("--k-prime", cfg.k_prime, "Labeled neighbors for local diversity")->capture_default_str();
    app.add_option("--seed", cfg.seed, "Master seed")->capture_default_str();
    app.add_option("--kmeans-tol", cfg.kmeans.tol, "Lloyd stop threshold on centroid movement")->capture_default_str();
    app.add_option("--kmeans-max-iters", cfg.kmeans.max_iters, "Lloyd iteration cap")->capture_default_str();
    app.add_option("--attn-scale", attn_scale, "Attention logit divisor: head_d or full_d")
        ->check(CLI::IsMember({"head_d", "full_d"}))
        ->capture_default_str();
    app.add_option("--prior-floor", cfg.prior_floor, "Floor applied to prior entries")->capture_default_str();
  }

  StrategyConfig resolve() const {
    StrategyConfig out = cfg;
    out.attn_scale = attn_scale_from_string(attn_scale);
    out.validate();
    return out;
  }
};

std::string metric_text(const Metric& m) {
  if (!m) return "overflow";
  std::ostringstream ss;
  ss << std::setprecision(6) << *m;
  return ss.str();
}

std::string optional_text(const std::optional<double>& v) { return v ? metric_text(*v) : "NA"; }

// Seed labels from a JSON file: [id, ...] or [{"id": .., "label": ..}, ...].
std::vector<std::pair<SampleId, ClassIndex>> read_seed_entries(const fs::path& file) {
  std::vector<std::pair<SampleId, ClassIndex>> out;
  try {
    const json j = json::parse(read_file(file));
    for (const auto& item : j) {
      if (item.is_number_integer())
        out.emplace_back(item.get<SampleId>(), -1);
      else
        out.emplace_back(item.at("id").get<SampleId>(), item.value("label", ClassIndex{-1}));
    }
  } catch (const json::exception& e) {
    throw ValidationError(file.string(), e.what());
  }
  return out;
}

int cmd_validate(const fs::path& path) {
  const PoolArtifacts a = load_artifacts(path);
  std::cout << "ok: n=" << a.size() << " d=" << a.feature_dim() << " c=" << a.num_classes()
            << " texts=" << (a.texts.empty() ? "no" : "yes") << " oracle_labels=" << (a.oracle_labels ? "yes" : "no")
            << "\n";
  if (fs::exists(path / "fusion")) {
    const auto f = load_fusion_params(path / "fusion");
    std::cout << "fusion: m=" << f.task_rows() << " n=" << f.sample_rows() << " d=" << f.dim() << " l=" << f.hidden()
              << " heads=" << f.heads << "\n";
  }
  return 0;
}

int cmd_synth(const SynthOptions& o, const fs::path& out) {
  const SyntheticPool pool = generate_synthetic_pool(o);
  write_synthetic_pool(pool, out);
  std::cout << "wrote " << pool.artifacts.size() << " samples to " << out.string() << "\n";
  return 0;
}

int cmd_query(const fs::path& pool_path, const StrategyConfig& cfg, Eigen::Index initial, const std::string& labeled_file,
              int round, const fs::path& out) {
  const PoolArtifacts pool = load_artifacts(pool_path);
  LabeledSet labeled;
  if (!labeled_file.empty()) {
    for (const auto& [id, y] : read_seed_entries(labeled_file))
      labeled.add(id, y >= 0 ? y : oracle_label(pool, {id}).front().second, Provenance::seed);
    labeled.validate_against(pool);
  } else if (initial > 0) {
    if (!pool.oracle_labels) throw ValidationError("initial", "random seed labels need oracle labels; pass --labeled");
    std::vector<SampleId> ids = pool.sample_ids;
    std::sort(ids.begin(), ids.end());
    if (initial > static_cast<Eigen::Index>(ids.size())) throw ValidationError("initial", "exceeds pool size");
    Rng rng(cfg.seed, "init");
    for (std::size_t i = 0; i < static_cast<std::size_t>(initial); ++i)
      std::swap(ids[i], ids[i + static_cast<std::size_t>(rng.below(ids.size() - i))]);
    ids.resize(static_cast<std::size_t>(initial));
    for (const auto& [id, y] : oracle_label(pool, ids)) labeled.add(id, y, Provenance::seed);
  }
  const BatchReport report = select_batch(pool, labeled, cfg, round);
  fs::create_directories(out);
  write_file_atomic(out / "batch_report.jsonl", batch_report_jsonl(report));
  nlohmann::ordered_json summary;
  summary["round"] = round;
  summary["strategy"] = report.strategy;
  summary["seed"] = report.seed;
  summary["b"] = cfg.b;
  summary["selected"] = report.selected;
  summary["labeled"] = labeled.ids();
  summary["floored_priors"] = report.floored_priors;
  summary["kmeans_inertia"] = report.inertia ? nlohmann::ordered_json(*report.inertia) : nlohmann::ordered_json(nullptr);
  summary["config"] = nlohmann::ordered_json::parse(config_to_json(cfg).dump());
  write_file_atomic(out / "summary.json", summary.dump(2) + "\n");
  for (auto id : report.selected) std::cout << id << "\n";
  return 0;
}

struct LoopFlags {
  fs::path pool;
  fs::path out;
  int rounds = 10;
  Eigen::Index initial = 32;
  std::string initial_ids;
  std::string mode = "oracle";
  std::string adapter_cmd;
  std::string exchange;
  int adapter_timeout = 3600;
  std::string bind = "127.0.0.1:8765";
  int stop_after = -1;
  bool record_time = false;
};

int cmd_loop(const LoopFlags& f, const StrategyConfig& flag_cfg) {
  const bool serve = f.mode == "serve";
  AdapterHandle adapter{f.adapter_cmd, f.exchange, std::chrono::seconds(f.adapter_timeout)};

  ALState state;
  if (has_state(f.out)) {
    state = load_state(f.out);
    if (!f.pool.empty() && directory_digest(f.pool) != state.input_digest)
      throw ValidationError("pool", "run directory was started from different artifacts");
    log_info("resuming " + f.out.string() + " at round " + std::to_string(state.round));
  } else {
    if (f.pool.empty()) throw ValidationError("pool", "--pool is required to start a run");
    RunOptions o;
    o.pool_path = f.pool;
    o.run_dir = f.out;
    o.config = flag_cfg;
    o.rounds = f.rounds;
    o.initial_size = f.initial;
    o.oracle_mode = !serve;
    o.record_time = f.record_time;
    if (!f.initial_ids.empty()) o.initial_entries = read_seed_entries(f.initial_ids);
    if (serve) {
      const PoolArtifacts pool = load_artifacts(f.pool);
      if (!pool.has_texts()) throw ValidationError("texts", "serve mode needs texts.jsonl in the artifacts");
    }
    state = init_run(o);
  }
  const StrategyConfig cfg = state.config;
  const std::optional<int> limit = f.stop_after >= 0 ? std::optional<int>(f.stop_after) : std::nullopt;

  if (serve) {
    const PoolArtifacts snapshot = load_artifacts(state.artifacts_dir(state.round));
    if (!snapshot.has_texts()) throw ValidationError("texts", "serve mode needs texts.jsonl in the artifacts");
    AnnotationHub hub(snapshot.label_words);
    AnnotationService service(hub);
    const auto [host, port] = parse_bind_address(f.bind);
    service.start(host, port);
    std::cout << "annotation API on http://" << host << ":" << service.port() << "/api/status\n" << std::flush;
    ServiceLabels labels(hub);
    state = run_loop(state, cfg, labels, adapter, limit);
    hub.finish();
    service.stop();
  } else {
    OracleLabels labels;
    state = run_loop(state, cfg, labels, adapter, limit);
  }
  std::cout << "completed " << state.round << "/" << state.rounds_total << " rounds; labeled " << state.labeled.size()
            << ", pool " << state.pool.size() << "\n";
  return 0;
}

int cmd_analyze(const fs::path& run_dir, const fs::path& reference_path, const std::vector<std::string>& align,
                Eigen::Index rep_k, const fs::path& out) {
  std::optional<PoolArtifacts> reference;
  if (!reference_path.empty()) reference = load_artifacts(reference_path);
  const auto rows = analyze_run(run_dir, reference ? &*reference : nullptr, rep_k);

  std::ostringstream table;
  table << "round\tstrategy\tselected\timb\tldd\tdiv\trep\tunc\n";
  for (const auto& r : rows) {
    Eigen::Index total = 0;
    for (auto c : r.analysis.class_counts) total += c;
    table << r.round << '\t' << r.strategy << '\t' << total << '\t' << metric_text(r.analysis.imb) << '\t'
          << optional_text(r.analysis.ldd) << '\t' << metric_text(r.analysis.div) << '\t'
          << (r.analysis.rep ? metric_text(*r.analysis.rep) : "NA") << '\t' << metric_text(r.analysis.unc) << '\n';
  }
  const fs::path table_path = out.empty() ? run_dir / "analysis.tsv" : out;
  write_file_atomic(table_path, table.str());
  std::cout << table.str();

  for (const auto& r : rows) {
    const fs::path summary_path = run_dir / "rounds" / std::to_string(r.round) / "summary.json";
    auto summary = nlohmann::ordered_json::parse(read_file(summary_path));
    summary[reference ? "reference_analysis" : "analysis"] = nlohmann::ordered_json::parse(analysis_to_json(r.analysis).dump());
    write_file_atomic(summary_path, summary.dump(2) + "\n");
  }

  if (!align.empty()) {
    if (!reference) throw ValidationError("align", "--align needs --reference");
    const StrategyConfig cfg = load_state(run_dir).config;
    std::ostringstream js;
    js << "artifacts\tmean_js\n";
    for (const auto& path : align)
      js << path << '\t' << std::setprecision(6) << alignment_js(load_artifacts(path), *reference, cfg.k) << '\n';
    write_file_atomic(table_path.parent_path() / "alignment.tsv", js.str());
    std::cout << js.str();
  }
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"poolforge: pool-based few-shot active learning"};
  app.set_version_flag("--version", std::string(POOLFORGE_VERSION));
  app.set_config("--config", "", "TOML/INI file with option defaults (flags override it)");
  app.require_subcommand(1);

  fs::path validate_path;
  auto* validate = app.add_subcommand("validate", "Check an artifact directory");
  validate->add_option("path,--pool", validate_path, "Artifact directory")->required();

  SynthOptions synth_opts;
  fs::path synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic Gaussian-mixture pool");
  synth->add_option("--out", synth_out, "Output artifact directory")->required();
  synth->add_option("--seed", synth_opts.seed)->capture_default_str();
  synth->add_option("--classes", synth_opts.classes)->capture_default_str();
  synth->add_option("--per-class", synth_opts.per_class)->capture_default_str();
  synth->add_option("--dim", synth_opts.dim)->capture_default_str();
  synth->add_option("--separation", synth_opts.separation, "Component offset in units of spread")->capture_default_str();
  synth->add_option("--spread", synth_opts.spread)->capture_default_str();
  bool no_texts = false;
  synth->add_flag("--no-texts", no_texts, "Omit texts.jsonl");

  StrategyFlags query_flags;
  fs::path query_pool, query_out = "query_out";
  Eigen::Index query_initial = 32;
  std::string query_labeled;
  int query_round = 0;
  auto* query = app.add_subcommand("query", "Select one batch without changing any state");
  query->add_option("--pool", query_pool, "Artifact directory")->required();
  query_flags.add_to(*query);
  query->add_option("--initial", query_initial, "Random seed labels drawn from the oracle")->capture_default_str();
  query->add_option("--labeled", query_labeled, "JSON list of labeled ids or {id, label}");
  query->add_option("--round", query_round, "Round index used for seed streams")->capture_default_str();
  query->add_option("--out", query_out, "Output directory")->capture_default_str();

  StrategyFlags loop_flags;
  loop_flags.cfg.b = 32;
  LoopFlags lf;
  auto* loop = app.add_subcommand("loop", "Run the active-learning loop");
  loop->add_option("--pool", lf.pool, "Artifact directory (omit to resume)");
  loop->add_option("--out", lf.out, "Run directory")->required();
  loop_flags.add_to(*loop);
  loop->add_option("--rounds", lf.rounds)->capture_default_str();
  loop->add_option("--initial", lf.initial)->capture_default_str();
  loop->add_option("--initial-ids", lf.initial_ids, "JSON list of seed ids or {id, label}");
  loop->add_option("--mode", lf.mode)->check(CLI::IsMember({"oracle", "serve"}))->capture_default_str();
  loop->add_option("--adapter-cmd", lf.adapter_cmd, "Model adapter command; empty uses the synthetic backend");
  loop->add_option("--adapter-exchange", lf.exchange, "Adapter exchange directory");
  loop->add_option("--adapter-timeout", lf.adapter_timeout, "Seconds")->capture_default_str();
  loop->add_option("--bind", lf.bind, "Annotation API address (serve mode)")->capture_default_str();
  loop->add_option("--stop-after", lf.stop_after, "Run at most this many rounds in this invocation");
  loop->add_flag("--record-time", lf.record_time, "Record wall-clock start time in run_manifest.json");

  fs::path analyze_run_dir, analyze_reference, analyze_out;
  std::vector<std::string> analyze_align;
  Eigen::Index rep_k = 10;
  auto* analyze = app.add_subcommand("analyze", "Selected-sample metrics and distribution alignment");
  analyze->add_option("--run", analyze_run_dir, "Run directory")->required();
  analyze->add_option("--reference", analyze_reference, "Reference artifacts defining the metric space");
  analyze->add_option("--align", analyze_align, "Artifacts to compare against the reference (JS divergence)");
  analyze->add_option("--rep-k", rep_k, "Neighbors for representativeness")->capture_default_str();
  analyze->add_option("--out", analyze_out, "Table path (default <run>/analysis.tsv)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*validate) return cmd_validate(validate_path);
    if (*synth) {
      synth_opts.texts = !no_texts;
      return cmd_synth(synth_opts, synth_out);
    }
    if (*query) return cmd_query(query_pool, query_flags.resolve(), query_initial, query_labeled, query_round, query_out);
    if (*loop) return cmd_loop(lf, loop_flags.resolve());
    if (*analyze) return cmd_analyze(analyze_run_dir, analyze_reference, analyze_align, rep_k, analyze_out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace poolforge
