#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"

#include "poolforge/calibration.hpp"
#include "poolforge/strategy.hpp"
#include "poolforge/synth.hpp"

#include "json.hpp"

using namespace poolforge;

namespace {

/// Pool with the given word_probs rows and knowledge/encoder features.
PoolArtifacts make_pool(const RowMatrixd& probs, const RowMatrixd& features) {
  PoolArtifacts a;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) a.sample_ids.push_back(i);
  a.word_probs = probs.cast<float>();
  a.knowledge_features = features.cast<float>();
  a.encoder_features = features.cast<float>();
  for (Eigen::Index j = 0; j < probs.cols(); ++j) a.label_words.push_back("w" + std::to_string(j));
  a.validate();
  return a;
}

StrategyConfig config(Eigen::Index b, const std::string& strategy = "promptal") {
  StrategyConfig c;
  c.strategy = strategy;
  c.b = b;
  c.k = 3;
  c.k_prime = 2;
  return c;
}

std::set<SampleId> as_set(const std::vector<SampleId>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST_CASE("joint score") {
  CHECK(joint_score(0.4, 7.0, 1.0) == 0.4);
  CHECK(joint_score(0.4, 7.0, 0.0) == 7.0);
  CHECK(joint_score(1.0, 2.0, 0.9) == doctest::Approx(1.1).epsilon(1e-15));
  CHECK_THROWS_AS(joint_score(1.0, 2.0, 1.5), ValidationError);
  CHECK_THROWS_AS(joint_score(1.0, 2.0, -0.1), ValidationError);
}

TEST_CASE("config validation") {
  auto c = config(4);
  CHECK_NOTHROW(c.validate());
  c.lambda = 2;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = config(0);
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("promptal selects the whole pool when it has exactly b distinct rows") {
  Rng rng(2);
  RowMatrixd probs(7, 3), feats(7, 2);
  for (Eigen::Index i = 0; i < probs.size(); ++i) probs.data()[i] = 0.1 + 0.8 * rng.uniform();
  for (Eigen::Index i = 0; i < feats.size(); ++i) feats.data()[i] = rng.normal();
  const auto pool = make_pool(probs, feats);
  LabeledSet labeled;
  labeled.add(0, 1, Provenance::seed);
  labeled.add(1, 0, Provenance::seed);
  const auto r = select_promptal(pool, labeled, config(5));
  CHECK(as_set(r.selected) == std::set<SampleId>{2, 3, 4, 5, 6});
}

TEST_CASE("promptal with lambda = 0 picks the point farthest from the labeled origin per cluster") {
  const Eigen::Index n = 41;
  RowMatrixd probs = RowMatrixd::Constant(n, 2, 0.5);
  RowMatrixd feats(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) feats.row(i) << static_cast<double>(i) * 0.25, 0.0;
  const auto pool = make_pool(probs, feats);
  LabeledSet labeled;
  labeled.add(0, 0, Provenance::seed);
  auto cfg = config(4);
  cfg.lambda = 0.0;
  cfg.k_prime = 1;
  const auto r = select_promptal(pool, labeled, cfg);
  std::map<Eigen::Index, std::pair<double, SampleId>> best;
  for (const auto& rec : r.records) {
    const double dist = std::fabs(feats(rec.id, 0));
    auto it = best.find(*rec.cluster);
    if (it == best.end() || dist > it->second.first) best[*rec.cluster] = {dist, rec.id};
  }
  std::set<SampleId> want;
  for (const auto& [cl, v] : best) want.insert(v.second);
  CHECK(as_set(r.selected) == want);
  CHECK(r.selected.size() == 4);
}

TEST_CASE("promptal scores every unlabeled sample") {
  const auto pool = testing::random_pool(60, 4, 3, 5);
  LabeledSet labeled;
  for (SampleId id : {3, 17, 40}) labeled.add(id, 0, Provenance::seed);
  auto cfg = config(6);
  cfg.lambda = 0.7;
  const auto r = select_promptal(pool, labeled, cfg);
  REQUIRE(r.records.size() == 57);
  // oracle: brute-force U, D, S from scratch
  std::vector<Eigen::Index> rows;
  std::vector<SampleId> ids;
  for (Eigen::Index i = 0; i < 60; ++i)
    if (!labeled.contains(i)) {
      rows.push_back(i);
      ids.push_back(i);
    }
  const RowMatrixd probs = gather_rows(pool.word_probs, rows);
  const auto cal = calibrate_pool(probs, cfg.k, ids);
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    const auto& rec = r.records[i];
    CHECK(rec.id == ids[i]);
    CHECK(std::fabs(*rec.u - cal.uncertainty(static_cast<Eigen::Index>(i))) < 1e-12);
    std::vector<long double> ds;
    for (SampleId l : {3, 17, 40}) {
      std::vector<long double> a, b;
      for (Eigen::Index j = 0; j < 4; ++j) {
        a.push_back(pool.knowledge_features(rec.id, j));
        b.push_back(pool.knowledge_features(l, j));
      }
      ds.push_back(oracle::dist(a, b));
    }
    std::sort(ds.begin(), ds.end());
    const double d = static_cast<double>((ds[0] + ds[1]) / 2);
    CHECK(std::fabs(*rec.d - d) < 1e-9);
    CHECK(std::fabs(*rec.s - (0.7 * *rec.u + 0.3 * d)) < 1e-9);
  }
}

TEST_CASE("promptal on the synthetic pool picks one distinct unlabeled id per cluster") {
  SynthOptions o;
  o.seed = 7;
  const auto synth = generate_synthetic_pool(o);
  LabeledSet labeled;
  for (SampleId id = 0; id < 32; ++id) labeled.add(id * 50, (*synth.artifacts.oracle_labels)[static_cast<std::size_t>(id * 50)], Provenance::seed);
  auto cfg = config(8);
  cfg.k = 100;
  cfg.k_prime = 10;
  const auto r = select_promptal(synth.artifacts, labeled, cfg);
  CHECK(r.selected.size() == 8);
  CHECK(as_set(r.selected).size() == 8);
  std::set<Eigen::Index> clusters;
  std::map<Eigen::Index, double> best;
  for (const auto& rec : r.records) best[*rec.cluster] = std::max(best[*rec.cluster], *rec.s);
  for (const auto& rec : r.records)
    if (rec.selected) {
      CHECK_FALSE(labeled.contains(rec.id));
      clusters.insert(*rec.cluster);
      CHECK(*rec.s == best[*rec.cluster]);
    }
  CHECK(clusters.size() == 8);
}

TEST_CASE("promptal errors") {
  const auto pool = testing::random_pool(10, 2, 2, 1);
  LabeledSet labeled;
  labeled.add(0, 0, Provenance::seed);
  CHECK_THROWS_AS(select_promptal(pool, labeled, config(10)), ValidationError);
  CHECK_THROWS_AS(select_promptal(pool, LabeledSet{}, config(2)), ValidationError);
  const auto flat = make_pool(RowMatrixd::Constant(10, 2, 0.5), RowMatrixd::Zero(10, 2));
  CHECK_THROWS_AS(select_promptal(flat, labeled, config(3)), DegenerateError);
}

TEST_CASE("entropy selection") {
  SUBCASE("uniform sample wins") {
    RowMatrixd probs(4, 2);
    probs << 1, 0, 0.5, 0.5, 0, 1, 1, 0;
    const auto r = select_entropy(make_pool(probs, RowMatrixd::Random(4, 2)), {}, config(1, "entropy"));
    CHECK(r.selected == std::vector<SampleId>{1});
  }
  SUBCASE("identical distributions fall back to lowest ids") {
    const auto r = select_entropy(make_pool(RowMatrixd::Constant(6, 3, 0.3), RowMatrixd::Random(6, 2)), {},
                                  config(3, "entropy"));
    CHECK(r.selected == std::vector<SampleId>{0, 1, 2});
  }
  SUBCASE("matches a full sort") {
    const auto pool = testing::random_pool(50, 2, 4, 9);
    LabeledSet labeled;
    labeled.add(4, 1, Provenance::seed);
    auto cfg = config(7, "entropy");
    const auto r = select_entropy(pool, labeled, cfg);
    std::vector<std::pair<double, SampleId>> all;
    for (const auto& rec : r.records) all.push_back({-*rec.u, rec.id});
    std::sort(all.begin(), all.end());
    std::vector<SampleId> want;
    for (int i = 0; i < 7; ++i) want.push_back(all[static_cast<std::size_t>(i)].second);
    CHECK(r.selected == want);
  }
}

TEST_CASE("least-confidence selection") {
  SUBCASE("uniform sample wins") {
    RowMatrixd probs(3, 3);
    probs << 1, 0, 0, 0.3, 0.3, 0.3, 0, 0, 1;
    const auto r = select_least_confidence(make_pool(probs, RowMatrixd::Random(3, 2)), {}, config(1, "lc"));
    CHECK(r.selected == std::vector<SampleId>{1});
  }
  SUBCASE("max-probabilities 0.9, 0.5, 0.7") {
    RowMatrixd probs(3, 2);
    probs << 0.9, 0.1, 0.5, 0.5, 0.3, 0.7;
    const auto r = select_least_confidence(make_pool(probs, RowMatrixd::Random(3, 2)), {}, config(2, "lc"));
    CHECK(as_set(r.selected) == std::set<SampleId>{1, 2});
  }
  SUBCASE("matches a sort on calibrated max probability") {
    const auto pool = testing::random_pool(40, 2, 3, 13);
    auto cfg = config(5, "lc");
    const auto r = select_least_confidence(pool, {}, cfg);
    const auto cal = calibrate_pool(pool.word_probs.cast<double>(), cfg.k);
    std::vector<std::pair<double, SampleId>> all;
    for (Eigen::Index i = 0; i < 40; ++i) all.push_back({cal.probs.row(i).maxCoeff(), i});
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<SampleId> want;
    for (int i = 0; i < 5; ++i) want.push_back(all[static_cast<std::size_t>(i)].second);
    CHECK(r.selected == want);
  }
}

TEST_CASE("bertkm selection") {
  SUBCASE("b = N distinct normalized rows") {
    RowMatrixd f(4, 2);
    f << 1, 0, 0, 1, -1, 0, 0, -1;
    const auto r = select_bertkm(make_pool(RowMatrixd::Constant(4, 2, 0.5), f), {}, config(4, "bertkm"));
    CHECK(as_set(r.selected) == std::set<SampleId>{0, 1, 2, 3});
  }
  SUBCASE("two separated groups give one pick each") {
    const auto m = testing::gaussian_mixture(2, 20, 4, 30.0, 1.0, 3);
    const auto pool = make_pool(RowMatrixd::Constant(40, 2, 0.5), m.points);
    const auto r = select_bertkm(pool, {}, config(2, "bertkm"));
    REQUIRE(r.selected.size() == 2);
    CHECK(m.truth[static_cast<std::size_t>(r.selected[0])] != m.truth[static_cast<std::size_t>(r.selected[1])]);
  }
  SUBCASE("rows collapsing under normalization") {
    RowMatrixd f(4, 2);
    f << 1, 0, 2, 0, 4, 0, 0, 5;
    CHECK_THROWS_AS(select_bertkm(make_pool(RowMatrixd::Constant(4, 2, 0.5), f), {}, config(3, "bertkm")),
                    DegenerateError);
  }
  SUBCASE("zero-norm row") {
    RowMatrixd f(3, 2);
    f << 1, 1, 0, 0, 3, 1;
    CHECK_THROWS_AS(select_bertkm(make_pool(RowMatrixd::Constant(3, 2, 0.5), f), {}, config(2, "bertkm")),
                    ValidationError);
  }
}

TEST_CASE("random selection") {
  const auto pool = testing::random_pool(12, 2, 2, 4);
  SUBCASE("b = N") { CHECK(as_set(select_random(pool, {}, config(12, "random")).selected).size() == 12); }
  SUBCASE("deterministic for a seed") {
    auto cfg = config(5, "random");
    cfg.seed = 99;
    CHECK(select_random(pool, {}, cfg, 2).selected == select_random(pool, {}, cfg, 2).selected);
  }
  SUBCASE("uniform over samples") {
    const auto four = testing::random_pool(4, 2, 2, 5);
    std::array<int, 4> hits{};
    auto cfg = config(1, "random");
    for (int i = 0; i < 10000; ++i) {
      cfg.seed = static_cast<std::uint64_t>(i);
      ++hits[static_cast<std::size_t>(select_random(four, {}, cfg).selected[0])];
    }
    const double sigma = std::sqrt(10000 * 0.25 * 0.75);
    for (int h : hits) CHECK(std::fabs(h - 2500.0) < 3 * sigma);
  }
  SUBCASE("skips labeled ids") {
    LabeledSet labeled;
    for (SampleId id = 0; id < 10; ++id) labeled.add(id, 0, Provenance::seed);
    CHECK(as_set(select_random(pool, labeled, config(2, "random")).selected) == std::set<SampleId>{10, 11});
  }
}

TEST_CASE("every strategy rejects a pool smaller than b") {
  const auto pool = testing::random_pool(5, 2, 2, 1);
  LabeledSet labeled;
  labeled.add(0, 0, Provenance::seed);
  for (const auto& name : strategy_names()) {
    CAPTURE(name);
    CHECK_THROWS_AS(select_batch(pool, labeled, config(5, name)), ValidationError);
  }
}

TEST_CASE("batch report lines") {
  const auto pool = testing::random_pool(20, 2, 2, 2);
  LabeledSet labeled;
  labeled.add(1, 0, Provenance::seed);
  const auto r = select_promptal(pool, labeled, config(3));
  const auto text = batch_report_jsonl(r);
  std::istringstream in(text);
  std::string line;
  int count = 0, selected = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("u"));
    CHECK(j.contains("cluster"));
    selected += j.at("selected").get<bool>() ? 1 : 0;
    ++count;
  }
  CHECK(count == 19);
  CHECK(selected == 3);
  CHECK(text.rfind("{\"id\":0,", 0) == 0);
}

TEST_CASE("default configuration") {
  const StrategyConfig c;
  CHECK(c.strategy == "promptal");
  CHECK(c.b == 32);
  CHECK(c.k == 100);
  CHECK(c.k_prime == 10);
  CHECK(c.lambda == 0.9);
  CHECK(c.kmeans.max_iters == 100);
  CHECK(c.kmeans.tol == 1e-4);
}
