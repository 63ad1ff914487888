#include "poolforge/synth.hpp"

#include "poolforge/rng.hpp"
#include "poolforge/util.hpp"

#include "json.hpp"

#include <numeric>

namespace fs = std::filesystem;
using nlohmann::json;

namespace poolforge {

SyntheticHead SyntheticHead::defaults(Eigen::Index num_classes) {
  SyntheticHead h;
  h.word_bias.resize(num_classes);
  for (Eigen::Index j = 0; j < num_classes; ++j) h.word_bias(j) = -0.5 * static_cast<double>(j);
  return h;
}

RowMatrixd fit_head(const RowMatrixd& features, std::span<const ClassIndex> labels, Eigen::Index num_classes,
                    double ridge) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ValidationError("labels", "length != feature rows");
  RowMatrixd targets = RowMatrixd::Zero(features.rows(), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) targets(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  const Eigen::MatrixXd gram = features.transpose() * features +
                               ridge * Eigen::MatrixXd::Identity(features.cols(), features.cols());
  return gram.ldlt().solve(features.transpose() * targets);
}

RowMatrixf synthetic_word_probs(const RowMatrixf& knowledge, const RowMatrixd& weights, const SyntheticHead& head) {
  const RowMatrixd scaled = head.sharpness * weights;
  RowMatrixf out(knowledge.rows(), weights.cols());
  parallel_for(static_cast<std::size_t>(knowledge.rows()), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    // Template reduced to its mask row: the head only reads the last row.
    const RowMatrixd tmpl = knowledge.row(r).cast<double>();
    Vectord p = synthetic_forward<double>(tmpl, scaled);
    p.array() *= head.word_bias.array().exp();
    p /= p.sum();
    out.row(r) = p.transpose().cast<float>();
  });
  return out;
}

void SynthOptions::validate() const {
  if (classes < 2) throw ValidationError("classes", "need at least 2 classes");
  if (per_class < 1) throw ValidationError("per_class", "need at least 1 sample per class");
  if (dim < 1) throw ValidationError("dim", "must be positive");
  if (!(spread > 0.0)) throw ValidationError("spread", "must be positive");
  if (!(separation >= 0.0)) throw ValidationError("separation", "must be non-negative");
  if (warm_start_per_class < 1 || warm_start_per_class > per_class)
    throw ValidationError("warm_start_per_class", "must lie in [1, per_class]");
}

SyntheticPool generate_synthetic_pool(const SynthOptions& o) {
  o.validate();
  Rng rng(o.seed, "synth");
  const auto c = o.classes;
  const auto d = o.dim;
  const auto n = c * o.per_class;

  // Component means: axis-aligned when they fit, random unit directions otherwise.
  RowMatrixd means = RowMatrixd::Zero(c, d);
  for (Eigen::Index k = 0; k < c; ++k) {
    if (c <= d) {
      means(k, k) = 1.0;
    } else {
      for (Eigen::Index j = 0; j < d; ++j) means(k, j) = rng.normal();
      means.row(k).normalize();
    }
  }
  means *= o.separation * o.spread;

  SyntheticPool out;
  out.components.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out.components[static_cast<std::size_t>(i)] = static_cast<ClassIndex>(i / o.per_class);
  for (std::size_t i = out.components.size(); i > 1; --i)
    std::swap(out.components[i - 1], out.components[static_cast<std::size_t>(rng.below(i))]);

  RowMatrixf encoder(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      encoder(i, j) = static_cast<float>(means(out.components[static_cast<std::size_t>(i)], j) + o.spread * rng.normal());

  FusionDims dims;
  dims.dim = d;
  dims.hidden = std::max<Eigen::Index>(4, d / 2);
  dims.heads = d % 4 == 0 ? 4 : 1;
  out.fusion = random_fusion_params(dims, rng, 0.1);

  RowMatrixf knowledge(n, d);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    const RowVector<double> e = encoder.row(r).cast<double>();
    const auto prompt = fuse(out.fusion, e);
    knowledge.row(r) = (e + prompt.rows.colwise().mean()).cast<float>();
  });

  // Warm-start head from the first few rows of each component.
  std::vector<Eigen::Index> warm_rows;
  std::vector<ClassIndex> warm_labels;
  std::vector<Eigen::Index> taken(static_cast<std::size_t>(c), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto y = out.components[static_cast<std::size_t>(i)];
    if (taken[static_cast<std::size_t>(y)] >= o.warm_start_per_class) continue;
    ++taken[static_cast<std::size_t>(y)];
    warm_rows.push_back(i);
    warm_labels.push_back(y);
  }
  out.head = SyntheticHead::defaults(c);
  const RowMatrixd weights = fit_head(gather_rows(knowledge, warm_rows), warm_labels, c, out.head.ridge);

  auto& a = out.artifacts;
  a.sample_ids.resize(static_cast<std::size_t>(n));
  std::iota(a.sample_ids.begin(), a.sample_ids.end(), SampleId{0});
  a.encoder_features = std::move(encoder);
  a.knowledge_features = std::move(knowledge);
  a.word_probs = synthetic_word_probs(a.knowledge_features, weights, out.head);
  for (Eigen::Index k = 0; k < c; ++k) a.label_words.push_back("label" + std::to_string(k));
  a.oracle_labels = out.components;
  if (o.texts)
    for (Eigen::Index i = 0; i < n; ++i) a.texts.push_back("synthetic sample " + std::to_string(i));
  a.validate();
  return out;
}

void write_synthetic_pool(const SyntheticPool& pool, const fs::path& dir) {
  write_artifacts(pool.artifacts, dir);
  write_fusion_params(pool.fusion, dir / "fusion");
  json head = {{"sharpness", pool.head.sharpness},
               {"ridge", pool.head.ridge},
               {"word_bias", std::vector<double>(pool.head.word_bias.begin(), pool.head.word_bias.end())}};
  write_file_atomic(dir / "synthetic_head.json", head.dump(2) + "\n");
}

SyntheticHead load_synthetic_head(const fs::path& dir, Eigen::Index num_classes) {
  SyntheticHead h = SyntheticHead::defaults(num_classes);
  const fs::path file = dir / "synthetic_head.json";
  if (!fs::exists(file)) return h;
  try {
    const json j = json::parse(read_file(file));
    h.sharpness = j.at("sharpness").get<double>();
    h.ridge = j.at("ridge").get<double>();
    const auto bias = j.at("word_bias").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(bias.size()) != num_classes)
      throw ValidationError("synthetic_head.word_bias", "length != c");
    h.word_bias = Eigen::Map<const Vectord>(bias.data(), num_classes);
  } catch (const json::exception& e) {
    throw ValidationError("synthetic_head", e.what());
  }
  return h;
}

}  // namespace poolforge
