#pragma once

#include "poolforge/artifact_store.hpp"
#include "poolforge/prompt_fusion.hpp"

#include <filesystem>
#include <optional>
#include <span>

namespace poolforge {

/// Toy masked-LM standing in for the real model at desk scale: label-word
/// probabilities are softmax(sharpness * h W + bias) where W is a ridge
/// least-squares fit of one-hot labels on knowledge features and `bias`
/// models the label-word frequency skew a pretrained model carries.
struct SyntheticHead {
  double sharpness = 4.0;
  double ridge = 1e-3;
  Vectord word_bias;  // C entries, log-space

  static SyntheticHead defaults(Eigen::Index num_classes);
};

/// Ridge regression of one-hot labels on `features`: (X^T X + r I)^-1 X^T Y.
RowMatrixd fit_head(const RowMatrixd& features, std::span<const ClassIndex> labels, Eigen::Index num_classes,
                    double ridge);

/// Word probabilities for every row of `knowledge` under `weights` (d x C).
RowMatrixf synthetic_word_probs(const RowMatrixf& knowledge, const RowMatrixd& weights, const SyntheticHead& head);

struct SynthOptions {
  std::uint64_t seed = 0;
  Eigen::Index classes = 4;
  Eigen::Index per_class = 500;
  Eigen::Index dim = 16;
  double separation = 10.0;  // component mean offset in units of spread
  double spread = 1.0;
  bool texts = true;
  Eigen::Index warm_start_per_class = 2;  // labeled rows behind the initial head

  void validate() const;
};

struct SyntheticPool {
  PoolArtifacts artifacts;
  FusionParams<double> fusion;
  SyntheticHead head;
  std::vector<ClassIndex> components;  // generating component per row
};

/// Gaussian-mixture pool. Encoder features are the mixture draws; knowledge
/// features add the row-mean of the fused dynamic prompt; word probabilities
/// come from a head fitted on a few rows per class.
SyntheticPool generate_synthetic_pool(const SynthOptions& options);

/// Writes the artifacts plus `fusion/` and `synthetic_head.json`.
void write_synthetic_pool(const SyntheticPool& pool, const std::filesystem::path& dir);

/// Head configuration stored next to a synthetic pool, or defaults.
SyntheticHead load_synthetic_head(const std::filesystem::path& dir, Eigen::Index num_classes);

}  // namespace poolforge
