#pragma once

#include "poolforge/common.hpp"

#include <optional>
#include <span>
#include <vector>

namespace poolforge {

/// A metric that may overflow (zero denominator). std::nullopt is the
/// overflow sentinel and serializes as the string "overflow".
using Metric = std::optional<double>;

/// max(counts) / min(counts); overflow when some class has no samples.
Metric imbalance(std::span<const Eigen::Index> counts);

/// KL(q || p) in nats, 0 ln 0 = 0. Requires p > 0 entrywise.
double label_divergence(const Vectord& q, const Vectord& p);

/// Reciprocal of the mean distance from each pool point to its nearest
/// selected point.
Metric batch_diversity(const RowMatrixd& selected, const RowMatrixd& pool);

/// Mean over selected pool rows of 1 / (mean distance to the k nearest
/// other pool rows). Overflow if any such mean distance is zero.
Metric representativeness(const RowMatrixd& pool, std::span<const Eigen::Index> selected_rows, Eigen::Index k);

/// Mean entropy of the rows of `dists` (each row a distribution).
double batch_uncertainty(const RowMatrixd& dists);

/// Jensen-Shannon divergence in nats, bounded by ln 2.
double js_divergence(const Vectord& p, const Vectord& q);

/// Mean JS divergence between matching rows of two distribution matrices.
double mean_js_divergence(const RowMatrixd& p, const RowMatrixd& q);

struct SelectionAnalysis {
  std::vector<Eigen::Index> class_counts;
  Metric imb;
  std::optional<double> ldd;  // unavailable without positive true frequencies
  Metric div;
  std::optional<Metric> rep;  // unavailable when the pool holds <= k samples
  double unc = 0.0;
};

struct SelectionInputs {
  std::span<const ClassIndex> selected_labels;
  Eigen::Index num_classes = 0;
  std::optional<Vectord> true_frequencies;
  RowMatrixd pool_features;                 // Div/Rep feature space
  std::vector<Eigen::Index> selected_rows;  // rows of pool_features
  RowMatrixd selected_dists;                // calibrated distributions of the batch
  Eigen::Index rep_k = 10;
};

SelectionAnalysis analyze_selection(const SelectionInputs& in);

/// Class frequencies of `labels` over C classes.
Vectord class_frequencies(std::span<const ClassIndex> labels, Eigen::Index num_classes);

}  // namespace poolforge
