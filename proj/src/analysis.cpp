#include "poolforge/analysis.hpp"

#include "poolforge/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace poolforge {

namespace {

double entropy_row(const RowMatrixd& m, Eigen::Index r) {
  double h = 0.0;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double p = m(r, j);
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

// Terms of KL(a || b) with a_i = 0 contributing nothing.
double kl(const Vectord& a, const Vectord& b) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a(i) > 0.0) total += a(i) * std::log(a(i) / b(i));
  return total;
}

}  // namespace

Metric imbalance(std::span<const Eigen::Index> counts) {
  if (counts.size() < 2) throw ValidationError("counts", "need at least 2 classes");
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  if (*hi == 0) throw ValidationError("counts", "all class counts are zero");
  if (*lo == 0) return std::nullopt;
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

double label_divergence(const Vectord& q, const Vectord& p) {
  if (q.size() != p.size()) throw ValidationError("p", "length differs from q");
  if ((p.array() <= 0.0).any()) throw ValidationError("p", "true frequencies must be positive");
  return kl(q, p);
}

Metric batch_diversity(const RowMatrixd& selected, const RowMatrixd& pool) {
  if (selected.rows() == 0) throw ValidationError("selected", "empty selection");
  if (pool.rows() == 0) throw ValidationError("pool", "empty pool");
  double total = 0.0;
  for (Eigen::Index i = 0; i < pool.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < selected.rows(); ++j)
      best = std::min(best, squared_distance(pool.row(i), selected.row(j)));
    total += std::sqrt(best);
  }
  const double mean = total / static_cast<double>(pool.rows());
  if (mean <= 0.0) return std::nullopt;
  return 1.0 / mean;
}

Metric representativeness(const RowMatrixd& pool, std::span<const Eigen::Index> selected_rows, Eigen::Index k) {
  if (k < 1) throw ValidationError("k", "must be positive");
  if (pool.rows() <= k) throw ValidationError("pool", "pool must hold more than k samples");
  if (selected_rows.empty()) throw ValidationError("selected", "empty selection");
  const KdTree index(pool);
  double total = 0.0;
  for (auto row : selected_rows) {
    if (row < 0 || row >= pool.rows()) throw ValidationError("selected", "row out of range");
    auto neighbors = index.knn(pool.row(row), k + 1);
    auto self = std::find_if(neighbors.begin(), neighbors.end(), [&](const Neighbor& n) { return n.index == row; });
    if (self != neighbors.end())
      neighbors.erase(self);
    else
      neighbors.pop_back();
    double mean = 0.0;
    for (const auto& n : neighbors) mean += n.distance();
    mean /= static_cast<double>(neighbors.size());
    if (mean <= 0.0) return std::nullopt;
    total += 1.0 / mean;
  }
  return total / static_cast<double>(selected_rows.size());
}

double batch_uncertainty(const RowMatrixd& dists) {
  if (dists.rows() == 0) throw ValidationError("dists", "empty batch");
  double total = 0.0;
  for (Eigen::Index r = 0; r < dists.rows(); ++r) total += entropy_row(dists, r);
  return total / static_cast<double>(dists.rows());
}

double js_divergence(const Vectord& p, const Vectord& q) {
  if (p.size() != q.size()) throw ValidationError("q", "support mismatch");
  const Vectord m = 0.5 * (p + q);
  return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

double mean_js_divergence(const RowMatrixd& p, const RowMatrixd& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols()) throw ValidationError("q", "shape mismatch");
  if (p.rows() == 0) throw ValidationError("p", "no samples");
  double total = 0.0;
  for (Eigen::Index r = 0; r < p.rows(); ++r) total += js_divergence(p.row(r).transpose(), q.row(r).transpose());
  return total / static_cast<double>(p.rows());
}

Vectord class_frequencies(std::span<const ClassIndex> labels, Eigen::Index num_classes) {
  Vectord f = Vectord::Zero(num_classes);
  for (auto y : labels) {
    if (y < 0 || y >= num_classes) throw ValidationError("labels", "label out of range");
    f(y) += 1.0;
  }
  if (!labels.empty()) f /= static_cast<double>(labels.size());
  return f;
}

SelectionAnalysis analyze_selection(const SelectionInputs& in) {
  SelectionAnalysis out;
  out.class_counts.assign(static_cast<std::size_t>(in.num_classes), 0);
  for (auto y : in.selected_labels) {
    if (y < 0 || y >= in.num_classes) throw ValidationError("labels", "label out of range");
    ++out.class_counts[static_cast<std::size_t>(y)];
  }
  out.imb = imbalance(out.class_counts);
  if (in.true_frequencies && (in.true_frequencies->array() > 0.0).all())
    out.ldd = label_divergence(class_frequencies(in.selected_labels, in.num_classes), *in.true_frequencies);

  RowMatrixd selected(static_cast<Eigen::Index>(in.selected_rows.size()), in.pool_features.cols());
  for (std::size_t i = 0; i < in.selected_rows.size(); ++i)
    selected.row(static_cast<Eigen::Index>(i)) = in.pool_features.row(in.selected_rows[i]);
  out.div = batch_diversity(selected, in.pool_features);
  if (in.pool_features.rows() > in.rep_k) out.rep = representativeness(in.pool_features, in.selected_rows, in.rep_k);
  out.unc = batch_uncertainty(in.selected_dists);
  return out;
}

}  // namespace poolforge
