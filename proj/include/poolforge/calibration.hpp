#pragma once

#include "poolforge/common.hpp"
#include "poolforge/util.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace poolforge {

inline constexpr double kDefaultPriorFloor = 1e-12;

/// Rows chosen to estimate the contextualized prior: for each label the k
/// rows with the largest raw probability, and their deduplicated union.
struct SupportSet {
  std::vector<std::vector<Eigen::Index>> per_label;  // descending probability
  std::vector<Eigen::Index> rows;                    // ascending, unique
};

/// Probabilities over C classes; sums to one.
struct CalibratedDistribution {
  Vectord probs;
};

/// Top-k rows per column of `word_probs`. Ties break toward the lower id;
/// `ids` defaults to the row index when empty. k larger than N uses all rows.
template <typename Derived>
SupportSet build_support_set(const Eigen::MatrixBase<Derived>& word_probs, Eigen::Index k,
                             std::span<const SampleId> ids = {}) {
  if (k <= 0) throw ValidationError("k", "support size must be positive");
  const auto n = word_probs.rows();
  if (n < 1) throw ValidationError("word_probs", "support set needs at least one sample");
  if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != n)
    throw ValidationError("ids", "length != rows of word_probs");
  auto id_of = [&](Eigen::Index r) { return ids.empty() ? static_cast<SampleId>(r) : ids[static_cast<std::size_t>(r)]; };

  const auto take = std::min(k, n);
  SupportSet s;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::vector<char> used(static_cast<std::size_t>(n), 0);
  for (Eigen::Index c = 0; c < word_probs.cols(); ++c) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::partial_sort(order.begin(), order.begin() + take, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      const double pa = static_cast<double>(word_probs(a, c));
      const double pb = static_cast<double>(word_probs(b, c));
      if (pa != pb) return pa > pb;
      return id_of(a) < id_of(b);
    });
    s.per_label.emplace_back(order.begin(), order.begin() + take);
    for (auto r : s.per_label.back()) used[static_cast<std::size_t>(r)] = 1;
  }
  for (Eigen::Index r = 0; r < n; ++r)
    if (used[static_cast<std::size_t>(r)]) s.rows.push_back(r);
  return s;
}

/// Mean label-word probability over the support rows, each row counted once.
template <typename Derived>
Vectord estimate_prior(const Eigen::MatrixBase<Derived>& word_probs, const SupportSet& support) {
  if (support.rows.empty()) throw ValidationError("support", "empty support set");
  Vectord prior = Vectord::Zero(word_probs.cols());
  for (auto r : support.rows) prior += word_probs.row(r).template cast<double>().transpose();
  return prior / static_cast<double>(support.rows.size());
}

/// y_i = (raw_i / prior_i) / sum_j (raw_j / prior_j), with priors floored at
/// `floor`. `floored`, when given, is incremented per floored entry.
template <typename RawDerived, typename PriorDerived>
CalibratedDistribution calibrate(const Eigen::MatrixBase<RawDerived>& raw, const Eigen::MatrixBase<PriorDerived>& prior,
                                 double floor = kDefaultPriorFloor, int* floored = nullptr) {
  if (raw.size() != prior.size()) throw ValidationError("prior", "length != number of classes");
  const auto c = raw.size();
  Vectord ratio(c);
  double total = 0.0;
  for (Eigen::Index i = 0; i < c; ++i) {
    double p = static_cast<double>(prior(i));
    if (!(p >= floor)) {
      p = floor;
      if (floored) ++*floored;
    }
    ratio(i) = static_cast<double>(raw(i)) / p;
    total += ratio(i);
  }
  if (!(total > 0.0) || !std::isfinite(total))
    throw DegenerateError("word_probs", "degenerate sample: all label-word probabilities are zero");
  return {ratio / total};
}

/// Shannon entropy in nats with 0 ln 0 = 0.
inline double uncertainty(const CalibratedDistribution& dist) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < dist.probs.size(); ++i) {
    const double p = dist.probs(i);
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

/// Calibrated distributions of every row against one shared prior.
struct PoolCalibration {
  SupportSet support;
  Vectord prior;
  RowMatrixd probs;         // N x C
  Vectord uncertainty;      // N
  int floored_priors = 0;
};

template <typename Derived>
PoolCalibration calibrate_pool(const Eigen::MatrixBase<Derived>& word_probs, Eigen::Index k,
                               std::span<const SampleId> ids = {}, double floor = kDefaultPriorFloor) {
  PoolCalibration out;
  out.support = build_support_set(word_probs, k, ids);
  out.prior = estimate_prior(word_probs, out.support);
  for (Eigen::Index i = 0; i < out.prior.size(); ++i)
    if (!(out.prior(i) >= floor)) ++out.floored_priors;
  if (out.floored_priors > 0)
    log_warn("contextualized prior: " + std::to_string(out.floored_priors) + " entr" +
             (out.floored_priors == 1 ? "y" : "ies") + " floored at " + std::to_string(floor));

  const auto n = word_probs.rows();
  out.probs.resize(n, word_probs.cols());
  out.uncertainty.resize(n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    const auto dist = calibrate(word_probs.row(r).transpose(), out.prior, floor);
    out.probs.row(r) = dist.probs.transpose();
    out.uncertainty(r) = uncertainty(dist);
  });
  return out;
}

}  // namespace poolforge
