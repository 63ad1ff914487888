#pragma once

#include "poolforge/common.hpp"
#include "poolforge/rng.hpp"
#include "poolforge/util.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

namespace poolforge {

// ---------------------------------------------------------------------------
// k-means++ with Lloyd refinement
// ---------------------------------------------------------------------------

struct KMeansOptions {
  double tol = 1e-4;   // stop when no centroid moves farther than this
  int max_iters = 100;
};

struct Clustering {
  std::vector<Eigen::Index> assignments;  // N cluster indices in [0, K)
  RowMatrixd centroids;                   // K x d
  double inertia = 0.0;                   // sum of squared distances to the assigned centroid
  std::vector<double> inertia_history;    // after every assignment step, last entry == inertia
  int iterations = 0;                     // Lloyd updates performed
};

/// Number of distinct rows, counting up to `stop_at` (0 = no limit).
template <typename Derived>
Eigen::Index count_distinct_rows(const Eigen::MatrixBase<Derived>& x, Eigen::Index stop_at = 0) {
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) r[static_cast<std::size_t>(j)] = static_cast<double>(x(i, j));
    rows.push_back(std::move(r));
  }
  std::sort(rows.begin(), rows.end());
  const auto distinct = static_cast<Eigen::Index>(std::unique(rows.begin(), rows.end()) - rows.begin());
  return stop_at > 0 ? std::min(distinct, stop_at) : distinct;
}

namespace detail {

// Nearest centroid per point (ties to the lower cluster index), then empty
// cluster repair. Returns the inertia.
inline double assign_points(const RowMatrixd& x, RowMatrixd& centroids, std::vector<Eigen::Index>& assign,
                            std::vector<double>& sq) {
  const auto n = x.rows();
  const auto k = centroids.rows();
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_c = 0;
    for (Eigen::Index c = 0; c < k; ++c) {
      const double d2 = squared_distance(x.row(r), centroids.row(c));
      if (d2 < best) {
        best = d2;
        best_c = c;
      }
    }
    assign[i] = best_c;
    sq[i] = best;
  });

  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  for (auto c : assign) ++counts[static_cast<std::size_t>(c)];
  for (Eigen::Index c = 0; c < k; ++c) {
    if (counts[static_cast<std::size_t>(c)] > 0) continue;
    // Move the point farthest from its centroid, taken from a cluster that
    // keeps at least one member.
    Eigen::Index far = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      if (counts[static_cast<std::size_t>(assign[ii])] < 2) continue;
      if (far < 0 || sq[ii] > sq[static_cast<std::size_t>(far)]) far = i;
    }
    const auto ff = static_cast<std::size_t>(far);
    --counts[static_cast<std::size_t>(assign[ff])];
    assign[ff] = c;
    counts[static_cast<std::size_t>(c)] = 1;
    centroids.row(c) = x.row(far);
    sq[ff] = 0.0;
  }
  double inertia = 0.0;
  for (double v : sq) inertia += v;
  return inertia;
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations. Deterministic for a fixed
/// seed. Requires N >= K and at least K distinct rows.
template <typename Derived>
Clustering kmeans_pp(const Eigen::MatrixBase<Derived>& features, Eigen::Index k, std::uint64_t seed,
                     const KMeansOptions& options = {}) {
  const RowMatrixd x = features.template cast<double>();
  const auto n = x.rows();
  if (k < 1) throw ValidationError("K", "cluster count must be positive");
  if (n < k) throw ValidationError("K", "fewer points (" + std::to_string(n) + ") than clusters (" + std::to_string(k) + ")");
  if (count_distinct_rows(x, k) < k)
    throw DegenerateError("features", "fewer than " + std::to_string(k) + " distinct points");

  Rng rng(seed);
  Clustering out;
  out.centroids.resize(k, x.cols());
  std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
  for (Eigen::Index c = 0; c < k; ++c) {
    out.centroids.row(c) = x.row(pick);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& d2 = nearest[static_cast<std::size_t>(i)];
      d2 = std::min(d2, squared_distance(x.row(i), out.centroids.row(c)));
      total += d2;
    }
    if (c + 1 == k) break;
    // D^2 sampling; zero-weight points (already chosen) are never picked.
    const double target = rng.uniform() * total;
    double acc = 0.0;
    pick = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = nearest[static_cast<std::size_t>(i)];
      if (w <= 0.0) continue;
      acc += w;
      pick = i;
      if (acc > target) break;
    }
  }

  out.assignments.assign(static_cast<std::size_t>(n), 0);
  std::vector<double> sq(static_cast<std::size_t>(n), 0.0);
  for (;;) {
    out.inertia = detail::assign_points(x, out.centroids, out.assignments, sq);
    out.inertia_history.push_back(out.inertia);
    if (out.iterations >= options.max_iters) break;

    RowMatrixd updated = RowMatrixd::Zero(k, x.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto c = out.assignments[static_cast<std::size_t>(i)];
      updated.row(c) += x.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    double shift = 0.0;
    for (Eigen::Index c = 0; c < k; ++c) {
      updated.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      shift = std::max(shift, std::sqrt(squared_distance(updated.row(c), out.centroids.row(c))));
    }
    out.centroids = std::move(updated);
    ++out.iterations;
    if (shift < options.tol) {
      // Final assignment against the converged centroids.
      out.inertia = detail::assign_points(x, out.centroids, out.assignments, sq);
      out.inertia_history.push_back(out.inertia);
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exact k-nearest-neighbor search
// ---------------------------------------------------------------------------

struct Neighbor {
  SampleId id;
  Eigen::Index index;  // row in the indexed matrix
  double squared_distance;
  double distance() const { return std::sqrt(squared_distance); }
};

/// k-d tree over a fixed point set. Queries are exact; neighbors at equal
/// distance are ordered by lower id.
class KdTree {
 public:
  template <typename Derived>
  KdTree(const Eigen::MatrixBase<Derived>& points, std::vector<SampleId> ids, Eigen::Index leaf_size = 8)
      : points_(points.template cast<double>()), ids_(std::move(ids)), leaf_size_(std::max<Eigen::Index>(1, leaf_size)) {
    if (points_.rows() == 0) throw ValidationError("labeled_features", "neighbor index needs at least one point");
    if (static_cast<Eigen::Index>(ids_.size()) != points_.rows())
      throw ValidationError("ids", "length != number of points");
    order_.resize(static_cast<std::size_t>(points_.rows()));
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    build(0, points_.rows());
  }

  /// Convenience: ids are the row indices.
  template <typename Derived>
  explicit KdTree(const Eigen::MatrixBase<Derived>& points) : KdTree(points, iota_ids(points.rows())) {}

  Eigen::Index size() const { return points_.rows(); }
  Eigen::Index dim() const { return points_.cols(); }

  /// The min(k, size()) nearest points, ascending by (distance, id).
  template <typename Derived>
  std::vector<Neighbor> knn(const Eigen::MatrixBase<Derived>& query, Eigen::Index k) const {
    if (query.size() != dim()) throw ValidationError("query", "length != index dimension");
    const auto want = std::min(k, size());
    std::vector<Neighbor> out;
    if (want <= 0) return out;
    const RowVector<double> q = query.template cast<double>().reshaped().transpose();
    Heap heap;
    search(0, q, want, heap);
    out.reserve(static_cast<std::size_t>(want));
    while (!heap.empty()) {
      const auto [sq, id, idx] = heap.top();
      heap.pop();
      out.push_back({id, idx, sq});
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    Eigen::Index begin = 0, end = 0;  // range of order_ (leaves)
    Eigen::Index split_dim = -1;      // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
  };
  using Entry = std::tuple<double, SampleId, Eigen::Index>;
  struct EntryLess {
    bool operator()(const Entry& a, const Entry& b) const {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
      return std::get<1>(a) < std::get<1>(b);
    }
  };
  using Heap = std::priority_queue<Entry, std::vector<Entry>, EntryLess>;  // worst on top

  static std::vector<SampleId> iota_ids(Eigen::Index n) {
    std::vector<SampleId> ids(static_cast<std::size_t>(n));
    std::iota(ids.begin(), ids.end(), SampleId{0});
    return ids;
  }

  int build(Eigen::Index begin, Eigen::Index end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= leaf_size_) return id;

    Eigen::Index best_dim = 0;
    double best_spread = -1.0;
    for (Eigen::Index j = 0; j < dim(); ++j) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (Eigen::Index i = begin; i < end; ++i) {
        const double v = points_(order_[static_cast<std::size_t>(i)], j);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (hi - lo > best_spread) {
        best_spread = hi - lo;
        best_dim = j;
      }
    }
    if (best_spread <= 0.0) return id;  // all points identical

    const Eigen::Index mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](Eigen::Index a, Eigen::Index b) { return points_(a, best_dim) < points_(b, best_dim); });
    const double split = points_(order_[static_cast<std::size_t>(mid)], best_dim);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    Node& node = nodes_[static_cast<std::size_t>(id)];
    node.split_dim = best_dim;
    node.split = split;
    node.left = left;
    node.right = right;
    return id;
  }

  void search(int node_id, const RowVector<double>& q, Eigen::Index k, Heap& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.split_dim < 0) {
      for (Eigen::Index i = node.begin; i < node.end; ++i) {
        const auto idx = order_[static_cast<std::size_t>(i)];
        Entry e{squared_distance(q, points_.row(idx)), ids_[static_cast<std::size_t>(idx)], idx};
        if (static_cast<Eigen::Index>(heap.size()) < k) {
          heap.push(e);
        } else if (EntryLess{}(e, heap.top())) {
          heap.pop();
          heap.push(e);
        }
      }
      return;
    }
    // Left holds coordinates <= split, right >= split.
    const double diff = q(node.split_dim) - node.split;
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    search(near, q, k, heap);
    // Equal bound still descends so distance ties can resolve by id.
    if (static_cast<Eigen::Index>(heap.size()) < k || diff * diff <= std::get<0>(heap.top())) search(far, q, k, heap);
  }

  RowMatrixd points_;
  std::vector<SampleId> ids_;
  Eigen::Index leaf_size_;
  std::vector<Eigen::Index> order_;
  std::vector<Node> nodes_;
};

using NeighborIndex = KdTree;

/// Mean Euclidean distance to the min(k_prime, M) nearest indexed points.
template <typename Derived>
double local_diversity(const NeighborIndex& index, const Eigen::MatrixBase<Derived>& feature, Eigen::Index k_prime) {
  if (k_prime < 1) throw ValidationError("k_prime", "must be positive");
  const auto neighbors = index.knn(feature, k_prime);
  double total = 0.0;
  for (const auto& nb : neighbors) total += nb.distance();
  return total / static_cast<double>(neighbors.size());
}

}  // namespace poolforge
