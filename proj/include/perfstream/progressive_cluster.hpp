#pragma once

// Latency-budgeted mini-batch k-means over entity behavior vectors (one row of
// the metric window per entity), with cluster IDs carried over from the
// previous refresh so colors stay stable for the analyst.

#include <algorithm>
#include <numeric>
#include <span>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "perfstream/common.hpp"
#include "perfstream/sampling.hpp"

namespace perfstream {

struct ClusterConfig {
  int k = 3;
  Index per_cluster_batch = 10;  // m
  Budget budget = Budget::millis(50);
  bool z_normalize = false;
  std::uint64_t seed = 0;
  Index seeding_candidates = 1024;
};

struct ClusterModel {
  ClusterConfig config;
  Eigen::MatrixXd centers;        // k x w
  Eigen::VectorXd center_counts;  // samples absorbed per center
  std::vector<int> assignments;
  std::vector<int> prev_assignments;
  Index processed_count = 0;
  std::uint64_t epoch = 0;
  bool reseeded = false;

  static ClusterModel create(ClusterConfig config) {
    if (config.k < 1) throw std::invalid_argument("cluster: k must be at least 1");
    if (config.per_cluster_batch < 1) throw std::invalid_argument("cluster: m must be at least 1");
    ClusterModel m;
    m.config = config;
    return m;
  }

  int k() const { return config.k; }
  Index width() const { return centers.cols(); }
  bool seeded() const { return centers.rows() == config.k && centers.cols() > 0; }

  std::vector<Index> cluster_sizes() const {
    std::vector<Index> sizes(static_cast<std::size_t>(config.k), 0);
    for (int a : assignments)
      if (a >= 0 && a < config.k) ++sizes[static_cast<std::size_t>(a)];
    return sizes;
  }
};

namespace detail {

inline int nearest_center(const Eigen::MatrixXd& centers, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                          double* dist2 = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

inline Eigen::MatrixXd z_normalize_rows(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out = x;
  const double w = static_cast<double>(x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().sum() / std::max(1.0, w);
    const double sd = std::sqrt(var);
    out.row(i) = (x.row(i).array() - mu) / (sd > 0.0 ? sd : 1.0);
  }
  return out;
}

// Distance-weighted (k-means++) seeding over a random candidate subset.
inline Eigen::MatrixXd seed_centers(const Eigen::MatrixXd& x, int k, Index candidates, Rng& rng) {
  const Index n = x.rows();
  std::vector<Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Index{0});
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(static_cast<std::size_t>(std::max<Index>(std::min(n, candidates), k)));

  Eigen::MatrixXd centers(k, x.cols());
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  centers.row(0) = x.row(pool[pick(rng)]);
  std::vector<double> d2(pool.size(), std::numeric_limits<double>::infinity());
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      d2[i] = std::min(d2[i], (x.row(pool[i]) - centers.row(c - 1)).squaredNorm());
      total += d2[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng), acc = 0.0;
      chosen = pool.size() - 1;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        acc += d2[i];
        if (acc >= target && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    centers.row(c) = x.row(pool[chosen]);
  }
  return centers;
}

}  // namespace detail

/// Maps each new label to an output ID by matching it with the previous label
/// most frequent among its members. Frequencies come from members drawn one
/// per new label per round until the budget expires or every member has been
/// checked (at least one round runs unless the budget is exactly zero).
/// Returns `map` with map[new_label] = output ID; it is a permutation of [0, k).
inline std::vector<int> relabel_map(std::span<const int> prev, std::span<const int> next, int k,
                                    Budget budget, Rng& rng) {
  std::vector<int> map(static_cast<std::size_t>(k));
  std::iota(map.begin(), map.end(), 0);
  if (prev.size() != next.size() || prev.empty()) return map;
  const bool zero_budget = !budget.is_unlimited() && budget.seconds() <= 0.0;
  if (zero_budget) return map;

  const auto ku = static_cast<std::size_t>(k);
  std::vector<std::vector<std::size_t>> members(ku);
  for (std::size_t i = 0; i < next.size(); ++i)
    if (next[i] >= 0 && next[i] < k) members[static_cast<std::size_t>(next[i])].push_back(i);
  for (auto& m : members) std::shuffle(m.begin(), m.end(), rng);

  std::vector<std::vector<double>> counts(ku, std::vector<double>(ku, 0.0));
  std::vector<double> sampled(ku, 0.0);
  const Deadline deadline(budget);
  for (std::size_t round = 0;; ++round) {
    bool any = false;
    for (std::size_t c = 0; c < ku; ++c) {
      if (round >= members[c].size()) continue;
      const int p = prev[members[c][round]];
      if (p >= 0 && p < k) counts[c][static_cast<std::size_t>(p)] += 1.0;
      sampled[c] += 1.0;
      any = true;
    }
    if (!any || deadline.expired()) break;
  }

  struct Pair {
    double freq, count;
    int next_label, prev_label;
  };
  std::vector<Pair> pairs;
  for (std::size_t c = 0; c < ku; ++c)
    for (std::size_t p = 0; p < ku; ++p)
      if (counts[c][p] > 0.0)
        pairs.push_back({counts[c][p] / sampled[c], counts[c][p], static_cast<int>(c), static_cast<int>(p)});
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(b.freq, b.count, a.next_label, a.prev_label) <
           std::tie(a.freq, a.count, b.next_label, b.prev_label);
  });

  std::vector<bool> next_done(ku, false), prev_used(ku, false);
  std::fill(map.begin(), map.end(), -1);
  for (const Pair& pr : pairs) {
    const auto c = static_cast<std::size_t>(pr.next_label);
    const auto p = static_cast<std::size_t>(pr.prev_label);
    if (next_done[c] || prev_used[p]) continue;
    map[c] = pr.prev_label;
    next_done[c] = prev_used[p] = true;
  }
  std::size_t free_id = 0;
  for (std::size_t c = 0; c < ku; ++c) {
    if (next_done[c]) continue;
    while (prev_used[free_id]) ++free_id;
    map[c] = static_cast<int>(free_id);
    prev_used[free_id] = true;
  }
  return map;
}

/// Relabels `next` so its IDs agree with `prev` as far as the partition allows.
inline std::vector<int> reassign_ids(std::span<const int> prev, std::span<const int> next, int k,
                                     Budget budget, Rng& rng) {
  for (int v : next)
    if (v < 0 || v >= k) throw std::invalid_argument("reassign_ids: label out of range");
  const std::vector<int> map = relabel_map(prev, next, k, budget, rng);
  std::vector<int> out(next.size());
  for (std::size_t i = 0; i < next.size(); ++i) out[i] = map[static_cast<std::size_t>(next[i])];
  return out;
}

inline std::vector<int> reassign_ids(std::span<const int> prev, std::span<const int> next, int k,
                                     Budget budget = Budget::unlimited(), std::uint64_t seed = 0) {
  Rng rng(seed);
  return reassign_ids(prev, next, k, budget, rng);
}

/// One progressive refresh over `window` (n x w). Mini-batch steps run until
/// the budget expires or all n entities have been absorbed; then every entity
/// is assigned to its nearest center and IDs are carried over.
[[nodiscard]] inline ClusterModel refresh(const ClusterModel& model, const Eigen::MatrixXd& window,
                                          Budget budget) {
  const int k = model.k();
  const Index n = window.rows();
  if (k > n) throw std::invalid_argument("cluster refresh: k exceeds entity count");
  if (window.cols() < 1) throw std::invalid_argument("cluster refresh: empty window");

  const Deadline deadline(budget);
  ClusterModel next = model;
  next.epoch = model.epoch + 1;
  next.reseeded = false;
  Rng rng(mix_seed(model.config.seed, next.epoch));

  const Eigen::MatrixXd zx = model.config.z_normalize ? detail::z_normalize_rows(window) : Eigen::MatrixXd();
  const Eigen::MatrixXd& x = model.config.z_normalize ? zx : window;

  if (!model.seeded() || model.width() != x.cols()) {
    next.centers = detail::seed_centers(x, k, model.config.seeding_candidates, rng);
    next.center_counts = Eigen::VectorXd::Zero(k);
    next.reseeded = true;
  }

  const bool have_prev = static_cast<Index>(model.assignments.size()) == n;
  StratifiedSampler sampler =
      have_prev ? StratifiedSampler(model.assignments, k, model.config.per_cluster_batch, rng)
                : StratifiedSampler(n, model.config.per_cluster_batch * k, rng);

  next.processed_count = 0;
  std::vector<int> cached;
  while (!sampler.exhausted() && !deadline.expired()) {
    const std::vector<Index> batch = sampler.next_batch();
    cached.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i)
      cached[i] = detail::nearest_center(next.centers, x.row(batch[i]));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const int c = cached[i];
      next.center_counts(c) += 1.0;
      const double lr = 1.0 / next.center_counts(c);
      next.centers.row(c) += lr * (x.row(batch[i]) - next.centers.row(c));
    }
    next.processed_count += static_cast<Index>(batch.size());
  }

  std::vector<int> labels(static_cast<std::size_t>(n));
  std::vector<double> dist(static_cast<std::size_t>(n));
  std::vector<Index> sizes(static_cast<std::size_t>(k), 0);
  auto assign_all = [&] {
    std::fill(sizes.begin(), sizes.end(), Index{0});
    for (Index i = 0; i < n; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      labels[iu] = detail::nearest_center(next.centers, x.row(i), &dist[iu]);
      ++sizes[static_cast<std::size_t>(labels[iu])];
    }
  };
  assign_all();

  // Empty cluster: move its center onto the entity farthest from its own
  // center, then reassign. A zero budget leaves the centers untouched.
  const bool zero_budget = !budget.is_unlimited() && budget.seconds() <= 0.0;
  for (int pass = 0; pass < k && !zero_budget; ++pass) {
    const auto empty = std::find(sizes.begin(), sizes.end(), Index{0});
    if (empty == sizes.end()) break;
    Index far = -1;
    double far_d = 0.0;
    for (Index i = 0; i < n; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      if (sizes[static_cast<std::size_t>(labels[iu])] > 1 && dist[iu] > far_d) {
        far_d = dist[iu];
        far = i;
      }
    }
    if (far < 0) break;
    const auto c = static_cast<Index>(empty - sizes.begin());
    next.centers.row(c) = x.row(far);
    next.center_counts(c) = 1.0;
    assign_all();
  }

  // A nonzero budget always affords one relabeling round.
  Budget relabel_budget = deadline.remaining();
  if (!budget.is_unlimited() && budget.seconds() > 0.0 && relabel_budget.seconds() <= 0.0)
    relabel_budget = Budget(Seconds(1e-9));
  const std::vector<int> map = relabel_map(model.assignments, labels, k, relabel_budget, rng);
  Eigen::MatrixXd centers(k, x.cols());
  Eigen::VectorXd counts(k);
  for (int c = 0; c < k; ++c) {
    centers.row(map[static_cast<std::size_t>(c)]) = next.centers.row(c);
    counts(map[static_cast<std::size_t>(c)]) = next.center_counts(c);
  }
  next.centers = std::move(centers);
  next.center_counts = std::move(counts);
  for (int& l : labels) l = map[static_cast<std::size_t>(l)];

  next.prev_assignments = model.assignments;
  next.assignments = std::move(labels);
  return next;
}

[[nodiscard]] inline ClusterModel refresh(const ClusterModel& model, const Eigen::MatrixXd& window) {
  return refresh(model, window, model.config.budget);
}

}  // namespace perfstream
