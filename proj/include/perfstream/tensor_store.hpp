#pragma once

// Ingest, join and windowing of the n x d x t metric tensor plus per-interval
// communication graphs. Single writer; readers get immutable slice snapshots.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "perfstream/common.hpp"

namespace perfstream {

/// Entity grouping from coarsest to finest level. Level 0 is a single root
/// group; level `depth()` has one group per entity.
class Hierarchy {
 public:
  Hierarchy() = default;

  /// `paths[i]` is entity i's group path. All paths must have the same length
  /// and full paths must be distinct.
  explicit Hierarchy(std::vector<std::vector<int>> paths) : paths_(std::move(paths)) {
    if (paths_.empty()) return;
    const std::size_t depth = paths_.front().size();
    if (depth == 0) throw std::invalid_argument("hierarchy: empty entity path");
    for (const auto& p : paths_)
      if (p.size() != depth) throw std::invalid_argument("hierarchy: entity paths differ in length");
    std::set<std::vector<int>> unique(paths_.begin(), paths_.end());
    if (unique.size() != paths_.size()) throw std::invalid_argument("hierarchy: duplicate entity path");
  }

  /// One level, entity i in its own group.
  static Hierarchy flat(Index n) {
    std::vector<std::vector<int>> p;
    for (Index i = 0; i < n; ++i) p.push_back({static_cast<int>(i)});
    return Hierarchy(std::move(p));
  }

  /// Two levels: `groups` coarse groups of `per_group` members each.
  static Hierarchy grid(int groups, int per_group) {
    std::vector<std::vector<int>> p;
    for (int g = 0; g < groups; ++g)
      for (int m = 0; m < per_group; ++m) p.push_back({g, m});
    return Hierarchy(std::move(p));
  }

  Index entities() const { return static_cast<Index>(paths_.size()); }
  int depth() const { return paths_.empty() ? 0 : static_cast<int>(paths_.front().size()); }
  const std::vector<std::vector<int>>& paths() const { return paths_; }

  /// Group index of every entity at `level`; groups are numbered in sorted
  /// prefix order, which at full depth is entity index order.
  std::vector<Index> group_of(int level) const {
    check_level(level);
    std::vector<Index> out(paths_.size());
    if (level == depth()) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Index>(i);
      return out;
    }
    std::map<std::vector<int>, Index> ids;
    for (const auto& p : paths_) ids.emplace(std::vector<int>(p.begin(), p.begin() + level), 0);
    Index next = 0;
    for (auto& [_, id] : ids) id = next++;
    for (std::size_t i = 0; i < paths_.size(); ++i)
      out[i] = ids.at(std::vector<int>(paths_[i].begin(), paths_[i].begin() + level));
    return out;
  }

  Index group_count(int level) const {
    check_level(level);
    if (level == depth()) return entities();
    std::set<std::vector<int>> s;
    for (const auto& p : paths_) s.emplace(p.begin(), p.begin() + level);
    return static_cast<Index>(s.size());
  }

  void check_level(int level) const {
    if (level < 0 || level > depth()) throw std::out_of_range("hierarchy: invalid aggregation level");
  }

 private:
  std::vector<std::vector<int>> paths_;
};

/// Weighted communication matrix for one interval, sparse.
struct CommGraphFrame {
  std::int64_t time_index = 0;
  int level = 0;
  Index dim = 0;
  std::map<std::pair<Index, Index>, double> weights;

  double at(Index src, Index dst) const {
    const auto it = weights.find({src, dst});
    return it == weights.end() ? 0.0 : it->second;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& [key, w] : weights) m(key.first, key.second) = w;
    return m;
  }
};

/// Block means of `frame` at a coarser `level`: cell (G, H) is the mean of all
/// input cells (i, j) with i in G and j in H, zeros included.
inline CommGraphFrame aggregate_comm(const CommGraphFrame& frame, const Hierarchy& hierarchy, int level) {
  hierarchy.check_level(level);
  hierarchy.check_level(frame.level);
  if (level > frame.level) throw std::invalid_argument("aggregate_comm: target level is finer than the frame");
  if (frame.dim != hierarchy.group_count(frame.level))
    throw std::invalid_argument("aggregate_comm: frame dimension does not match the hierarchy");
  CommGraphFrame out;
  out.time_index = frame.time_index;
  out.level = level;
  out.dim = hierarchy.group_count(level);

  // Map each input group to its output group through any member entity.
  const std::vector<Index> fine = hierarchy.group_of(frame.level);
  const std::vector<Index> coarse = hierarchy.group_of(level);
  std::vector<Index> up(static_cast<std::size_t>(frame.dim), 0);
  for (std::size_t i = 0; i < fine.size(); ++i) up[static_cast<std::size_t>(fine[i])] = coarse[i];
  std::vector<double> members(static_cast<std::size_t>(out.dim), 0.0);
  for (Index g : up) members[static_cast<std::size_t>(g)] += 1.0;

  for (const auto& [key, w] : frame.weights) {
    const Index a = up[static_cast<std::size_t>(key.first)], b = up[static_cast<std::size_t>(key.second)];
    out.weights[{a, b}] += w;
  }
  for (auto& [key, w] : out.weights)
    w /= members[static_cast<std::size_t>(key.first)] * members[static_cast<std::size_t>(key.second)];
  return out;
}

/// A sealed time slice: n x d values. `filled[i]` marks entities whose values
/// were forward-filled because they never reported.
struct Slice {
  std::int64_t time_index = 0;
  double wall_time = 0.0;  // arrival time of the first record, seconds
  Eigen::MatrixXd values;
  std::vector<bool> filled;

  Index missing() const { return static_cast<Index>(std::count(filled.begin(), filled.end(), true)); }
};

using SlicePtr = std::shared_ptr<const Slice>;

enum class IngestStatus { stored, duplicate, rejected, dropped };

struct IngestCounters {
  std::int64_t records = 0;
  std::int64_t unknown_entity = 0;
  std::int64_t malformed = 0;  // wrong value count or non-finite values
  std::int64_t duplicates = 0;
  std::int64_t dropped_old = 0;   // older than the retained window
  std::int64_t dropped_late = 0;  // for a slice that has already been sealed
  std::int64_t forward_filled = 0;
  std::int64_t comm_records = 0;
  std::int64_t comm_rejected = 0;
  std::int64_t comm_dropped = 0;
};

struct StoreConfig {
  Index window_capacity = 64;
  double timeout_factor = 5.0;  // seal stragglers after this many median intervals
};

class TensorStore {
 public:
  using Subscriber = std::function<void(const SlicePtr&)>;

  TensorStore(Index n, std::vector<std::string> metric_names, Hierarchy hierarchy = {}, StoreConfig config = {})
      : n_(n), names_(std::move(metric_names)), config_(config) {
    if (n_ < 1) throw std::invalid_argument("tensor store: need at least one entity");
    if (names_.empty()) throw std::invalid_argument("tensor store: need at least one metric");
    if (config_.window_capacity < 1) throw std::invalid_argument("tensor store: window capacity must be positive");
    if (!(config_.timeout_factor > 0.0)) throw std::invalid_argument("tensor store: timeout factor must be positive");
    hierarchy_ = hierarchy.entities() == 0 ? Hierarchy::flat(n_) : std::move(hierarchy);
    if (hierarchy_.entities() != n_) throw std::invalid_argument("tensor store: hierarchy entity count mismatch");
    summary_.assign(names_.size(), {});
  }

  Index entities() const { return n_; }
  Index metrics() const { return static_cast<Index>(names_.size()); }
  const std::vector<std::string>& metric_names() const { return names_; }
  const Hierarchy& hierarchy() const { return hierarchy_; }
  const StoreConfig& config() const { return config_; }
  const IngestCounters& counters() const { return counters_; }

  /// Slices sealed since the stream started.
  std::int64_t t_total() const { return t_total_; }
  Index window_size() const { return static_cast<Index>(window_.size()); }
  const std::deque<SlicePtr>& window() const { return window_; }
  SlicePtr latest() const { return window_.empty() ? nullptr : window_.back(); }
  std::optional<std::int64_t> last_sealed_time() const { return last_sealed_; }

  void subscribe(Subscriber s) { subscribers_.push_back(std::move(s)); }

  IngestStatus ingest_record(std::int64_t t, Index entity, std::span<const double> values,
                             double now = steady_now()) {
    ++counters_.records;
    if (entity < 0 || entity >= n_) {
      ++counters_.unknown_entity;
      return IngestStatus::rejected;
    }
    if (static_cast<Index>(values.size()) != metrics() ||
        !std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); })) {
      ++counters_.malformed;
      return IngestStatus::rejected;
    }
    if (last_sealed_ && t <= *last_sealed_) {
      if (t < oldest_retained()) {
        ++counters_.dropped_old;
      } else {
        ++counters_.dropped_late;
      }
      return IngestStatus::dropped;
    }
    auto [it, inserted] = pending_.try_emplace(t);
    Pending& p = it->second;
    if (inserted) {
      p.values = Eigen::MatrixXd::Zero(n_, metrics());
      p.have.assign(static_cast<std::size_t>(n_), false);
      p.first_arrival = now;
    }
    IngestStatus status = IngestStatus::stored;
    if (p.have[static_cast<std::size_t>(entity)]) {
      ++counters_.duplicates;
      status = IngestStatus::duplicate;
    } else {
      p.have[static_cast<std::size_t>(entity)] = true;
      ++p.count;
    }
    for (Index m = 0; m < metrics(); ++m) p.values(entity, m) = values[static_cast<std::size_t>(m)];
    seal_ready();
    return status;
  }

  /// Adds `amount` to the src -> dst weight of interval `t`.
  IngestStatus ingest_comm(std::int64_t t, Index src, Index dst, double amount) {
    ++counters_.comm_records;
    if (src < 0 || dst < 0 || src >= n_ || dst >= n_ || !(amount >= 0.0) || !std::isfinite(amount)) {
      ++counters_.comm_rejected;
      return IngestStatus::rejected;
    }
    if (!window_.empty() && t < oldest_retained() && !pinned_.count(t)) {
      ++counters_.comm_dropped;
      return IngestStatus::dropped;
    }
    CommGraphFrame& f = comm_frame_ref(t);
    f.weights[{src, dst}] += amount;
    return IngestStatus::stored;
  }

  /// Communication frame of interval `t` at full depth; all-zero when no
  /// traffic was recorded.
  CommGraphFrame comm_frame(std::int64_t t) const {
    const auto it = comm_.find(t);
    if (it != comm_.end()) return it->second;
    return empty_frame(t);
  }

  /// True when interval `t` is still retained (within the window or pinned).
  bool comm_available(std::int64_t t) const {
    if (pinned_.count(t)) return true;
    if (window_.empty()) return false;
    return t >= oldest_retained() && t <= window_.back()->time_index;
  }

  /// Keeps the frame of interval `t` past window eviction until unpinned.
  void pin_comm(std::int64_t t) {
    comm_frame_ref(t);
    ++pinned_[t];
  }
  void unpin_comm(std::int64_t t) {
    auto it = pinned_.find(t);
    if (it == pinned_.end()) return;
    if (--it->second == 0) pinned_.erase(it);
    evict_comm();
  }

  /// Seals the oldest pending slice when it has waited longer than
  /// timeout_factor median intervals, forward-filling absent entities.
  /// Returns the number of slices sealed.
  int poll(double now = steady_now()) {
    int sealed = 0;
    for (;;) {
      sealed += seal_ready();
      if (pending_.empty() || intervals_.size() < 2) break;
      const Pending& front = pending_.begin()->second;
      if (now - front.first_arrival <= config_.timeout_factor * median_interval()) break;
      seal_front();
      ++sealed;
    }
    return sealed;
  }

  /// Seals every pending slice regardless of completeness (end of stream).
  int flush() {
    int sealed = 0;
    while (!pending_.empty()) {
      seal_front();
      ++sealed;
    }
    return sealed;
  }

  double median_interval() const {
    if (intervals_.empty()) return 0.0;
    std::vector<double> v(intervals_.begin(), intervals_.end());
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
  }

  /// Entity-major n x w matrix of `metric` over the retained window, oldest
  /// column first.
  Eigen::MatrixXd window_matrix(Index metric) const {
    check_metric(metric);
    if (window_.empty()) throw std::logic_error("window_matrix: no sealed slices");
    Eigen::MatrixXd out(n_, static_cast<Index>(window_.size()));
    Index c = 0;
    for (const SlicePtr& s : window_) out.col(c++) = s->values.col(metric);
    return out;
  }

  /// Mean across entities for every sealed slice since the start.
  const std::vector<double>& summary(Index metric) const {
    check_metric(metric);
    return summary_[static_cast<std::size_t>(metric)];
  }
  const std::vector<std::int64_t>& summary_times() const { return summary_times_; }

  static double steady_now() {
    return std::chrono::duration<double>(SteadyClock::now().time_since_epoch()).count();
  }

 private:
  struct Pending {
    Eigen::MatrixXd values;
    std::vector<bool> have;
    Index count = 0;
    double first_arrival = 0.0;
  };

  std::int64_t oldest_retained() const {
    return window_.empty() ? std::numeric_limits<std::int64_t>::min() : window_.front()->time_index;
  }

  void check_metric(Index metric) const {
    if (metric < 0 || metric >= metrics()) throw std::out_of_range("tensor store: unknown metric index");
  }

  CommGraphFrame empty_frame(std::int64_t t) const {
    CommGraphFrame f;
    f.time_index = t;
    f.level = hierarchy_.depth();
    f.dim = n_;
    return f;
  }

  CommGraphFrame& comm_frame_ref(std::int64_t t) {
    auto it = comm_.find(t);
    if (it == comm_.end()) it = comm_.emplace(t, empty_frame(t)).first;
    return it->second;
  }

  int seal_ready() {
    int sealed = 0;
    while (!pending_.empty() && pending_.begin()->second.count == n_) {
      seal_front();
      ++sealed;
    }
    return sealed;
  }

  void seal_front() {
    auto node = pending_.extract(pending_.begin());
    Pending& p = node.mapped();
    auto slice = std::make_shared<Slice>();
    slice->time_index = node.key();
    slice->wall_time = p.first_arrival;
    slice->filled.assign(static_cast<std::size_t>(n_), false);
    slice->values = std::move(p.values);
    const SlicePtr prev = latest();
    for (Index i = 0; i < n_; ++i) {
      if (p.have[static_cast<std::size_t>(i)]) continue;
      slice->filled[static_cast<std::size_t>(i)] = true;
      ++counters_.forward_filled;
      if (prev) slice->values.row(i) = prev->values.row(i);
    }

    if (last_wall_) {
      intervals_.push_back(slice->wall_time - *last_wall_);
      if (intervals_.size() > 64) intervals_.pop_front();
    }
    last_wall_ = slice->wall_time;
    last_sealed_ = slice->time_index;
    ++t_total_;

    const Eigen::RowVectorXd means = slice->values.colwise().mean();
    for (Index m = 0; m < metrics(); ++m) summary_[static_cast<std::size_t>(m)].push_back(means(m));
    summary_times_.push_back(slice->time_index);

    window_.push_back(slice);
    while (static_cast<Index>(window_.size()) > config_.window_capacity) window_.pop_front();
    evict_comm();

    const SlicePtr ready = slice;
    for (const auto& s : subscribers_) s(ready);
  }

  void evict_comm() {
    if (window_.empty()) return;
    const std::int64_t oldest = oldest_retained();
    for (auto it = comm_.begin(); it != comm_.end() && it->first < oldest;) {
      if (pinned_.count(it->first)) {
        ++it;
      } else {
        it = comm_.erase(it);
      }
    }
  }

  Index n_;
  std::vector<std::string> names_;
  Hierarchy hierarchy_;
  StoreConfig config_;
  IngestCounters counters_;

  std::map<std::int64_t, Pending> pending_;
  std::deque<SlicePtr> window_;
  std::int64_t t_total_ = 0;
  std::optional<std::int64_t> last_sealed_;
  std::optional<double> last_wall_;
  std::deque<double> intervals_;

  std::vector<std::vector<double>> summary_;
  std::vector<std::int64_t> summary_times_;

  std::map<std::int64_t, CommGraphFrame> comm_;
  std::map<std::int64_t, int> pinned_;

  std::vector<Subscriber> subscribers_;
};

}  // namespace perfstream
