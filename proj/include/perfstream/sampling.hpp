#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "perfstream/common.hpp"

namespace perfstream {

/// Draws entities for progressive processing: each batch takes up to `m`
/// not-yet-drawn members from every group, so that a budget-limited pass still
/// covers all previously found clusters. Draws are without replacement.
class StratifiedSampler {
 public:
  /// `groups[i]` is entity i's group label; labels outside [0, k) are treated
  /// as one extra group.
  StratifiedSampler(std::span<const int> groups, int k, Index per_group, Rng& rng)
      : per_group_(std::max<Index>(1, per_group)) {
    const int buckets = std::max(1, k) + 1;
    members_.assign(static_cast<std::size_t>(buckets), {});
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const int g = groups[i];
      const int b = (g >= 0 && g < k) ? g : buckets - 1;
      members_[static_cast<std::size_t>(b)].push_back(static_cast<Index>(i));
    }
    for (auto& m : members_) std::shuffle(m.begin(), m.end(), rng);
    cursor_.assign(members_.size(), 0);
    for (const auto& m : members_) remaining_ += m.size();
  }

  /// All entities in one group, shuffled.
  StratifiedSampler(Index n, Index per_group, Rng& rng)
      : StratifiedSampler(std::vector<int>(static_cast<std::size_t>(n), 0), 1, per_group, rng) {}

  bool exhausted() const { return remaining_ == 0; }
  std::size_t remaining() const { return remaining_; }

  std::vector<Index> next_batch() {
    std::vector<Index> batch;
    for (std::size_t g = 0; g < members_.size(); ++g) {
      auto& cur = cursor_[g];
      const auto& m = members_[g];
      const std::size_t take =
          std::min<std::size_t>(static_cast<std::size_t>(per_group_), m.size() - cur);
      batch.insert(batch.end(), m.begin() + static_cast<std::ptrdiff_t>(cur),
                   m.begin() + static_cast<std::ptrdiff_t>(cur + take));
      cur += take;
      remaining_ -= take;
    }
    return batch;
  }

 private:
  Index per_group_;
  std::vector<std::vector<Index>> members_;
  std::vector<std::size_t> cursor_;
  std::size_t remaining_ = 0;
};

}  // namespace perfstream
