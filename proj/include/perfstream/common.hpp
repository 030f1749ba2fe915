#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>

#include <Eigen/Dense>

namespace perfstream {

using Index = Eigen::Index;
using SteadyClock = std::chrono::steady_clock;
using Seconds = std::chrono::duration<double>;
using Millis = std::chrono::duration<double, std::milli>;

/// Deterministic RNG used throughout the analysis modules.
using Rng = std::mt19937_64;

/// Mixes a run seed with a stream/epoch counter so that every refresh gets
/// an independent but reproducible generator (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// A latency budget. An empty limit means "unlimited".
class Budget {
 public:
  constexpr Budget() = default;
  explicit Budget(Seconds limit) : limit_(limit) {}

  static Budget unlimited() { return Budget{}; }
  static Budget millis(double ms) { return Budget{Seconds(ms / 1000.0)}; }

  bool is_unlimited() const { return !limit_.has_value(); }
  std::optional<Seconds> limit() const { return limit_; }
  double seconds() const {
    return limit_ ? limit_->count() : std::numeric_limits<double>::infinity();
  }

 private:
  std::optional<Seconds> limit_;
};

/// Wall-clock deadline derived from a Budget, started on construction.
class Deadline {
 public:
  explicit Deadline(Budget budget) : budget_(budget), start_(SteadyClock::now()) {}

  Seconds elapsed() const { return SteadyClock::now() - start_; }

  bool expired() const {
    if (budget_.is_unlimited()) return false;
    return elapsed() >= *budget_.limit();
  }

  /// Remaining time; +inf when unlimited, may be negative after expiry.
  double remaining_seconds() const {
    return budget_.seconds() - elapsed().count();
  }

  Budget remaining() const {
    if (budget_.is_unlimited()) return Budget::unlimited();
    return Budget{Seconds(std::max(0.0, remaining_seconds()))};
  }

 private:
  Budget budget_;
  SteadyClock::time_point start_;
};

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return m.allFinite();
}

}  // namespace perfstream
