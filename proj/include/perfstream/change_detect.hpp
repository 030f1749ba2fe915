#pragma once

// Online change-point detection over n concurrent series.
//
// Each sealed slice (one value per entity) is folded into a one-component
// incremental PCA; the slice's score on the sign-coherent first component is
// the "representative" value, which feeds a single-parameter detector built
// on an adaptive-forgetting-factor mean estimator.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "perfstream/common.hpp"
#include "perfstream/ipca.hpp"

namespace perfstream {

struct DetectorConfig {
  double alpha = 0.01;        // significance level, 0 <= alpha <= 1
  int burn_in = 10;           // observations used to estimate the baseline
  double step_size = 0.01;    // forgetting-factor gradient step (standardized units)
  double min_forgetting = 0.6;
};

/// Adaptive-forgetting-factor mean detector. O(1) time and memory per point:
/// the state is a fixed set of scalars, no history is buffered.
class AffMeanDetector {
 public:
  explicit AffMeanDetector(DetectorConfig config = {}) : config_(config) {
    validate(config_);
    threshold_ = critical_value(config_.alpha);
  }

  static void validate(const DetectorConfig& c) {
    if (!(c.alpha >= 0.0 && c.alpha <= 1.0))
      throw std::invalid_argument("detector: alpha must lie in [0, 1]");
    if (c.burn_in < 2) throw std::invalid_argument("detector: burn_in must be at least 2");
  }

  /// Changes the significance level; affects future points only.
  void set_alpha(double alpha) {
    DetectorConfig c = config_;
    c.alpha = alpha;
    validate(c);
    config_ = c;
    threshold_ = critical_value(alpha);
  }

  double alpha() const { return config_.alpha; }
  const DetectorConfig& config() const { return config_; }

  /// Feeds one observation; returns true when a change is flagged at it.
  bool update(double x) {
    if (!std::isfinite(x)) return false;
    if (burn_count_ < config_.burn_in) {
      ++burn_count_;
      const double delta = x - base_mean_;
      base_mean_ += delta / burn_count_;
      base_m2_ += delta * (x - base_mean_);
      if (burn_count_ == config_.burn_in) {
        base_sd_ = std::sqrt(base_m2_ / (burn_count_ - 1));
        base_sd_ = std::max(base_sd_, 1e-12 * std::max(1.0, std::abs(base_mean_)));
      }
      return false;
    }

    const double z = standardize(x);

    // Gradient step on lambda using the one-step-ahead prediction error.
    if (w_ > 0.0) {
      const double grad = -2.0 * (z - mean_) * dmean_;
      lambda_ = std::clamp(lambda_ - config_.step_size * grad, config_.min_forgetting, 1.0);
    }

    const double m_prev = m_, w_prev = w_;
    m_ = lambda_ * m_ + z;
    w_ = lambda_ * w_ + 1.0;
    dm_ = lambda_ * dm_ + m_prev;
    dw_ = lambda_ * dw_ + w_prev;
    v_ = lambda_ * lambda_ * v_ + 1.0;
    mean_ = m_ / w_;
    dmean_ = (dm_ - mean_ * dw_) / w_;

    // Under the baseline, mean_ ~ N(0, v / w^2).
    const double sd = std::sqrt(v_) / w_;
    const bool flagged = std::abs(mean_) > threshold_ * sd;
    if (flagged) restart(x);
    return flagged;
  }

  bool in_burn_in() const { return burn_count_ < config_.burn_in; }
  double forgetting() const { return lambda_; }
  double baseline_mean() const { return base_mean_; }
  double baseline_sd() const { return base_sd_; }

  /// Restarts the baseline with `x` as its first burn-in observation.
  void restart(double x) {
    const DetectorConfig c = config_;
    const double thr = threshold_;
    *this = AffMeanDetector();
    config_ = c;
    threshold_ = thr;
    burn_count_ = 1;
    base_mean_ = x;
  }

 private:
  static double critical_value(double alpha) {
    if (alpha <= 0.0) return std::numeric_limits<double>::infinity();
    if (alpha >= 1.0) return 0.0;
    boost::math::normal_distribution<double> standard;
    return boost::math::quantile(boost::math::complement(standard, alpha / 2.0));
  }

  double standardize(double x) const {
    const double d = x - base_mean_;
    if (std::abs(d) <= 1e-12 * std::max(1.0, std::abs(base_mean_))) return 0.0;
    return d / base_sd_;
  }

  DetectorConfig config_;
  double threshold_ = 0.0;

  int burn_count_ = 0;
  double base_mean_ = 0.0, base_m2_ = 0.0, base_sd_ = 1.0;

  double lambda_ = 1.0;
  double m_ = 0.0, w_ = 0.0, dm_ = 0.0, dw_ = 0.0, v_ = 0.0;
  double mean_ = 0.0, dmean_ = 0.0;
};

/// Reduces n concurrent series to one value per slice via IPCA(q = 1).
struct RepresentativeSeries {
  PcaModel pca;
  Eigen::VectorXd last_pc;      // empty until the first component exists
  std::vector<double> series;   // one value per absorbed slice
  std::int64_t skipped = 0;     // non-finite slices
  std::int64_t flips = 0;       // sign corrections applied
  bool sign_adjust = true;

  static RepresentativeSeries create(Index entities, bool sign_adjust = true,
                                     double forgetting = 1.0) {
    RepresentativeSeries r;
    r.pca = PcaModel::create(entities, 1, forgetting);
    r.sign_adjust = sign_adjust;
    return r;
  }

  Index entities() const { return pca.dim; }

  /// Absorbs a slice and returns its representative value, or nullopt when the
  /// slice is rejected (wrong size or non-finite values).
  std::optional<double> push(const Eigen::Ref<const Eigen::VectorXd>& slice) {
    if (slice.size() != pca.dim)
      throw std::invalid_argument("representative series: slice length does not match entity count");
    if (!slice.allFinite()) {
      ++skipped;
      return std::nullopt;
    }
    pca = ipca_update(pca, slice.transpose());
    if (pca.num_components() > 0) {
      Eigen::RowVectorXd pc = pca.components.row(0);
      if (last_pc.size() == 0) {
        // Initial orientation: loadings sum non-negative, so a common rise of
        // the entities reads as a rise of the representative value.
        if (pc.sum() < 0.0) pc = -pc;
      } else if (sign_adjust) {
        const SignAlignment a = sign_align(last_pc.transpose(), pc);
        if (a.flipped[0]) ++flips;
        pc = a.aligned.row(0);
      }
      pca.components.row(0) = pc;
      last_pc = pc.transpose();
    }
    const double value = pca.num_components() > 0
                             ? (slice - pca.mean).dot(pca.components.row(0).transpose())
                             : 0.0;
    series.push_back(value);
    return value;
  }
};

struct ChangeEvent {
  double representative = 0.0;
  std::optional<std::int64_t> change;
};

/// Representative series plus detector for one metric.
class MetricChangeDetector {
 public:
  MetricChangeDetector(Index entities, DetectorConfig config = {}, bool sign_adjust = true)
      : rep_(RepresentativeSeries::create(entities, sign_adjust)), detector_(config) {}

  ChangeEvent push_slice(const Eigen::Ref<const Eigen::VectorXd>& values, std::int64_t time_index) {
    if (last_time_ && time_index <= *last_time_)
      throw std::invalid_argument("push_slice: time index must increase");
    last_time_ = time_index;
    ChangeEvent ev;
    const auto rep = rep_.push(values);
    if (!rep) return ev;
    ev.representative = *rep;
    if (detector_.update(*rep)) {
      change_points_.push_back(time_index);
      ev.change = time_index;
    }
    return ev;
  }

  void set_alpha(double alpha) { detector_.set_alpha(alpha); }
  const std::vector<std::int64_t>& change_points() const { return change_points_; }
  const RepresentativeSeries& representative() const { return rep_; }
  RepresentativeSeries& representative() { return rep_; }
  const AffMeanDetector& detector() const { return detector_; }

 private:
  RepresentativeSeries rep_;
  AffMeanDetector detector_;
  std::vector<std::int64_t> change_points_;
  std::optional<std::int64_t> last_time_;
};

}  // namespace perfstream
