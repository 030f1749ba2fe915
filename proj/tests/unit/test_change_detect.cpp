#include <gtest/gtest.h>

#include <random>

#include "oracles/oracles.hpp"
#include "perfstream/change_detect.hpp"

using namespace perfstream;

namespace {

Eigen::VectorXd noisy_slice(Index n, double level, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = level + g(rng);
  return v;
}

int count_null_alarms(double alpha, int seeds, int length) {
  int alarms = 0;
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(s) + 1);
    std::normal_distribution<double> g(0.0, 1.0);
    DetectorConfig cfg;
    cfg.alpha = alpha;
    AffMeanDetector det(cfg);
    for (int t = 0; t < length; ++t) alarms += det.update(g(rng)) ? 1 : 0;
  }
  return alarms;
}

}  // namespace

TEST(Detector, ZerosNeverFlag) {
  AffMeanDetector det;
  for (int i = 0; i < 1000; ++i) EXPECT_FALSE(det.update(0.0));
}

TEST(Detector, JumpIsFlaggedImmediately) {
  AffMeanDetector det;
  for (int i = 0; i < 50; ++i) EXPECT_FALSE(det.update(0.0));
  EXPECT_TRUE(det.update(100.0));
  // Restarted: burn-in begins with the new level.
  EXPECT_TRUE(det.in_burn_in());
  for (int i = 0; i < 50; ++i) EXPECT_FALSE(det.update(100.0));
}

TEST(Detector, NoFlagsDuringBurnIn) {
  AffMeanDetector det;
  for (int i = 0; i < 9; ++i) EXPECT_FALSE(det.update(i % 2 ? 1e9 : -1e9));
}

TEST(Detector, AlphaValidation) {
  DetectorConfig c;
  c.alpha = 1.5;
  EXPECT_THROW(AffMeanDetector{c}, std::invalid_argument);
  AffMeanDetector det;
  EXPECT_THROW(det.set_alpha(-0.1), std::invalid_argument);
  EXPECT_DOUBLE_EQ(det.alpha(), 0.01);
  det.set_alpha(0.0);  // never flags
  for (int i = 0; i < 20; ++i) det.update(0.0);
  EXPECT_FALSE(det.update(1e6));
}

TEST(Detector, NullFalseAlarmsDecreaseWithAlpha) {
  const int a05 = count_null_alarms(0.05, 200, 500);
  const int a01 = count_null_alarms(0.01, 200, 500);
  const int a001 = count_null_alarms(0.001, 200, 500);
  EXPECT_GE(a05, a01);
  EXPECT_GE(a01, a001);
  EXPECT_GT(a05, a001);
}

TEST(Detector, ForgettingStaysInRange) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  AffMeanDetector det;
  for (int t = 0; t < 2000; ++t) {
    det.update(g(rng) + (t / 300) * 0.5);
    EXPECT_GE(det.forgetting(), 0.6);
    EXPECT_LE(det.forgetting(), 1.0);
  }
}

TEST(Representative, ConstantStreamHasNoChanges) {
  MetricChangeDetector cpd(16);
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(16, 1.0, 4.0);
  for (int t = 0; t < 500; ++t) {
    const ChangeEvent ev = cpd.push_slice(v, t);
    EXPECT_FALSE(ev.change.has_value());
    EXPECT_NEAR(ev.representative, 0.0, 1e-9);
  }
  EXPECT_TRUE(cpd.change_points().empty());
}

TEST(Representative, SliceAtRunningMeanScoresZero) {
  std::mt19937_64 rng(4);
  RepresentativeSeries rep = RepresentativeSeries::create(8);
  for (int t = 0; t < 30; ++t) rep.push(noisy_slice(8, 0.0, rng));
  const Eigen::VectorXd mean = rep.pca.mean;
  const double v = *rep.push(mean);
  EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Representative, AlignedPcsHaveNonNegativeCosine) {
  std::mt19937_64 rng(5);
  RepresentativeSeries rep = RepresentativeSeries::create(12);
  Eigen::VectorXd prev;
  for (int t = 0; t < 300; ++t) {
    rep.push(noisy_slice(12, t > 150 ? 3.0 : 0.0, rng));
    if (prev.size() && rep.last_pc.size()) EXPECT_GE(prev.dot(rep.last_pc), 0.0);
    if (rep.last_pc.size()) {
      EXPECT_NEAR(rep.last_pc.norm(), 1.0, 1e-9);
      prev = rep.last_pc;
    }
  }
  EXPECT_EQ(rep.series.size(), 300u);
}

TEST(Representative, NonFiniteSliceIsSkipped) {
  MetricChangeDetector cpd(4);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(4);
  cpd.push_slice(v, 0);
  v(2) = std::numeric_limits<double>::infinity();
  cpd.push_slice(v, 1);
  EXPECT_EQ(cpd.representative().skipped, 1);
  EXPECT_EQ(cpd.representative().series.size(), 1u);
  EXPECT_THROW(cpd.push_slice(Eigen::VectorXd::Ones(4), 1), std::invalid_argument);
  EXPECT_THROW(cpd.push_slice(Eigen::VectorXd::Ones(5), 2), std::invalid_argument);
}

TEST(Representative, LevelShiftDetectedNearOracle) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 100);
    MetricChangeDetector cpd(16);
    std::vector<double> group_mean;
    for (int t = 0; t < 400; ++t) {
      const Eigen::VectorXd v = noisy_slice(16, t >= 200 ? 5.0 : 0.0, rng);
      group_mean.push_back(v.mean());
      cpd.push_slice(v, t);
    }
    const auto offline = oracle::offline_cusum(group_mean);
    ASSERT_FALSE(offline.empty());
    bool near_truth = false;
    for (auto c : offline) near_truth |= (c >= 198 && c <= 202);
    EXPECT_TRUE(near_truth);
    for (auto c : cpd.change_points())
      if (c >= 200 && c <= 210) {
        ++hits;
        break;
      }
  }
  EXPECT_GE(hits, 19);
}

TEST(Representative, SensitivityIncreasesWithAlpha) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::size_t counts[2];
    int idx = 0;
    for (double alpha : {0.05, 0.001}) {
      std::mt19937_64 rng(seed);
      DetectorConfig cfg;
      cfg.alpha = alpha;
      MetricChangeDetector cpd(8, cfg);
      for (int t = 0; t < 600; ++t) cpd.push_slice(noisy_slice(8, (t / 150) % 2 ? 2.0 : 0.0, rng), t);
      counts[idx++] = cpd.change_points().size();
      for (std::size_t i = 1; i < cpd.change_points().size(); ++i)
        EXPECT_LT(cpd.change_points()[i - 1], cpd.change_points()[i]);
    }
    EXPECT_GE(counts[0], counts[1]);
  }
}
