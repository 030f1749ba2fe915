#include <gtest/gtest.h>

#include <random>

#include "oracles/oracles.hpp"
#include "perfstream/progressive_dr.hpp"

using namespace perfstream;

namespace {

Eigen::MatrixXd groups_window(Index n, Index w, std::uint64_t seed, double sep = 6.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.5);
  Eigen::MatrixXd x(n, w);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < w; ++j) x(i, j) = (i % 2 ? sep : 0.0) * std::sin(0.3 * static_cast<double>(j) + 1.0) + g(rng);
  return x;
}

std::vector<int> alternating(Index n) {
  std::vector<int> v;
  for (Index i = 0; i < n; ++i) v.push_back(static_cast<int>(i % 2));
  return v;
}

}  // namespace

TEST(Dr, SeparatesTwoGroups) {
  const Index n = 200;
  const Eigen::MatrixXd x = groups_window(n, 24, 1);
  DrConfig cfg;
  cfg.budget = Budget::unlimited();
  const DrState s = refresh_layout(DrState::create(cfg), x, alternating(n));
  Eigen::RowVector2d c0 = Eigen::RowVector2d::Zero(), c1 = Eigen::RowVector2d::Zero();
  for (Index i = 0; i < n; ++i) (i % 2 ? c1 : c0) += s.layout.positions.row(i) / (n / 2.0);
  double spread = 0.0;
  for (Index i = 0; i < n; ++i) spread += (s.layout.positions.row(i) - (i % 2 ? c1 : c0)).norm() / n;
  EXPECT_GT((c1 - c0).norm(), 5.0 * spread);
  EXPECT_EQ(s.processed_count, n);
}

TEST(Dr, UnlimitedBudgetMatchesBatchPcaUpToSimilarity) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Index n = 150;
    const Eigen::MatrixXd x = groups_window(n, 12, seed);
    DrConfig cfg;
    cfg.budget = Budget::unlimited();
    cfg.seed = seed;
    const DrState s = refresh_layout(DrState::create(cfg), x, alternating(n));
    const oracle::PcaResult ref = oracle::batch_pca(x);
    Layout2D r;
    r.positions = ref.scores.leftCols(2);
    const ProcrustesResult fit = procrustes_align(r, s.layout);
    EXPECT_LT(fit.disparity, 1e-6 * static_cast<double>(n));
  }
}

TEST(Dr, StaticWindowDoesNotDrift) {
  const Index n = 120;
  const Eigen::MatrixXd x = groups_window(n, 16, 2);
  DrConfig cfg;
  cfg.budget = Budget::unlimited();
  DrState s = DrState::create(cfg);
  Layout2D prev;
  for (int e = 0; e < 4; ++e) {
    s = refresh_layout(s, x, alternating(n));
    if (e >= 1) EXPECT_LT((s.layout.positions - prev.positions).rowwise().norm().maxCoeff(), 1e-6);
    prev = s.layout;
  }
  EXPECT_EQ(s.epoch, 4u);
}

TEST(Dr, AlignmentUndoesForcedFlip) {
  const Index n = 80;
  const Eigen::MatrixXd x = groups_window(n, 10, 3);
  DrConfig cfg;
  cfg.budget = Budget::unlimited();
  DrState s = refresh_layout(DrState::create(cfg), x, alternating(n));
  for (int e = 0; e < 5; ++e) {
    Layout2D raw = project_layout(s.pca, x);
    raw.positions.col(1) *= -1.0;  // PC2 sign flip as an eigensolver may emit it
    if (e % 2) raw.positions.col(0) *= -1.0;
    const Eigen::VectorXd prev_y = s.layout.positions.col(1);
    s = advance_layout(s, raw, false);
    EXPECT_LE(s.aligned_disparity, s.raw_disparity);
    EXPECT_LT(s.aligned_disparity, 1e-9);
    const Eigen::VectorXd y = s.layout.positions.col(1);
    EXPECT_GT((y.array() - y.mean()).matrix().dot((prev_y.array() - prev_y.mean()).matrix()), 0.0);
  }
}

TEST(Dr, AlignmentNeverHurtsUnderBudget) {
  const Index n = 400;
  DrConfig cfg;
  cfg.budget = Budget::millis(0.2);
  DrState s = DrState::create(cfg);
  for (int e = 0; e < 10; ++e) {
    const Eigen::MatrixXd x = groups_window(n, 30, 10 + static_cast<std::uint64_t>(e));
    s = refresh_layout(s, x, alternating(n));
    EXPECT_LE(s.aligned_disparity, s.raw_disparity + 1e-12);
    EXPECT_TRUE(s.layout.positions.allFinite());
    EXPECT_EQ(s.layout.rows(), n);
    EXPECT_LE(s.processed_count, n);
  }
}

TEST(Dr, WidthChangeSkipsAlignmentAndFlags) {
  const Index n = 50;
  DrState s = refresh_layout(DrState::create({}), groups_window(n, 10, 4), alternating(n));
  EXPECT_FALSE(s.layout_break);
  s = refresh_layout(s, groups_window(n, 12, 4), alternating(n));
  EXPECT_TRUE(s.layout_break);
  EXPECT_EQ(s.pca.dim, 12);
  s = refresh_layout(s, groups_window(n, 12, 5), alternating(n));
  EXPECT_FALSE(s.layout_break);
}

TEST(Dr, WindowWithOneColumnProjects) {
  const Index n = 30;
  const DrState s = refresh_layout(DrState::create({}), groups_window(n, 1, 6), {});
  EXPECT_EQ(s.layout.rows(), n);
  EXPECT_TRUE(s.layout.positions.col(1).isZero());
}

TEST(Dr, RejectsEntityCountChange) {
  DrState s = refresh_layout(DrState::create({}), groups_window(20, 5, 1), {});
  EXPECT_THROW((void)refresh_layout(s, groups_window(21, 5, 1), {}), std::invalid_argument);
}

TEST(Dr, WideStaticWindowRepeatsLayoutExactly) {
  // Wider than the tracked components, so the fit depends on entity order.
  const Index n = 90;
  const Eigen::MatrixXd x = groups_window(n, 40, 6);
  DrConfig cfg;
  cfg.budget = Budget::unlimited();
  DrState s = refresh_layout(DrState::create(cfg), x, alternating(n));
  const Layout2D first = s.layout;
  s = refresh_layout(s, x, alternating(n));
  EXPECT_LT((s.layout.positions - first.positions).cwiseAbs().maxCoeff(), 1e-9);
}
