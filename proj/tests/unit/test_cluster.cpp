#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles/oracles.hpp"
#include "perfstream/progressive_cluster.hpp"

using namespace perfstream;

namespace {

struct Blobs {
  Eigen::MatrixXd x;
  std::vector<int> truth;
};

Blobs three_blobs(Index n, Index w, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  Blobs b;
  b.x.resize(n, w);
  for (Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 3);
    b.truth.push_back(c);
    for (Index j = 0; j < w; ++j) b.x(i, j) = 10.0 * c + g(rng);
  }
  return b;
}

}  // namespace

TEST(Reassign, SpecExamples) {
  const std::vector<int> prev{0, 0, 1, 1}, next{1, 1, 0, 0};
  EXPECT_EQ(reassign_ids(prev, next, 2), prev);
  const std::vector<int> prev2{0, 0, 0, 1}, next2{2, 2, 1, 1};
  EXPECT_EQ(reassign_ids(prev2, next2, 3), (std::vector<int>{0, 0, 1, 1}));
}

TEST(Reassign, RecoversPermutedPartition) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + trial % 6;
    std::vector<int> prev(200);
    for (int& v : prev) v = static_cast<int>(rng() % static_cast<unsigned>(k));
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> next;
    for (int v : prev) next.push_back(perm[static_cast<std::size_t>(v)]);
    EXPECT_EQ(reassign_ids(prev, next, k, Budget::unlimited(), rng()), prev);
  }
}

TEST(Reassign, OutputIsBijectiveRelabeling) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 1 + trial % 7;
    std::vector<int> prev(50), next(50);
    for (int& v : prev) v = static_cast<int>(rng() % static_cast<unsigned>(k));
    for (int& v : next) v = static_cast<int>(rng() % static_cast<unsigned>(k));
    const std::vector<int> map = relabel_map(prev, next, k, Budget::unlimited(), rng);
    std::set<int> image(map.begin(), map.end());
    EXPECT_EQ(static_cast<int>(image.size()), k);
    EXPECT_EQ(*image.begin(), 0);
    EXPECT_EQ(*image.rbegin(), k - 1);
    const std::vector<int> out = reassign_ids(prev, next, k, Budget::unlimited(), rng);
    for (std::size_t i = 0; i < next.size(); ++i)
      for (std::size_t j = 0; j < next.size(); ++j) EXPECT_EQ(next[i] == next[j], out[i] == out[j]);
  }
}

TEST(Reassign, RejectsOutOfRangeLabels) {
  const std::vector<int> prev{0, 1}, next{0, 3};
  EXPECT_THROW((void)reassign_ids(prev, next, 2), std::invalid_argument);
}

TEST(Cluster, RejectsBadConfigAndShapes) {
  ClusterConfig c;
  c.k = 0;
  EXPECT_THROW((void)ClusterModel::create(c), std::invalid_argument);
  c.k = 5;
  const ClusterModel m = ClusterModel::create(c);
  EXPECT_THROW((void)refresh(m, Eigen::MatrixXd::Zero(4, 3)), std::invalid_argument);
}

TEST(Cluster, ThreeBlobsMatchBatchOracle) {
  const Blobs b = three_blobs(256, 16, 0.1, 1);
  ClusterConfig cfg;
  cfg.budget = Budget::millis(200);
  ClusterModel m = refresh(ClusterModel::create(cfg), b.x);
  const oracle::KMeansResult ref = oracle::batch_kmeans(b.x, 3, 10, 7);
  EXPECT_GE(oracle::adjusted_rand_index(m.assignments, ref.labels), 0.99);
  EXPECT_EQ(m.processed_count, 256);
  EXPECT_LE(ref.within_ss, oracle::within_ss(b.x, m.assignments, 3) + 1e-9);
}

TEST(Cluster, ZeroBudgetKeepsCentersAndAssignsNearest) {
  const Blobs b = three_blobs(90, 8, 0.5, 2);
  ClusterModel m = refresh(ClusterModel::create({}), b.x, Budget::unlimited());
  const ClusterModel z = refresh(m, b.x, Budget::millis(0));
  EXPECT_EQ(z.processed_count, 0);
  EXPECT_EQ(z.centers, m.centers);
  for (Index i = 0; i < b.x.rows(); ++i)
    EXPECT_EQ(z.assignments[static_cast<std::size_t>(i)], detail::nearest_center(m.centers, b.x.row(i)));
}

TEST(Cluster, StaticStreamKeepsAssignments) {
  const Blobs b = three_blobs(300, 20, 2.0, 3);
  ClusterModel m = refresh(ClusterModel::create({}), b.x);
  const std::vector<int> first = m.assignments;
  for (int r = 0; r < 20; ++r) {
    m = refresh(m, b.x);
    EXPECT_EQ(m.assignments, first) << "refresh " << r;
  }
}

TEST(Cluster, AssignmentsAreNearestCenters) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Blobs b = three_blobs(200 + static_cast<Index>(seed) * 30, 6, 4.0, seed);
    ClusterConfig cfg;
    cfg.k = 2 + static_cast<int>(seed % 4);
    cfg.seed = seed;
    ClusterModel m = ClusterModel::create(cfg);
    for (int r = 0; r < 3; ++r) {
      m = refresh(m, b.x, Budget::millis(seed % 2 ? 0.05 : 50));
      for (Index i = 0; i < b.x.rows(); ++i) {
        const int a = m.assignments[static_cast<std::size_t>(i)];
        ASSERT_GE(a, 0);
        ASSERT_LT(a, cfg.k);
        const double da = (b.x.row(i) - m.centers.row(a)).squaredNorm();
        for (int c = 0; c < cfg.k; ++c) EXPECT_LE(da, (b.x.row(i) - m.centers.row(c)).squaredNorm());
      }
      Index total = 0;
      for (Index s : m.cluster_sizes()) total += s;
      EXPECT_EQ(total, b.x.rows());
    }
  }
}

TEST(Cluster, NoEmptyClusterAfterRefresh) {
  // Two distinct behaviors but k = 3: every cluster must still own an entity.
  Eigen::MatrixXd x(40, 4);
  for (Index i = 0; i < 40; ++i) x.row(i).setConstant(i < 20 ? 0.0 : 5.0);
  x(0, 0) = 0.1;
  const ClusterModel m = refresh(ClusterModel::create({}), x, Budget::unlimited());
  for (Index s : m.cluster_sizes()) EXPECT_GT(s, 0);
}

TEST(Cluster, WidthChangeReseeds) {
  const Blobs b = three_blobs(60, 8, 0.5, 4);
  ClusterModel m = refresh(ClusterModel::create({}), b.x);
  EXPECT_TRUE(m.reseeded);
  m = refresh(m, b.x);
  EXPECT_FALSE(m.reseeded);
  m = refresh(m, b.x.leftCols(5));
  EXPECT_TRUE(m.reseeded);
  EXPECT_EQ(m.width(), 5);
}

TEST(Cluster, CoverageMonotoneInBudget) {
  const Blobs b = three_blobs(5000, 50, 1.0, 5);
  ClusterModel seeded = refresh(ClusterModel::create({}), b.x, Budget::millis(0.01));
  Index last = -1;
  for (double ms : {0.0, 0.5, 5.0, 1e6}) {
    const ClusterModel m = refresh(seeded, b.x, Budget::millis(ms));
    EXPECT_LE(m.processed_count, b.x.rows());
    EXPECT_GE(m.processed_count, last);
    last = m.processed_count;
  }
  EXPECT_EQ(last, b.x.rows());
}

TEST(Cluster, ZNormalizationClustersByShape) {
  // Same shape at different magnitudes vs an opposite shape.
  Eigen::MatrixXd x(60, 10);
  for (Index i = 0; i < 60; ++i)
    for (Index j = 0; j < 10; ++j) x(i, j) = (i < 30 ? 1.0 : -1.0) * static_cast<double>(j) * (1.0 + static_cast<double>(i % 5));
  ClusterConfig cfg;
  cfg.k = 2;
  cfg.z_normalize = true;
  const ClusterModel m = refresh(ClusterModel::create(cfg), x, Budget::unlimited());
  for (Index i = 1; i < 60; ++i)
    EXPECT_EQ(m.assignments[static_cast<std::size_t>(i)] == m.assignments[0], i < 30);
}
