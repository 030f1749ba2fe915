#include <gtest/gtest.h>

#include <random>

#include "oracles/oracles.hpp"
#include "perfstream/ipca.hpp"

using namespace perfstream;

namespace {

Eigen::MatrixXd gaussian(Index rows, Index cols, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

// Rows with a decaying spectrum so eigenvalues are well separated.
Eigen::MatrixXd anisotropic(Index rows, Index cols, std::uint64_t seed) {
  Eigen::MatrixXd m = gaussian(rows, cols, seed);
  for (Index j = 0; j < cols; ++j) m.col(j) *= std::pow(0.8, static_cast<double>(j));
  Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(cols, cols, seed + 7)).householderQ();
  return m * q + Eigen::RowVectorXd::LinSpaced(cols, -2.0, 3.0).replicate(rows, 1);
}

}  // namespace

TEST(Ipca, CreateRejectsBadArguments) {
  EXPECT_THROW(PcaModel::create(0, 1), std::invalid_argument);
  EXPECT_THROW(PcaModel::create(3, 0), std::invalid_argument);
  EXPECT_THROW(PcaModel::create(3, 1, 0.0), std::invalid_argument);
  EXPECT_THROW(PcaModel::create(3, 1, 1.5), std::invalid_argument);
  EXPECT_EQ(PcaModel::create(3, 10).max_components, 3);
}

TEST(Ipca, RejectsMismatchedOrNonFiniteBatch) {
  PcaModel m = PcaModel::create(3, 2);
  EXPECT_THROW((void)ipca_update(m, Eigen::MatrixXd::Zero(2, 4)), std::invalid_argument);
  EXPECT_THROW((void)ipca_update(m, Eigen::MatrixXd::Zero(0, 3)), std::invalid_argument);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(2, 3);
  bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
  m = ipca_update(m, Eigen::MatrixXd::Random(4, 3));
  const PcaModel before = m;
  EXPECT_THROW((void)ipca_update(m, bad), std::invalid_argument);
  EXPECT_EQ(m.n_seen, before.n_seen);
  EXPECT_TRUE(m.mean.isApprox(before.mean));
}

TEST(Ipca, BatchAtMeanLeavesMeanUnchanged) {
  PcaModel m = ipca_update(PcaModel::create(4, 2), anisotropic(30, 4, 1));
  const Eigen::VectorXd mean = m.mean;
  Eigen::MatrixXd at_mean = mean.transpose().replicate(5, 1);
  const PcaModel next = ipca_update(m, at_mean);
  EXPECT_LT((next.mean - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(next.n_seen, m.n_seen + 5);
}

TEST(Ipca, SequentialSingleRowsMatchTwoRowBatchMean) {
  const Eigen::MatrixXd x = gaussian(2, 5, 3);
  PcaModel a = PcaModel::create(5, 2);
  a = ipca_update(a, x.row(0));
  a = ipca_update(a, x.row(1));
  const PcaModel b = ipca_update(PcaModel::create(5, 2), x);
  EXPECT_LT((a.mean - b.mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ipca, FullBatchMatchesDenseEigendecomposition) {
  for (Index dim : {2, 5, 13, 50}) {
    const Eigen::MatrixXd x = anisotropic(3 * dim + 10, dim, static_cast<std::uint64_t>(dim));
    const PcaModel m = ipca_update(PcaModel::create(dim, dim), x);
    const oracle::PcaResult ref = oracle::batch_pca(x);
    ASSERT_EQ(m.num_components(), dim);
    EXPECT_LT(orthonormality_error(m), 1e-8);
    for (Index q : {Index{1}, Index{2}, dim / 2 + 1}) {
      const double angle = oracle::max_principal_angle(m.components.topRows(q), ref.eigenvectors.leftCols(q));
      EXPECT_LT(angle, 1e-6) << "dim=" << dim << " q=" << q;
    }
    const double n1 = static_cast<double>(x.rows() - 1);
    for (Index i = 0; i < dim; ++i)
      EXPECT_NEAR(m.singular_values(i) * m.singular_values(i) / n1, ref.eigenvalues(i),
                  1e-8 * ref.eigenvalues(0));
  }
}

TEST(Ipca, SequentialBatchesMatchDenseWhenAllComponentsKept) {
  const Index dim = 8;
  const Eigen::MatrixXd x = anisotropic(120, dim, 11);
  PcaModel m = PcaModel::create(dim, dim);
  for (Index r = 0; r < x.rows(); r += 7) m = ipca_update(m, x.middleRows(r, std::min<Index>(7, x.rows() - r)));
  const oracle::PcaResult ref = oracle::batch_pca(x);
  EXPECT_LT((m.mean - ref.mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(oracle::max_principal_angle(m.components.topRows(3), ref.eigenvectors.leftCols(3)), 1e-6);
}

TEST(Ipca, ProjectionReproducesBatchScoresUpToSign) {
  const Eigen::MatrixXd x = anisotropic(60, 6, 21);
  const PcaModel m = ipca_update(PcaModel::create(6, 6), x);
  const oracle::PcaResult ref = oracle::batch_pca(x);
  const Eigen::MatrixXd scores = project(m, x);
  for (Index c = 0; c < 3; ++c) {
    const double sign = scores.col(c).dot(ref.scores.col(c)) >= 0.0 ? 1.0 : -1.0;
    EXPECT_LT((sign * scores.col(c) - ref.scores.col(c)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Ipca, ProjectOfMeanAndUnitDirection) {
  const PcaModel m = ipca_update(PcaModel::create(4, 4), anisotropic(40, 4, 5));
  Eigen::MatrixXd rows(2, 4);
  rows.row(0) = m.mean.transpose();
  rows.row(1) = m.mean.transpose() + m.components.row(1);
  const Eigen::MatrixXd s = project(m, rows);
  EXPECT_LT(s.row(0).cwiseAbs().maxCoeff(), 1e-12);
  for (Index c = 0; c < s.cols(); ++c) EXPECT_NEAR(s(1, c), c == 1 ? 1.0 : 0.0, 1e-9);
  EXPECT_THROW((void)project(m, Eigen::MatrixXd::Zero(1, 3)), std::invalid_argument);
}

TEST(Ipca, ZeroSpreadBatchIsMeanOnly) {
  PcaModel m = PcaModel::create(3, 2);
  m = ipca_update(m, Eigen::MatrixXd::Constant(4, 3, 2.0));
  EXPECT_EQ(m.num_components(), 0);
  EXPECT_TRUE(m.mean.isApprox(Eigen::VectorXd::Constant(3, 2.0)));
  m = ipca_update(m, anisotropic(20, 3, 2));
  EXPECT_GT(m.num_components(), 0);
  const Eigen::VectorXd sv = m.singular_values;
  const PcaModel same = ipca_update(m, m.mean.transpose());
  EXPECT_TRUE(same.components.isApprox(m.components));
  EXPECT_TRUE(same.singular_values.isApprox(sv));
}

TEST(Ipca, InvariantsHoldAcrossRandomUpdates) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const Index dim = 2 + static_cast<Index>(rng() % 20);
    const double f = trial % 2 ? 1.0 : 0.9;
    PcaModel m = PcaModel::create(dim, 1 + static_cast<Index>(rng() % dim), f);
    for (int step = 0; step < 10; ++step) {
      m = ipca_update(m, gaussian(1 + static_cast<Index>(rng() % 5), dim, rng()) * 3.0);
      EXPECT_LT(orthonormality_error(m), 1e-8);
      EXPECT_LE(m.num_components(), m.max_components);
      for (Index i = 1; i < m.singular_values.size(); ++i)
        EXPECT_LE(m.singular_values(i), m.singular_values(i - 1) + 1e-12);
      EXPECT_TRUE((m.singular_values.array() >= 0.0).all());
    }
  }
}

TEST(SignAlign, SpecExamples) {
  Eigen::RowVector2d prev(1, 0);
  auto a = sign_align(prev, Eigen::RowVector2d(-1, 0));
  EXPECT_TRUE(a.flipped[0]);
  EXPECT_TRUE(a.aligned.isApprox(Eigen::RowVector2d(1, 0)));
  a = sign_align(prev, Eigen::RowVector2d(0.8, 0.6));
  EXPECT_FALSE(a.flipped[0]);
  EXPECT_TRUE(a.aligned.isApprox(Eigen::RowVector2d(0.8, 0.6)));
  a = sign_align(prev, Eigen::RowVector2d(0, 1));
  EXPECT_FALSE(a.flipped[0]);
  a = sign_align(Eigen::RowVector2d(0, 0), Eigen::RowVector2d(-1, 0));
  EXPECT_FALSE(a.flipped[0]);
}

TEST(SignAlign, IdempotentAndNonNegativeCosine) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Eigen::MatrixXd prev = gaussian(3, 6, seed);
    const Eigen::MatrixXd next = gaussian(3, 6, seed + 1000);
    const auto once = sign_align(prev, next);
    const auto twice = sign_align(prev, once.aligned);
    EXPECT_EQ(once.aligned, twice.aligned);
    for (Index i = 0; i < 3; ++i) {
      EXPECT_GE(prev.row(i).dot(once.aligned.row(i)), 0.0);
      EXPECT_FALSE(twice.flipped[static_cast<std::size_t>(i)]);
    }
  }
}
