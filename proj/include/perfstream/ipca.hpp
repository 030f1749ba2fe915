#pragma once

// Incremental PCA (sequential Karhunen-Loeve update with mean correction and
// optional forgetting), plus the sign-coherence rule used to keep successive
// principal components pointing the same way.

#include <algorithm>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "perfstream/common.hpp"

namespace perfstream {

/// Incremental PCA state. A plain value: updates return a new model.
struct PcaModel {
  Index dim = 0;
  Index max_components = 1;
  double forgetting = 1.0;

  Eigen::VectorXd mean;             // dim
  Eigen::MatrixXd components;       // q x dim, orthonormal rows
  Eigen::VectorXd singular_values;  // q, non-increasing
  std::int64_t n_seen = 0;
  double weight = 0.0;  // effective observation count after forgetting

  static PcaModel create(Index dim, Index max_components, double forgetting = 1.0) {
    if (dim <= 0) throw std::invalid_argument("PcaModel: dim must be positive");
    if (max_components <= 0) throw std::invalid_argument("PcaModel: need at least one component");
    if (!(forgetting > 0.0 && forgetting <= 1.0))
      throw std::invalid_argument("PcaModel: forgetting factor must lie in (0, 1]");
    PcaModel m;
    m.dim = dim;
    m.max_components = std::min(max_components, dim);
    m.forgetting = forgetting;
    m.mean = Eigen::VectorXd::Zero(dim);
    m.components.resize(0, dim);
    m.singular_values.resize(0);
    return m;
  }

  Index num_components() const { return components.rows(); }
  bool empty() const { return n_seen == 0; }
};

namespace detail {

// Thin SVD of a tall matrix through a Householder QR first; the SVD then runs
// on a small square factor. Returns left singular vectors and values.
inline void thin_svd(const Eigen::MatrixXd& m, Eigen::MatrixXd& u, Eigen::VectorXd& s) {
  const Index rows = m.rows(), cols = m.cols();
  if (rows > cols) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    Eigen::MatrixXd r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(r, Eigen::ComputeFullU);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
    u = q * svd.matrixU();
    s = svd.singularValues();
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
    u = svd.matrixU();
    s = svd.singularValues();
  }
}

}  // namespace detail

/// Absorbs a batch (rows are observations) into the model.
/// Throws std::invalid_argument on a shape mismatch or non-finite input; the
/// input model is never modified.
[[nodiscard]] inline PcaModel ipca_update(const PcaModel& model,
                                          const Eigen::Ref<const Eigen::MatrixXd>& batch) {
  if (batch.cols() != model.dim)
    throw std::invalid_argument("ipca_update: batch width does not match model dimension");
  if (batch.rows() < 1) throw std::invalid_argument("ipca_update: empty batch");
  if (!batch.allFinite()) throw std::invalid_argument("ipca_update: non-finite values in batch");

  const double m = static_cast<double>(batch.rows());
  const double f = model.forgetting;
  const double n_prev = f * model.weight;
  const double n_total = n_prev + m;

  const Eigen::VectorXd batch_mean = batch.colwise().mean().transpose();
  PcaModel next = model;
  next.n_seen = model.n_seen + batch.rows();
  next.weight = n_total;
  next.mean = (n_prev * model.mean + m * batch_mean) / n_total;

  // Augmented data: [f * U * S | centered batch | mean-shift column].
  const Index q_prev = model.num_components();
  const Index cols = q_prev + batch.rows() + 1;
  Eigen::MatrixXd aug(model.dim, cols);
  for (Index i = 0; i < q_prev; ++i)
    aug.col(i) = f * model.singular_values(i) * model.components.row(i).transpose();
  aug.middleCols(q_prev, batch.rows()) =
      (batch.rowwise() - batch_mean.transpose()).transpose();
  const double shift_scale = model.weight > 0.0 ? std::sqrt(n_prev * m / n_total) : 0.0;
  aug.col(cols - 1) = shift_scale * (batch_mean - model.mean);

  const double new_energy = aug.rightCols(batch.rows() + 1).norm();
  const double scale = std::max(1.0, aug.norm());
  if (new_energy <= 1e-14 * scale) {
    // Zero spread in the new data: mean-only update.
    next.singular_values = f * model.singular_values;
    return next;
  }

  Eigen::MatrixXd u;
  Eigen::VectorXd s;
  detail::thin_svd(aug, u, s);

  const double tol = static_cast<double>(std::max(model.dim, cols)) *
                     std::numeric_limits<double>::epsilon() * (s.size() > 0 ? s(0) : 0.0);
  Index rank = 0;
  while (rank < s.size() && s(rank) > tol) ++rank;
  const Index q = std::min(rank, model.max_components);

  next.components = u.leftCols(q).transpose();
  next.singular_values = s.head(q);
  return next;
}

/// Scores of `rows` (k x dim) in the model's component basis (k x q).
inline Eigen::MatrixXd project(const PcaModel& model,
                               const Eigen::Ref<const Eigen::MatrixXd>& rows) {
  if (rows.cols() != model.dim)
    throw std::invalid_argument("project: row width does not match model dimension");
  return (rows.rowwise() - model.mean.transpose()) * model.components.transpose();
}

struct SignAlignment {
  Eigen::MatrixXd aligned;
  std::vector<bool> flipped;
};

/// Negates each row of `next` whose cosine similarity with the matching row of
/// `prev` is strictly negative. Rows beyond the shorter of the two inputs and
/// zero-norm rows are left unchanged.
inline SignAlignment sign_align(const Eigen::Ref<const Eigen::MatrixXd>& prev,
                                const Eigen::Ref<const Eigen::MatrixXd>& next) {
  if (prev.rows() > 0 && prev.cols() != next.cols())
    throw std::invalid_argument("sign_align: component width mismatch");
  SignAlignment out{next, std::vector<bool>(static_cast<std::size_t>(next.rows()), false)};
  const Index rows = std::min(prev.rows(), next.rows());
  for (Index i = 0; i < rows; ++i) {
    const double dot = prev.row(i).dot(next.row(i));
    const double norms = prev.row(i).norm() * next.row(i).norm();
    if (norms == 0.0) continue;
    if (dot / norms < 0.0) {
      out.aligned.row(i) = -next.row(i);
      out.flipped[static_cast<std::size_t>(i)] = true;
    }
  }
  return out;
}

/// Max |<r_i, r_j> - delta_ij| over the component rows.
inline double orthonormality_error(const PcaModel& model) {
  if (model.num_components() == 0) return 0.0;
  const Eigen::MatrixXd gram = model.components * model.components.transpose();
  return (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

}  // namespace perfstream
