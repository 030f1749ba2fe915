#pragma once

#include <cstdint>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "perfstream/common.hpp"

namespace perfstream {

/// One 2D position per entity.
struct Layout2D {
  Eigen::MatrixX2d positions;
  std::uint64_t epoch = 0;

  Index rows() const { return positions.rows(); }
  bool empty() const { return positions.rows() == 0; }
};

/// Sum of squared row distances between two layouts of equal size.
inline double disparity(const Eigen::Ref<const Eigen::MatrixX2d>& a,
                        const Eigen::Ref<const Eigen::MatrixX2d>& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("disparity: row count mismatch");
  return (a - b).squaredNorm();
}

struct ProcrustesResult {
  Layout2D layout;
  Eigen::Matrix2d rotation = Eigen::Matrix2d::Identity();  // orthogonal, may reflect
  double scale = 1.0;
  Eigen::RowVector2d translation = Eigen::RowVector2d::Zero();
  double disparity = 0.0;  // residual sum of squares after alignment
  bool degenerate = false;
};

/// Best similarity transform (translation, uniform scale, rotation and
/// reflection) mapping `candidate` onto `reference` in the least-squares sense.
/// A candidate whose points all coincide is moved to the reference centroid and
/// flagged as degenerate.
inline ProcrustesResult procrustes_align(const Layout2D& reference, const Layout2D& candidate) {
  const Index n = reference.rows();
  if (candidate.rows() != n) throw std::invalid_argument("procrustes_align: row count mismatch");
  if (n < 2) throw std::invalid_argument("procrustes_align: need at least two points");

  const Eigen::RowVector2d ref_centroid = reference.positions.colwise().mean();
  const Eigen::RowVector2d cand_centroid = candidate.positions.colwise().mean();
  const Eigen::MatrixX2d ref_c = reference.positions.rowwise() - ref_centroid;
  const Eigen::MatrixX2d cand_c = candidate.positions.rowwise() - cand_centroid;

  ProcrustesResult out;
  out.layout.epoch = candidate.epoch;
  const double cand_ss = cand_c.squaredNorm();
  if (cand_ss <= 1e-300) {
    out.degenerate = true;
    out.scale = 0.0;
    out.layout.positions = Eigen::MatrixX2d(n, 2);
    out.layout.positions.rowwise() = ref_centroid;
    out.translation = ref_centroid;
    out.disparity = disparity(out.layout.positions, reference.positions);
    return out;
  }

  // Maximize trace(R^T C) with C = cand_c^T ref_c; R = U V^T from the SVD.
  const Eigen::Matrix2d cross = cand_c.transpose() * ref_c;
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  out.rotation = svd.matrixU() * svd.matrixV().transpose();
  out.scale = svd.singularValues().sum() / cand_ss;
  out.translation = ref_centroid - out.scale * cand_centroid * out.rotation;
  out.layout.positions = (out.scale * (cand_c * out.rotation)).rowwise() + ref_centroid;
  out.disparity = disparity(out.layout.positions, reference.positions);
  return out;
}

}  // namespace perfstream
