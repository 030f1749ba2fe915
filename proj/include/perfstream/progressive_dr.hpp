#pragma once

// Latency-budgeted 2D projection of entity behavior vectors. Each refresh
// fits an incremental PCA on the current window from cluster-stratified entity
// batches, projects every entity onto PC1/PC2, and Procrustes-aligns the
// result to the previous epoch's layout.

#include <span>
#include <stdexcept>
#include <vector>

#include "perfstream/common.hpp"
#include "perfstream/ipca.hpp"
#include "perfstream/procrustes.hpp"
#include "perfstream/sampling.hpp"

namespace perfstream {

struct DrConfig {
  Budget budget = Budget::millis(1);
  Index per_cluster_batch = 10;
  int k = 3;  // label range of the stratifying cluster assignments
  // Components tracked internally; only the first two are displayed. Keeping
  // more than two makes the sequential fit exact whenever the window rank
  // does not exceed this.
  Index tracked_components = 16;
  std::uint64_t seed = 0;
};

struct DrState {
  DrConfig config;
  PcaModel pca;  // model fitted at the latest refresh
  Layout2D layout;
  Layout2D prev_layout;
  Index processed_count = 0;
  Index window_width = 0;
  std::uint64_t epoch = 0;
  bool layout_break = false;  // alignment skipped this epoch (window width changed)
  double raw_disparity = 0.0;      // unaligned projection vs previous layout
  double aligned_disparity = 0.0;  // aligned layout vs previous layout

  static DrState create(DrConfig config) {
    if (config.tracked_components < 2) throw std::invalid_argument("dr: need at least two components");
    DrState s;
    s.config = config;
    return s;
  }
};

/// Fits the projection model from entity batches drawn per cluster until the
/// budget expires or all entities are absorbed. Returns the model and the
/// number of entities it absorbed.
inline std::pair<PcaModel, Index> fit_progressive_pca(const Eigen::MatrixXd& window,
                                                      std::span<const int> clusters, const DrConfig& config,
                                                      Budget budget, Rng& rng) {
  const Index n = window.rows();
  PcaModel model = PcaModel::create(window.cols(), config.tracked_components);
  const bool stratified = static_cast<Index>(clusters.size()) == n;
  StratifiedSampler sampler = stratified
                                  ? StratifiedSampler(clusters, config.k, config.per_cluster_batch, rng)
                                  : StratifiedSampler(n, config.per_cluster_batch * config.k, rng);
  const Deadline deadline(budget);
  Index processed = 0;
  Eigen::MatrixXd batch;
  while (!sampler.exhausted() && !deadline.expired()) {
    const std::vector<Index> rows = sampler.next_batch();
    batch.resize(static_cast<Index>(rows.size()), window.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) batch.row(static_cast<Index>(i)) = window.row(rows[i]);
    model = ipca_update(model, batch);
    processed += static_cast<Index>(rows.size());
  }
  return {std::move(model), processed};
}

/// Scores of every entity on PC1/PC2; missing components score zero.
inline Layout2D project_layout(const PcaModel& model, const Eigen::MatrixXd& window) {
  Layout2D out;
  out.positions = Eigen::MatrixX2d::Zero(window.rows(), 2);
  if (model.n_seen == 0) return out;
  const Eigen::MatrixXd scores = project(model, window);
  const Index q = std::min<Index>(2, scores.cols());
  out.positions.leftCols(q) = scores.leftCols(q);
  return out;
}

/// Installs `raw` as the next layout, aligning it to the current one unless
/// this is the first epoch or `skip_alignment` is set.
[[nodiscard]] inline DrState advance_layout(const DrState& state, Layout2D raw, bool skip_alignment) {
  DrState next = state;
  next.epoch = state.epoch + 1;
  raw.epoch = next.epoch;
  next.prev_layout = state.layout;
  next.layout_break = skip_alignment && !state.layout.empty();
  const bool can_align = !state.layout.empty() && !skip_alignment &&
                         state.layout.rows() == raw.rows() && raw.rows() >= 2;
  if (can_align) {
    next.raw_disparity = disparity(raw.positions, state.layout.positions);
    ProcrustesResult aligned = procrustes_align(state.layout, raw);
    next.aligned_disparity = aligned.disparity;
    next.layout = std::move(aligned.layout);
    next.layout.epoch = next.epoch;
  } else {
    next.raw_disparity = next.aligned_disparity = 0.0;
    next.layout = std::move(raw);
  }
  return next;
}

/// One progressive DR refresh. The projection of all n entities is outside
/// the budget, which only bounds the model update.
[[nodiscard]] inline DrState refresh_layout(const DrState& state, const Eigen::MatrixXd& window,
                                            std::span<const int> clusters, Budget budget) {
  if (window.rows() < 1 || window.cols() < 1) throw std::invalid_argument("dr refresh: empty window");
  if (!state.layout.empty() && state.layout.rows() != window.rows())
    throw std::invalid_argument("dr refresh: entity count changed");
  // Same entity order every epoch: a static window then yields the same model.
  Rng rng(mix_seed(state.config.seed, 1));
  auto [model, processed] = fit_progressive_pca(window, clusters, state.config, budget, rng);
  const bool width_changed = state.window_width != 0 && state.window_width != window.cols();
  Layout2D raw = project_layout(model, window);
  DrState next = advance_layout(state, std::move(raw), width_changed);
  next.pca = std::move(model);
  next.processed_count = processed;
  next.window_width = window.cols();
  return next;
}

[[nodiscard]] inline DrState refresh_layout(const DrState& state, const Eigen::MatrixXd& window,
                                            std::span<const int> clusters) {
  return refresh_layout(state, window, clusters, state.config.budget);
}

}  // namespace perfstream
