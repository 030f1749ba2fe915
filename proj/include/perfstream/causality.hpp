#pragma once

// Progressive vector autoregression over per-metric representative series:
// least-squares VAR(p) fitting on an adaptively sized random sample of time
// points, Granger causality F tests, orthogonalized impulse responses, and
// forecast-error variance decomposition.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <span>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>

#include "perfstream/change_detect.hpp"
#include "perfstream/common.hpp"

namespace perfstream {

struct VarModel {
  int lag = 1;
  Index dims = 0;
  std::vector<Eigen::MatrixXd> coefficients;  // A_1..A_p, each d x d
  Eigen::VectorXd intercept;
  Eigen::MatrixXd resid_cov;          // d x d
  Eigen::MatrixXd regression;         // (1 + d p) x d stacked [c; A_1^T; ...]
  Eigen::MatrixXd regressor_inverse;  // (X^T X)^{-1}
  Index sample_size = 0;              // s: regression rows used
  Index dof = 0;                      // s - (1 + d p)
  double fit_seconds = 0.0;
  bool ridge = false;
  bool full_sample = false;

  Index regressors() const { return 1 + dims * lag; }
};

/// Smallest sample the fitter accepts: max(10, d p + 2).
inline Index minimum_var_sample(Index dims, int lag) {
  return std::max<Index>(10, dims * lag + 2);
}

/// Fits VAR(p) by least squares on the regression rows ending at `targets`
/// (each target t uses y_t against 1, y_{t-1}, ..., y_{t-p}).
inline VarModel fit_var(const Eigen::MatrixXd& panel, std::span<const Index> targets, int lag) {
  const Index d = panel.cols();
  if (lag < 1 || lag > 4) throw std::invalid_argument("fit_var: lag order must be in [1, 4]");
  const Index k = 1 + d * lag;
  const auto s = static_cast<Index>(targets.size());
  if (s < k + 1) throw std::invalid_argument("fit_var: too few time points for the lag order");

  Eigen::MatrixXd x(s, k), y(s, d);
  for (Index r = 0; r < s; ++r) {
    const Index t = targets[static_cast<std::size_t>(r)];
    if (t < lag || t >= panel.rows()) throw std::out_of_range("fit_var: target index out of range");
    x(r, 0) = 1.0;
    for (int l = 1; l <= lag; ++l) x.block(r, 1 + (l - 1) * d, 1, d) = panel.row(t - l);
    y.row(r) = panel.row(t);
  }

  VarModel m;
  m.lag = lag;
  m.dims = d;
  m.sample_size = s;
  m.dof = s - k;

  Eigen::MatrixXd xtx = x.transpose() * x;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
  const auto pivots = ldlt.vectorD().cwiseAbs();
  const bool singular = ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-12) ||
                        !(pivots.minCoeff() > 1e-12 * pivots.maxCoeff());
  if (singular) {
    const double ridge = 1e-8 * std::max(xtx.trace() / static_cast<double>(k), 1e-300);
    xtx.diagonal().array() += ridge;
    ldlt.compute(xtx);
    m.ridge = true;
  }
  m.regressor_inverse = ldlt.solve(Eigen::MatrixXd::Identity(k, k));
  m.regression = ldlt.solve(x.transpose() * y);
  const Eigen::MatrixXd resid = y - x * m.regression;
  m.resid_cov = resid.transpose() * resid / static_cast<double>(m.dof);
  m.resid_cov = 0.5 * (m.resid_cov + m.resid_cov.transpose());

  m.intercept = m.regression.row(0).transpose();
  m.coefficients.resize(static_cast<std::size_t>(lag));
  for (int l = 1; l <= lag; ++l)
    m.coefficients[static_cast<std::size_t>(l - 1)] = m.regression.middleRows(1 + (l - 1) * d, d).transpose();
  return m;
}

/// Fits on every available time point, in order.
inline VarModel fit_var_full(const Eigen::MatrixXd& panel, int lag) {
  std::vector<Index> targets;
  for (Index t = lag; t < panel.rows(); ++t) targets.push_back(t);
  VarModel m = fit_var(panel, targets, lag);
  m.full_sample = true;
  return m;
}

// ---------------------------------------------------------------------------
// Adaptive sample size

/// Sample size expected to fit in `remaining` given that `s` points took
/// `completion`: s * sqrt(remaining / completion), from the O(s^2) cost model.
inline double next_sample_size(double s, double remaining, double completion) {
  return s * std::sqrt(remaining / completion);
}

/// Warm-start correction after an overrun: s * sqrt(latency / completion).
inline double overrun_sample_size(double s, double latency, double completion) {
  return s * std::sqrt(latency / completion);
}

struct VarFitOptions {
  int lag = 1;
  Index cold_start = 10;
};

struct FitStep {
  Index sample_size = 0;
  double seconds = 0.0;
};

struct ProgressiveVarFit {
  std::optional<VarModel> model;  // last completed fit
  std::vector<FitStep> steps;
  Index next_start = 0;  // warm-start sample size for the next call
  bool withheld = false;  // panel shorter than the minimum sample
  bool overrun = false;   // last fit alone exceeded the latency
};

using TimeSource = std::function<double()>;  // seconds, monotone

inline double steady_seconds() {
  return std::chrono::duration<double>(SteadyClock::now().time_since_epoch()).count();
}

/// Repeated VAR fits on growing random samples of time points within a
/// latency budget. Each fit on s points taking t_c sets the next size to
/// s * sqrt(t_r / t_c), t_r being the remaining budget, until t_r <= 0 or the
/// whole panel is used. Samples are regression rows (y_t with its p
/// predecessors) drawn uniformly without replacement.
inline ProgressiveVarFit progressive_var_fit(const Eigen::MatrixXd& panel, Budget budget, Index prev_s,
                                             const VarFitOptions& options, Rng& rng,
                                             const TimeSource& now = steady_seconds) {
  ProgressiveVarFit out;
  const int p = options.lag;
  const Index min_s = minimum_var_sample(panel.cols(), p);
  const Index available = panel.rows() - p;
  if (available < min_s) {
    out.withheld = true;
    out.next_start = prev_s > 0 ? prev_s : options.cold_start;
    return out;
  }
  const double latency = budget.seconds();

  std::vector<Index> all(static_cast<std::size_t>(available));
  for (Index i = 0; i < available; ++i) all[static_cast<std::size_t>(i)] = i + p;

  double s = static_cast<double>(std::max(prev_s > 0 ? prev_s : options.cold_start, min_s));
  const double start = now();
  double last_tc = 0.0;
  Index last_s = 0;
  for (;;) {
    const bool full = s >= static_cast<double>(available);
    const Index take = full ? available : std::max<Index>(min_s, static_cast<Index>(std::llround(s)));
    const double t0 = now();
    VarModel model;
    if (full) {
      model = fit_var_full(panel, p);
    } else {
      std::vector<Index> targets;
      targets.reserve(static_cast<std::size_t>(take));
      std::sample(all.begin(), all.end(), std::back_inserter(targets), take, rng);
      model = fit_var(panel, targets, p);
    }
    last_tc = now() - t0;
    model.fit_seconds = last_tc;
    out.model = std::move(model);
    out.steps.push_back({take, last_tc});
    last_s = take;
    if (full) break;

    const double remaining = latency - (now() - start);
    if (remaining <= 0.0) break;
    s = last_tc > 0.0 ? next_sample_size(static_cast<double>(take), remaining, last_tc)
                      : std::numeric_limits<double>::infinity();
    s = std::max(s, static_cast<double>(min_s));
  }

  double warm = static_cast<double>(last_s);
  if (last_tc > latency) {
    out.overrun = true;
    warm = overrun_sample_size(warm, latency, last_tc);
  }
  out.next_start = std::max(min_s, static_cast<Index>(std::llround(warm)));
  return out;
}

// ---------------------------------------------------------------------------
// Granger causality

/// F test of the joint null that every lag coefficient of `cause` in the
/// `effect` equation is zero. Returns the p-value.
inline double granger_test(const VarModel& model, Index cause, Index effect) {
  if (model.sample_size == 0) throw std::logic_error("granger_test: model is not fitted");
  if (cause == effect) throw std::invalid_argument("granger_test: cause and effect must differ");
  if (cause < 0 || effect < 0 || cause >= model.dims || effect >= model.dims)
    throw std::out_of_range("granger_test: metric index out of range");
  const int p = model.lag;
  Eigen::VectorXd beta(p);
  Eigen::MatrixXd v(p, p);
  std::vector<Index> idx(static_cast<std::size_t>(p));
  for (int l = 0; l < p; ++l) idx[static_cast<std::size_t>(l)] = 1 + l * model.dims + cause;
  for (int a = 0; a < p; ++a) {
    beta(a) = model.regression(idx[static_cast<std::size_t>(a)], effect);
    for (int b = 0; b < p; ++b)
      v(a, b) = model.regressor_inverse(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
  }
  const double sigma2 = model.resid_cov(effect, effect);
  if (!(sigma2 > 0.0)) return beta.norm() > 0.0 ? 0.0 : 1.0;
  const double wald = beta.dot(v.ldlt().solve(beta)) / sigma2;
  if (!std::isfinite(wald)) return 1.0;
  const double f = wald / p;
  if (model.dof < 1) return 1.0;
  boost::math::fisher_f_distribution<double> dist(p, static_cast<double>(model.dof));
  return std::clamp(boost::math::cdf(boost::math::complement(dist, std::max(f, 0.0))), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Impulse responses and variance decomposition

struct MaRepresentation {
  std::vector<Eigen::MatrixXd> phi;  // Phi_0 .. Phi_h
  Eigen::MatrixXd chol;              // lower-triangular P, P P^T = resid_cov (+ jitter)
  bool jittered = false;
};

/// Phi_j = sum_{i=1..min(j,p)} A_i Phi_{j-i}, Phi_0 = I, and the Cholesky
/// factor of the residual covariance (ordering = metric declaration order).
inline MaRepresentation ma_representation(const VarModel& model, int horizon) {
  if (model.sample_size == 0 && model.coefficients.empty())
    throw std::logic_error("ma_representation: model is not fitted");
  if (horizon < 0) throw std::invalid_argument("ma_representation: negative horizon");
  const Index d = model.dims;
  MaRepresentation ma;
  ma.phi.reserve(static_cast<std::size_t>(horizon) + 1);
  ma.phi.push_back(Eigen::MatrixXd::Identity(d, d));
  for (int j = 1; j <= horizon; ++j) {
    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(d, d);
    for (int i = 1; i <= std::min(j, model.lag); ++i)
      phi += model.coefficients[static_cast<std::size_t>(i - 1)] * ma.phi[static_cast<std::size_t>(j - i)];
    ma.phi.push_back(std::move(phi));
  }

  Eigen::MatrixXd cov = model.resid_cov;
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  double jitter = 1e-10;
  while (llt.info() != Eigen::Success || !(llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0)) {
    cov = model.resid_cov;
    cov.diagonal().array() += jitter;
    llt.compute(cov);
    ma.jittered = true;
    jitter *= 10.0;
    if (jitter > 1.0) throw std::runtime_error("ma_representation: residual covariance is not positive definite");
  }
  ma.chol = llt.matrixL();
  return ma;
}

/// Orthogonalized response of `response` to a one-standard-deviation shock in
/// `shock`, horizons 0..h.
inline std::vector<double> impulse_response(const VarModel& model, Index shock, Index response, int horizon) {
  if (shock < 0 || response < 0 || shock >= model.dims || response >= model.dims)
    throw std::out_of_range("impulse_response: metric index out of range");
  const MaRepresentation ma = ma_representation(model, horizon);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(horizon) + 1);
  for (const auto& phi : ma.phi) out.push_back((phi * ma.chol)(response, shock));
  return out;
}

/// Share of each metric's orthogonalized shocks in the h-step forecast-error
/// variance of `target`.
inline Eigen::VectorXd variance_decomposition(const VarModel& model, Index target, int horizon,
                                              const MaRepresentation* precomputed = nullptr) {
  if (horizon < 1) throw std::invalid_argument("variance_decomposition: horizon must be at least 1");
  if (target < 0 || target >= model.dims) throw std::out_of_range("variance_decomposition: target out of range");
  MaRepresentation local;
  if (!precomputed || static_cast<int>(precomputed->phi.size()) < horizon) {
    local = ma_representation(model, horizon - 1);
    precomputed = &local;
  }
  Eigen::VectorXd num = Eigen::VectorXd::Zero(model.dims);
  double denom = 0.0;
  for (int i = 0; i < horizon; ++i) {
    const Eigen::MatrixXd& phi = precomputed->phi[static_cast<std::size_t>(i)];
    const Eigen::RowVectorXd theta = phi.row(target) * precomputed->chol;
    num += theta.transpose().cwiseAbs2();
    denom += (phi.row(target) * model.resid_cov * phi.row(target).transpose())(0, 0);
  }
  if (!(denom > 0.0)) {
    Eigen::VectorXd own = Eigen::VectorXd::Zero(model.dims);
    own(target) = 1.0;
    return own;
  }
  return num / denom;
}

// ---------------------------------------------------------------------------
// Reports

enum class CausalDirection { from_causality, to_causality };

inline std::string to_string(CausalDirection d) {
  return d == CausalDirection::from_causality ? "from" : "to";
}

struct CausalityRow {
  Index metric = 0;
  double granger_p = 1.0;
  bool significant = false;
  double ir = 0.0;  // max |orthogonalized IR| over horizons 1..H
  double vd = 0.0;  // FEVD share at horizon H
};

struct CausalityReport {
  Index target = 0;
  CausalDirection direction = CausalDirection::from_causality;
  double p_threshold = 0.05;
  int horizon = 10;
  std::vector<CausalityRow> rows;
  bool jittered = false;
};

/// From-causality rows test each other metric as cause of `target`;
/// to-causality rows test `target` as cause of each other metric.
inline CausalityReport build_report(const VarModel& model, Index target, CausalDirection direction,
                                    double p_threshold = 0.05, int horizon = 10) {
  if (target < 0 || target >= model.dims) throw std::out_of_range("build_report: target out of range");
  if (horizon < 1) throw std::invalid_argument("build_report: horizon must be at least 1");
  CausalityReport report;
  report.target = target;
  report.direction = direction;
  report.p_threshold = p_threshold;
  report.horizon = horizon;
  if (model.dims < 2) return report;

  const MaRepresentation ma = ma_representation(model, horizon);
  report.jittered = ma.jittered;
  std::vector<Eigen::MatrixXd> theta;
  for (const auto& phi : ma.phi) theta.push_back(phi * ma.chol);
  const Eigen::VectorXd target_vd = variance_decomposition(model, target, horizon, &ma);

  for (Index j = 0; j < model.dims; ++j) {
    if (j == target) continue;
    CausalityRow row;
    row.metric = j;
    const Index cause = direction == CausalDirection::from_causality ? j : target;
    const Index effect = direction == CausalDirection::from_causality ? target : j;
    row.granger_p = granger_test(model, cause, effect);
    row.significant = row.granger_p < p_threshold;
    for (int h = 1; h <= horizon; ++h)
      row.ir = std::max(row.ir, std::abs(theta[static_cast<std::size_t>(h)](effect, cause)));
    row.vd = direction == CausalDirection::from_causality
                 ? target_vd(j)
                 : variance_decomposition(model, j, horizon, &ma)(target);
    report.rows.push_back(row);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Panel of representative series

/// One sign-coherent representative series per metric plus running moments
/// for standardization.
class RepresentativePanel {
 public:
  RepresentativePanel(Index entities, Index metrics) {
    if (metrics < 1) throw std::invalid_argument("panel: need at least one metric");
    for (Index m = 0; m < metrics; ++m) series_.push_back(RepresentativeSeries::create(entities));
    values_.assign(static_cast<std::size_t>(metrics), {});
    mean_ = Eigen::VectorXd::Zero(metrics);
    m2_ = Eigen::VectorXd::Zero(metrics);
  }

  /// `slice` is n x d (entity rows, metric columns). Returns the d
  /// representative values; a rejected metric repeats its previous value.
  Eigen::VectorXd push_slice(const Eigen::Ref<const Eigen::MatrixXd>& slice) {
    const Index d = metrics();
    if (slice.cols() != d) throw std::invalid_argument("panel: slice has wrong metric count");
    Eigen::VectorXd out(d);
    ++count_;
    for (Index m = 0; m < d; ++m) {
      auto& vals = values_[static_cast<std::size_t>(m)];
      const auto rep = series_[static_cast<std::size_t>(m)].push(slice.col(m));
      const double v = rep ? *rep : (vals.empty() ? 0.0 : vals.back());
      vals.push_back(v);
      out(m) = v;
      const double delta = v - mean_(m);
      mean_(m) += delta / static_cast<double>(count_);
      m2_(m) += delta * (v - mean_(m));
    }
    return out;
  }

  Index metrics() const { return static_cast<Index>(series_.size()); }
  Index length() const { return count_; }
  const std::vector<double>& values(Index metric) const { return values_.at(static_cast<std::size_t>(metric)); }
  const RepresentativeSeries& series(Index metric) const { return series_.at(static_cast<std::size_t>(metric)); }

  Eigen::VectorXd running_mean() const { return mean_; }
  Eigen::VectorXd running_sd() const {
    if (count_ < 2) return Eigen::VectorXd::Ones(metrics());
    return (m2_ / static_cast<double>(count_ - 1)).cwiseSqrt();
  }

  /// T x d matrix z-scored with the running moments.
  Eigen::MatrixXd standardized() const {
    const Index d = metrics();
    Eigen::MatrixXd z(count_, d);
    const Eigen::VectorXd sd = running_sd();
    for (Index m = 0; m < d; ++m) {
      const double scale = sd(m) > 0.0 ? sd(m) : 1.0;
      const auto& vals = values_[static_cast<std::size_t>(m)];
      for (Index t = 0; t < count_; ++t) z(t, m) = (vals[static_cast<std::size_t>(t)] - mean_(m)) / scale;
    }
    return z;
  }

 private:
  std::vector<RepresentativeSeries> series_;
  std::vector<std::vector<double>> values_;
  Index count_ = 0;
  Eigen::VectorXd mean_, m2_;
};

}  // namespace perfstream
