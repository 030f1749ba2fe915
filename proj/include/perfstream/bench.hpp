#pragma once

// Throughput benchmarks: per-slice change detection cost against n, entities
// absorbed by clustering and projection within a budget against window width
// t, and VAR time points fitted within a budget against metric count d.

#include <algorithm>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "perfstream/causality.hpp"
#include "perfstream/change_detect.hpp"
#include "perfstream/progressive_cluster.hpp"
#include "perfstream/progressive_dr.hpp"

namespace perfstream {

struct BenchOptions {
  std::vector<Index> cpd_entities{100, 1000, 10000, 100000};
  Index cpd_slices = 1000;
  Index entities = 10000;
  std::vector<Index> widths{100, 1000, 10000};
  double budget_ms = 1000.0;
  std::vector<Index> var_dims{10, 100};
  Index var_length = 10000;
  int k = 3;
  std::uint64_t seed = 1;

  /// Reduced sizes for smoke runs.
  static BenchOptions quick() {
    BenchOptions o;
    o.cpd_entities = {100, 1000};
    o.cpd_slices = 50;
    o.entities = 500;
    o.widths = {20, 200};
    o.budget_ms = 20.0;
    o.var_dims = {3, 10};
    o.var_length = 1000;
    return o;
  }
};

inline nlohmann::json bench_options_json(const BenchOptions& o) {
  return {{"cpd_entities", o.cpd_entities}, {"cpd_slices", o.cpd_slices}, {"entities", o.entities},
          {"widths", o.widths},             {"budget_ms", o.budget_ms},   {"var_dims", o.var_dims},
          {"var_length", o.var_length},     {"k", o.k},                   {"seed", o.seed}};
}

inline nlohmann::json machine_info() {
  std::string cpu = "unknown";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto pos = line.find(':');
      if (pos != std::string::npos) cpu = line.substr(pos + 2);
      break;
    }
  }
  nlohmann::json j{{"cpu", cpu}, {"hardware_threads", std::thread::hardware_concurrency()}};
#if defined(__VERSION__)
  j["compiler"] = __VERSION__;
#endif
#ifdef NDEBUG
  j["assertions"] = false;
#else
  j["assertions"] = true;
#endif
  return j;
}

namespace detail {

// k well-separated groups of noisy series, entity i in group i % k.
inline Eigen::MatrixXd grouped_series(Index n, Index t, int k, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd base(k, t);
  for (int c = 0; c < k; ++c)
    for (Index j = 0; j < t; ++j) base(c, j) = 5.0 * c + std::sin(0.05 * static_cast<double>(j) * (c + 1));
  Eigen::MatrixXd x(n, t);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < t; ++j) x(i, j) = base(static_cast<Index>(i % k), j) + g(rng);
  return x;
}

inline bool non_increasing(const std::vector<std::int64_t>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[i - 1]) return false;
  return true;
}

}  // namespace detail

/// (a) Mean per-slice change-detection update time, representative series
/// plus detector, over `cpd_slices` slices for each n.
inline nlohmann::json bench_cpd(const BenchOptions& o) {
  nlohmann::json rows = nlohmann::json::array();
  Rng rng(mix_seed(o.seed, 1));
  std::normal_distribution<double> g(0.0, 1.0);
  for (Index n : o.cpd_entities) {
    MetricChangeDetector det(n);
    Eigen::VectorXd level(n), slice(n);
    for (Index i = 0; i < n; ++i) level(i) = 10.0 + (i % 7);
    double total = 0.0, worst = 0.0;
    for (Index s = 0; s < o.cpd_slices; ++s) {
      for (Index i = 0; i < n; ++i) slice(i) = level(i) + g(rng);
      const auto t0 = SteadyClock::now();
      det.push_slice(slice, s);
      const double ms = Millis(SteadyClock::now() - t0).count();
      total += ms;
      worst = std::max(worst, ms);
    }
    rows.push_back({{"n", n}, {"mean_ms", total / static_cast<double>(o.cpd_slices)}, {"max_ms", worst}});
  }
  return rows;
}

/// (b) Entities absorbed by one clustering refresh within the budget.
inline nlohmann::json bench_cluster(const BenchOptions& o) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index t : o.widths) {
    Rng rng(mix_seed(o.seed, 2 + static_cast<std::uint64_t>(t)));
    const Eigen::MatrixXd x = detail::grouped_series(o.entities, t, o.k, rng);
    ClusterConfig cfg;
    cfg.k = o.k;
    cfg.budget = Budget::millis(o.budget_ms);
    cfg.seed = o.seed;
    const auto t0 = SteadyClock::now();
    const ClusterModel m = refresh(ClusterModel::create(cfg), x);
    rows.push_back({{"t", t}, {"processed", m.processed_count}, {"wall_ms", Millis(SteadyClock::now() - t0).count()}});
  }
  return rows;
}

/// (c) Entities absorbed by one projection refresh within the budget.
inline nlohmann::json bench_dr(const BenchOptions& o) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index t : o.widths) {
    Rng rng(mix_seed(o.seed, 3 + static_cast<std::uint64_t>(t)));
    const Eigen::MatrixXd x = detail::grouped_series(o.entities, t, o.k, rng);
    std::vector<int> labels(static_cast<std::size_t>(o.entities));
    for (Index i = 0; i < o.entities; ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(i % o.k);
    DrConfig cfg;
    cfg.k = o.k;
    cfg.seed = o.seed;
    const auto t0 = SteadyClock::now();
    const DrState s = refresh_layout(DrState::create(cfg), x, labels, Budget::millis(o.budget_ms));
    rows.push_back({{"t", t}, {"processed", s.processed_count}, {"wall_ms", Millis(SteadyClock::now() - t0).count()}});
  }
  return rows;
}

/// (d) Time points used by the last VAR fit completed within the budget.
inline nlohmann::json bench_var(const BenchOptions& o) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index d : o.var_dims) {
    Rng rng(mix_seed(o.seed, 4 + static_cast<std::uint64_t>(d)));
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd panel(o.var_length, d);
    Eigen::RowVectorXd prev = Eigen::RowVectorXd::Zero(d);
    for (Index r = 0; r < o.var_length; ++r) {
      for (Index j = 0; j < d; ++j) panel(r, j) = 0.4 * prev(j) + 0.1 * prev((j + 1) % d) + g(rng);
      prev = panel.row(r);
    }
    const auto t0 = SteadyClock::now();
    const ProgressiveVarFit fit = progressive_var_fit(panel, Budget::millis(o.budget_ms), 0, {}, rng);
    const Index points = fit.steps.empty() ? 0 : fit.steps.back().sample_size;
    rows.push_back({{"d", d},
                    {"processed", fit.model ? points : 0},
                    {"fits", fit.steps.size()},
                    {"wall_ms", Millis(SteadyClock::now() - t0).count()}});
  }
  return rows;
}

/// Full suite with the monotone-trend checks.
inline nlohmann::json bench_table1(const BenchOptions& o) {
  nlohmann::json r;
  r["config"] = bench_options_json(o);
  r["machine"] = machine_info();
  r["a"] = bench_cpd(o);
  r["b"] = bench_cluster(o);
  r["c"] = bench_dr(o);
  r["d"] = bench_var(o);
  auto counts = [](const nlohmann::json& rows) {
    std::vector<std::int64_t> v;
    for (const auto& row : rows) v.push_back(row["processed"].get<std::int64_t>());
    return v;
  };
  r["checks"] = {{"b_non_increasing_in_t", detail::non_increasing(counts(r["b"]))},
                 {"c_non_increasing_in_t", detail::non_increasing(counts(r["c"]))},
                 {"d_non_increasing_in_d", detail::non_increasing(counts(r["d"]))}};
  bool ok = true;
  for (const auto& [k, v] : r["checks"].items()) ok = ok && v.get<bool>();
  r["ok"] = ok;
  return r;
}

}  // namespace perfstream
