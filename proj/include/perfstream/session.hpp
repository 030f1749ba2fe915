#pragma once

// Analyst session state and the settings registry shared by startup flags,
// environment overrides and runtime `set` messages.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "perfstream/causality.hpp"

namespace perfstream {

struct SessionState {
  bool paused = false;
  std::int64_t base_time = 0;
  int top_metric = 0;
  int bottom_metric = 1;
  int cluster_metric = -1;     // -1: follow top_metric
  int causality_target = -1;   // -1: follow top_metric
  int k = 3;
  double alpha = 0.01;
  double cluster_budget_ms = 50.0;
  double dr_budget_ms = 1.0;
  double var_budget_ms = 100.0;
  CausalDirection direction = CausalDirection::from_causality;
  int aggregation_level = 1;
  std::vector<Index> selection;
  bool cpd_bottom = false;
  int causality_cadence = 5;
  double p_threshold = 0.05;
  int ir_horizon = 10;
  int var_lag = 1;

  int effective_cluster_metric() const { return cluster_metric < 0 ? top_metric : cluster_metric; }
  int effective_target() const { return causality_target < 0 ? top_metric : causality_target; }
};

inline nlohmann::json session_to_json(const SessionState& s) {
  return {{"paused", s.paused},
          {"base_time", s.base_time},
          {"top_metric", s.top_metric},
          {"bottom_metric", s.bottom_metric},
          {"cluster_metric", s.cluster_metric},
          {"causality_target", s.causality_target},
          {"k", s.k},
          {"alpha", s.alpha},
          {"cluster_budget_ms", s.cluster_budget_ms},
          {"dr_budget_ms", s.dr_budget_ms},
          {"var_budget_ms", s.var_budget_ms},
          {"direction", to_string(s.direction)},
          {"aggregation_level", s.aggregation_level},
          {"selection", s.selection},
          {"cpd_bottom", s.cpd_bottom},
          {"causality_cadence", s.causality_cadence},
          {"p_threshold", s.p_threshold},
          {"ir_horizon", s.ir_horizon},
          {"var_lag", s.var_lag}};
}

/// Limits a value is validated against.
struct SettingContext {
  Index metrics = 5;
  Index entities = 0;          // 0: unknown, entity ids unchecked
  int hierarchy_depth = 2;
  std::optional<std::int64_t> current_time;  // base_time must not exceed it
  std::function<bool(std::int64_t)> comm_available;  // base_time must have a retained frame
};

/// What a successful change requires of the analysis lane.
enum class SettingEffect { none, reseed_clusters, reset_top_layout, reset_bottom_layout, recompute_comm, refit_causality };

struct SettingSpec {
  std::string key;
  std::string help;
  // Applies `value` to `s`; returns an error message on rejection.
  std::function<std::optional<std::string>(SessionState& s, const nlohmann::json& value, const SettingContext& ctx)> apply;
  std::vector<SettingEffect> effects;
  bool runtime_only = false;  // not offered as a startup flag
};

namespace detail {

inline std::optional<std::string> need_number(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number()) return key + " must be a number";
  return std::nullopt;
}

inline std::optional<std::string> need_int(const nlohmann::json& v, const std::string& key) {
  if (v.is_number_integer() || v.is_number_unsigned()) return std::nullopt;
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d) return std::nullopt;
  }
  return key + " must be an integer";
}

inline std::int64_t as_int(const nlohmann::json& v) {
  return v.is_number_float() ? static_cast<std::int64_t>(v.get<double>()) : v.get<std::int64_t>();
}

inline std::optional<std::string> metric_index(int& field, const nlohmann::json& v, const SettingContext& ctx,
                                               const std::string& key, bool allow_follow) {
  if (auto e = need_int(v, key)) return e;
  const std::int64_t m = as_int(v);
  if (allow_follow && m == -1) {
    field = -1;
    return std::nullopt;
  }
  if (m < 0 || m >= ctx.metrics)
    return key + " must be a metric index in [0, " + std::to_string(ctx.metrics - 1) + "]";
  field = static_cast<int>(m);
  return std::nullopt;
}

inline std::optional<std::string> positive_budget(double& field, const nlohmann::json& v, const std::string& key) {
  if (auto e = need_number(v, key)) return e;
  const double d = v.get<double>();
  if (!(d > 0.0) || !std::isfinite(d)) return key + " must be a positive number of milliseconds";
  field = d;
  return std::nullopt;
}

}  // namespace detail

inline const std::vector<SettingSpec>& setting_registry() {
  using detail::as_int;
  using detail::need_int;
  using detail::need_number;
  using json = nlohmann::json;
  using E = SettingEffect;
  static const std::vector<SettingSpec> registry{
      {"base_time", "time index whose communication frame is the diff baseline",
       [](SessionState& s, const json& v, const SettingContext& c) -> std::optional<std::string> {
         if (auto e = need_int(v, "base_time")) return e;
         const std::int64_t t = as_int(v);
         if (t < 0) return std::string("base_time must be non-negative");
         if (c.current_time && t > *c.current_time) return std::string("base_time must not exceed the current time");
         if (c.comm_available && !c.comm_available(t))
           return std::string("base_time has no retained communication frame");
         s.base_time = t;
         return std::nullopt;
       },
       {E::recompute_comm}, true},
      {"top_metric", "metric shown in the top view (change detection always runs on it)",
       [](SessionState& s, const json& v, const SettingContext& c) {
         return detail::metric_index(s.top_metric, v, c, "top_metric", false);
       },
       {E::reset_top_layout, E::reseed_clusters}},
      {"bottom_metric", "metric shown in the bottom view",
       [](SessionState& s, const json& v, const SettingContext& c) {
         return detail::metric_index(s.bottom_metric, v, c, "bottom_metric", false);
       },
       {E::reset_bottom_layout}},
      {"cluster_metric", "metric clustered for the shared colors (-1 follows top_metric)",
       [](SessionState& s, const json& v, const SettingContext& c) {
         return detail::metric_index(s.cluster_metric, v, c, "cluster_metric", true);
       },
       {E::reseed_clusters}},
      {"causality_target", "target metric of the causality report (-1 follows top_metric)",
       [](SessionState& s, const json& v, const SettingContext& c) {
         return detail::metric_index(s.causality_target, v, c, "causality_target", true);
       },
       {E::refit_causality}},
      {"k", "cluster count",
       [](SessionState& s, const json& v, const SettingContext& c) -> std::optional<std::string> {
         if (auto e = need_int(v, "k")) return e;
         const std::int64_t k = as_int(v);
         if (k < 1) return std::string("k must be at least 1");
         if (c.entities > 0 && k > c.entities) return std::string("k must not exceed the entity count");
         if (k > 64) return std::string("k must not exceed 64");
         s.k = static_cast<int>(k);
         return std::nullopt;
       },
       {E::reseed_clusters}},
      {"alpha", "change detection significance level",
       [](SessionState& s, const json& v, const SettingContext&) -> std::optional<std::string> {
         if (auto e = need_number(v, "alpha")) return e;
         const double a = v.get<double>();
         if (!(a >= 0.0 && a <= 1.0)) return std::string("alpha must satisfy 0 <= alpha <= 1");
         s.alpha = a;
         return std::nullopt;
       },
       {}},
      {"cluster_budget_ms", "clustering latency budget",
       [](SessionState& s, const json& v, const SettingContext&) {
         return detail::positive_budget(s.cluster_budget_ms, v, "cluster_budget_ms");
       },
       {}},
      {"dr_budget_ms", "projection latency budget",
       [](SessionState& s, const json& v, const SettingContext&) {
         return detail::positive_budget(s.dr_budget_ms, v, "dr_budget_ms");
       },
       {}},
      {"var_budget_ms", "VAR fitting latency budget",
       [](SessionState& s, const json& v, const SettingContext&) {
         return detail::positive_budget(s.var_budget_ms, v, "var_budget_ms");
       },
       {}},
      {"direction", "causality direction: from or to",
       [](SessionState& s, const json& v, const SettingContext&) -> std::optional<std::string> {
         if (!v.is_string()) return std::string("direction must be \"from\" or \"to\"");
         const auto d = v.get<std::string>();
         if (d == "from") {
           s.direction = CausalDirection::from_causality;
         } else if (d == "to") {
           s.direction = CausalDirection::to_causality;
         } else {
           return std::string("direction must be \"from\" or \"to\"");
         }
         return std::nullopt;
       },
       {E::refit_causality}},
      {"aggregation_level", "hierarchy level of the communication matrices",
       [](SessionState& s, const json& v, const SettingContext& c) -> std::optional<std::string> {
         if (auto e = need_int(v, "aggregation_level")) return e;
         const std::int64_t l = as_int(v);
         if (l < 0 || l > c.hierarchy_depth)
           return "aggregation_level must lie in [0, " + std::to_string(c.hierarchy_depth) + "]";
         s.aggregation_level = static_cast<int>(l);
         return std::nullopt;
       },
       {E::recompute_comm}},
      {"cpd_bottom", "also run change detection on the bottom metric",
       [](SessionState& s, const json& v, const SettingContext&) -> std::optional<std::string> {
         if (!v.is_boolean()) return std::string("cpd_bottom must be true or false");
         s.cpd_bottom = v.get<bool>();
         return std::nullopt;
       },
       {}},
      {"causality_cadence", "ticks between causality refits",
       [](SessionState& s, const json& v, const SettingContext&) -> std::optional<std::string> {
         if (auto e = need_int(v, "causality_cadence")) return e;
         const std::int64_t c = as_int(v);
         if (c < 1) return std::string("causality_cadence must be at least 1");
         s.causality_cadence = static_cast<int>(c);
         return std::nullopt;
       },
       {}},
      {"p_threshold", "Granger significance threshold",
       [](SessionState& s, const json& v, const SettingContext&) -> std::optional<std::string> {
         if (auto e = need_number(v, "p_threshold")) return e;
         const double p = v.get<double>();
         if (!(p > 0.0 && p < 1.0)) return std::string("p_threshold must satisfy 0 < p_threshold < 1");
         s.p_threshold = p;
         return std::nullopt;
       },
       {E::refit_causality}},
      {"ir_horizon", "horizon of the IR and VD summaries",
       [](SessionState& s, const json& v, const SettingContext&) -> std::optional<std::string> {
         if (auto e = need_int(v, "ir_horizon")) return e;
         const std::int64_t h = as_int(v);
         if (h < 1 || h > 100) return std::string("ir_horizon must lie in [1, 100]");
         s.ir_horizon = static_cast<int>(h);
         return std::nullopt;
       },
       {E::refit_causality}},
      {"var_lag", "VAR lag order",
       [](SessionState& s, const json& v, const SettingContext&) -> std::optional<std::string> {
         if (auto e = need_int(v, "var_lag")) return e;
         const std::int64_t p = as_int(v);
         if (p < 1 || p > 4) return std::string("var_lag must lie in [1, 4]");
         s.var_lag = static_cast<int>(p);
         return std::nullopt;
       },
       {E::refit_causality}},
  };
  return registry;
}

inline const SettingSpec* find_setting(const std::string& key) {
  for (const auto& s : setting_registry())
    if (s.key == key) return &s;
  return nullptr;
}

struct SettingResult {
  bool ok = false;
  std::string error;
  std::vector<SettingEffect> effects;
};

/// Validates and applies one setting. On rejection `session` is unchanged.
inline SettingResult apply_setting(SessionState& session, const std::string& key, const nlohmann::json& value,
                                   const SettingContext& ctx) {
  SettingResult r;
  const SettingSpec* spec = find_setting(key);
  if (!spec) {
    r.error = "unknown setting '" + key + "'";
    return r;
  }
  SessionState candidate = session;
  if (auto err = spec->apply(candidate, value, ctx)) {
    r.error = *err;
    return r;
  }
  session = std::move(candidate);
  r.ok = true;
  r.effects = spec->effects;
  return r;
}

/// Parses a textual flag/env value into JSON: numbers, booleans and quoted or
/// bare strings.
inline nlohmann::json parse_setting_text(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) return nlohmann::json(text);
  return j;
}

}  // namespace perfstream
