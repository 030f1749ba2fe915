#pragma once

// Newline-delimited JSON ingest format.
//   preamble: {"n": int, "metrics": [string], "hierarchy": [[int]], "interval_ms": number?}
//             (interval_ms 0 marks an unpaced stream)
//   metric:   {"t": int, "e": int, "v": [number]}
//   comm:     {"t": int, "s": int, "d": int, "w": number}

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "perfstream/tensor_store.hpp"

namespace perfstream {

struct Preamble {
  Index n = 0;
  std::vector<std::string> metrics;
  std::vector<std::vector<int>> hierarchy;  // may be empty: flat
  std::optional<double> interval_ms;
};

struct MetricRecord {
  std::int64_t t = 0;
  Index e = 0;
  std::vector<double> v;
};

struct CommRecord {
  std::int64_t t = 0;
  Index s = 0;
  Index d = 0;
  double w = 0.0;
};

struct ParseError {
  std::string message;
};

using WireRecord = std::variant<Preamble, MetricRecord, CommRecord, ParseError>;

namespace detail {

inline bool is_int(const nlohmann::json& j) { return j.is_number_integer() || j.is_number_unsigned(); }

}  // namespace detail

/// Parses one line. Never throws; malformed input yields ParseError.
inline WireRecord parse_line(std::string_view line) {
  nlohmann::json j = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return ParseError{"not a JSON object"};
  try {
    if (j.contains("metrics")) {
      Preamble p;
      if (!j.contains("n") || !detail::is_int(j["n"]) || j["n"].get<std::int64_t>() < 1)
        return ParseError{"preamble: n must be a positive integer"};
      p.n = j["n"].get<Index>();
      if (!j["metrics"].is_array() || j["metrics"].empty()) return ParseError{"preamble: metrics must be a non-empty array"};
      for (const auto& m : j["metrics"]) {
        if (!m.is_string()) return ParseError{"preamble: metric names must be strings"};
        p.metrics.push_back(m.get<std::string>());
      }
      if (j.contains("hierarchy") && !j["hierarchy"].is_null()) {
        if (!j["hierarchy"].is_array()) return ParseError{"preamble: hierarchy must be an array of paths"};
        for (const auto& path : j["hierarchy"]) {
          if (!path.is_array()) return ParseError{"preamble: hierarchy paths must be arrays"};
          std::vector<int> v;
          for (const auto& g : path) {
            if (!detail::is_int(g)) return ParseError{"preamble: hierarchy entries must be integers"};
            v.push_back(g.get<int>());
          }
          p.hierarchy.push_back(std::move(v));
        }
        if (!p.hierarchy.empty() && static_cast<Index>(p.hierarchy.size()) != p.n)
          return ParseError{"preamble: hierarchy must list one path per entity"};
      }
      if (j.contains("interval_ms")) {
        if (!j["interval_ms"].is_number() || !(j["interval_ms"].get<double>() >= 0.0))
          return ParseError{"preamble: interval_ms must be non-negative"};
        p.interval_ms = j["interval_ms"].get<double>();
      }
      return p;
    }
    if (j.contains("v")) {
      if (!j.contains("t") || !detail::is_int(j["t"]) || !j.contains("e") || !detail::is_int(j["e"]))
        return ParseError{"metric record: t and e must be integers"};
      if (!j["v"].is_array()) return ParseError{"metric record: v must be an array"};
      MetricRecord r;
      r.t = j["t"].get<std::int64_t>();
      r.e = j["e"].get<Index>();
      for (const auto& x : j["v"]) {
        if (!x.is_number()) return ParseError{"metric record: values must be numbers"};
        r.v.push_back(x.get<double>());
      }
      return r;
    }
    if (j.contains("w")) {
      for (const char* key : {"t", "s", "d"})
        if (!j.contains(key) || !detail::is_int(j[key])) return ParseError{"comm record: t, s and d must be integers"};
      if (!j["w"].is_number()) return ParseError{"comm record: w must be a number"};
      CommRecord r;
      r.t = j["t"].get<std::int64_t>();
      r.s = j["s"].get<Index>();
      r.d = j["d"].get<Index>();
      r.w = j["w"].get<double>();
      return r;
    }
  } catch (const nlohmann::json::exception& e) {
    return ParseError{e.what()};
  }
  return ParseError{"unrecognized record"};
}

inline std::string to_line(const Preamble& p) {
  nlohmann::json j{{"n", p.n}, {"metrics", p.metrics}, {"hierarchy", p.hierarchy}};
  if (p.interval_ms) j["interval_ms"] = *p.interval_ms;
  return j.dump();
}

inline std::string to_line(const MetricRecord& r) {
  return nlohmann::json{{"t", r.t}, {"e", r.e}, {"v", r.v}}.dump();
}

inline std::string to_line(const CommRecord& r) {
  return nlohmann::json{{"t", r.t}, {"s", r.s}, {"d", r.d}, {"w", r.w}}.dump();
}

/// Builds a store from a preamble.
inline TensorStore make_store(const Preamble& p, StoreConfig config = {}) {
  return TensorStore(p.n, p.metrics, p.hierarchy.empty() ? Hierarchy{} : Hierarchy(p.hierarchy), config);
}

/// Applies a data record to the store. Returns false for a preamble or parse
/// error (the caller decides how to count those).
inline bool apply_record(TensorStore& store, const WireRecord& rec, double now = TensorStore::steady_now()) {
  if (const auto* m = std::get_if<MetricRecord>(&rec)) {
    store.ingest_record(m->t, m->e, m->v, now);
    return true;
  }
  if (const auto* c = std::get_if<CommRecord>(&rec)) {
    store.ingest_comm(c->t, c->s, c->d, c->w);
    return true;
  }
  return false;
}

}  // namespace perfstream
