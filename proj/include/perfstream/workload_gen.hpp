#pragma once

// Deterministic synthetic PE/KP performance streams with plantable group
// structure, level shifts, peaks, outliers, communication hot spots and a
// lagged causal coupling between two metrics. Also replays recorded streams.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "perfstream/wire_format.hpp"

namespace perfstream {

inline const std::vector<std::string>& default_metric_names() {
  static const std::vector<std::string> names{"Prim.Rb.", "Sec.Rb.", "Net.Send.", "Net.Recv.", "Num.Events"};
  return names;
}

struct BehaviorGroup {
  std::vector<int> pes;       // member PEs (all their KPs)
  std::vector<double> mean;   // per metric
  std::vector<double> sd;     // per metric, entity noise
  std::vector<double> scale;  // per metric, loading on the shared latent
};

enum class EventKind { level_shift, peak, outlier, comm_hotspot };

struct ScenarioEvent {
  EventKind kind = EventKind::level_shift;
  std::int64_t t = 0;
  std::int64_t duration = 1;  // peak, outlier, comm_hotspot
  int group = 0;              // level_shift, peak
  std::vector<int> entities;  // outlier, comm_hotspot
  int metric = 0;
  double sigmas = 0.0;  // effect in units of the group's (or entity's) sd
  double amount = 0.0;  // comm_hotspot self-traffic
};

struct CausalCoupling {
  int cause = 2;   // Net.Send.
  int effect = 1;  // Sec.Rb.
  double gain = 0.0;
};

/// Scenario schema (JSON keys match the field names):
///   pes, kps_per_pe, length, interval_ms, metrics, latent_ar,
///   groups: [{pes, mean, sd, scale}],
///   events: [{kind, t, duration, group, entities, metric, sigmas, amount}],
///   coupling: {cause, effect, gain},
///   comm: {within, across, noise}
struct Scenario {
  int pes = 8;
  int kps_per_pe = 16;
  std::int64_t length = 300;
  double interval_ms = 1000.0;
  std::vector<std::string> metrics = default_metric_names();
  double latent_ar = 0.5;
  std::vector<BehaviorGroup> groups;
  std::vector<ScenarioEvent> events;
  CausalCoupling coupling;
  double comm_within = 20.0;
  double comm_across = 2.0;
  double comm_noise = 0.1;

  Index entities() const { return static_cast<Index>(pes) * kps_per_pe; }
  Index dims() const { return static_cast<Index>(metrics.size()); }

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("scenario: " + m); };
    if (pes < 1 || kps_per_pe < 1) fail("pes and kps_per_pe must be positive");
    if (length < 1) fail("length must be positive");
    if (!(interval_ms >= 0.0)) fail("interval_ms must be non-negative");
    if (metrics.empty()) fail("at least one metric is required");
    if (!(latent_ar > -1.0 && latent_ar < 1.0)) fail("latent_ar must lie in (-1, 1)");
    if (groups.empty()) fail("at least one group is required");
    std::vector<int> owner(static_cast<std::size_t>(pes), -1);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& gr = groups[g];
      const auto d = metrics.size();
      if (gr.mean.size() != d || gr.sd.size() != d || gr.scale.size() != d)
        fail("group " + std::to_string(g) + " needs one mean, sd and scale per metric");
      for (double s : gr.sd)
        if (!(s >= 0.0)) fail("group sd must be non-negative");
      for (int pe : gr.pes) {
        if (pe < 0 || pe >= pes) fail("group PE index out of range");
        if (owner[static_cast<std::size_t>(pe)] >= 0) fail("PE assigned to more than one group");
        owner[static_cast<std::size_t>(pe)] = static_cast<int>(g);
      }
    }
    if (std::find(owner.begin(), owner.end(), -1) != owner.end()) fail("groups must partition the PEs");
    for (const auto& e : events) {
      if (e.t < 0) fail("event times must be non-negative");
      if (e.duration < 1) fail("event duration must be positive");
      if (e.metric < 0 || e.metric >= static_cast<int>(metrics.size())) fail("event metric out of range");
      if ((e.kind == EventKind::level_shift || e.kind == EventKind::peak) &&
          (e.group < 0 || e.group >= static_cast<int>(groups.size())))
        fail("event group out of range");
      for (int ent : e.entities)
        if (ent < 0 || ent >= entities()) fail("event entity out of range");
      if (e.kind == EventKind::comm_hotspot && !(e.amount >= 0.0)) fail("hotspot amount must be non-negative");
    }
    if (coupling.gain != 0.0 &&
        (coupling.cause < 0 || coupling.effect < 0 || coupling.cause >= static_cast<int>(metrics.size()) ||
         coupling.effect >= static_cast<int>(metrics.size()) || coupling.cause == coupling.effect))
      fail("coupling metrics must be two distinct valid metrics");
    if (!(comm_within >= 0.0 && comm_across >= 0.0 && comm_noise >= 0.0)) fail("comm weights must be non-negative");
  }

  /// Planted group of every entity (entity = pe * kps_per_pe + kp).
  std::vector<int> entity_groups() const {
    std::vector<int> pe_group(static_cast<std::size_t>(pes), 0);
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (int pe : groups[g].pes) pe_group[static_cast<std::size_t>(pe)] = static_cast<int>(g);
    std::vector<int> out;
    for (int pe = 0; pe < pes; ++pe)
      for (int kp = 0; kp < kps_per_pe; ++kp) out.push_back(pe_group[static_cast<std::size_t>(pe)]);
    return out;
  }

  /// The case-study style default: 8 PEs x 16 KPs in three behavior groups, a
  /// +5 sd Sec.Rb. level shift on group 2 at t = 200 and Net.Send. driving
  /// Sec.Rb. with a one-step lag.
  static Scenario reference() {
    Scenario s;
    s.groups = {
        {{0, 1, 2}, {10, 10, 40, 40, 500}, {1, 1, 2, 2, 10}, {0.3, 0.3, 0.6, 0.6, 3}},
        {{3, 4, 5}, {20, 20, 60, 60, 700}, {1, 1, 2, 2, 10}, {0.3, 0.3, 0.6, 0.6, 3}},
        {{6, 7}, {30, 30, 80, 80, 900}, {1, 1, 2, 2, 10}, {0.3, 0.3, 0.6, 0.6, 3}},
    };
    ScenarioEvent shift;
    shift.kind = EventKind::level_shift;
    shift.t = 200;
    shift.group = 2;
    shift.metric = 1;
    shift.sigmas = 5.0;
    s.events.push_back(shift);
    ScenarioEvent hot;
    hot.kind = EventKind::comm_hotspot;
    hot.t = 200;
    hot.duration = 100;
    hot.entities = {0};
    hot.amount = 200.0;
    s.events.push_back(hot);
    s.coupling = {2, 1, 0.8};
    return s;
  }
};

inline std::string to_string(EventKind k) {
  switch (k) {
    case EventKind::level_shift: return "level_shift";
    case EventKind::peak: return "peak";
    case EventKind::outlier: return "outlier";
    case EventKind::comm_hotspot: return "comm_hotspot";
  }
  return "level_shift";
}

inline EventKind event_kind_from_string(const std::string& s) {
  for (EventKind k : {EventKind::level_shift, EventKind::peak, EventKind::outlier, EventKind::comm_hotspot})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("scenario: unknown event kind '" + s + "'");
}

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["pes"] = s.pes;
  j["kps_per_pe"] = s.kps_per_pe;
  j["length"] = s.length;
  j["interval_ms"] = s.interval_ms;
  j["metrics"] = s.metrics;
  j["latent_ar"] = s.latent_ar;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : s.groups)
    j["groups"].push_back({{"pes", g.pes}, {"mean", g.mean}, {"sd", g.sd}, {"scale", g.scale}});
  j["events"] = nlohmann::json::array();
  for (const auto& e : s.events)
    j["events"].push_back({{"kind", to_string(e.kind)},
                           {"t", e.t},
                           {"duration", e.duration},
                           {"group", e.group},
                           {"entities", e.entities},
                           {"metric", e.metric},
                           {"sigmas", e.sigmas},
                           {"amount", e.amount}});
  j["coupling"] = {{"cause", s.coupling.cause}, {"effect", s.coupling.effect}, {"gain", s.coupling.gain}};
  j["comm"] = {{"within", s.comm_within}, {"across", s.comm_across}, {"noise", s.comm_noise}};
  return j;
}

/// Missing keys take the reference defaults; groups default to a single group
/// over all PEs. The result is validated.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario s;
  try {
    s.pes = j.value("pes", s.pes);
    s.kps_per_pe = j.value("kps_per_pe", s.kps_per_pe);
    s.length = j.value("length", s.length);
    s.interval_ms = j.value("interval_ms", s.interval_ms);
    s.metrics = j.value("metrics", s.metrics);
    s.latent_ar = j.value("latent_ar", s.latent_ar);
    const auto d = s.metrics.size();
    if (j.contains("groups")) {
      for (const auto& g : j.at("groups")) {
        BehaviorGroup b;
        b.pes = g.at("pes").get<std::vector<int>>();
        b.mean = g.value("mean", std::vector<double>(d, 10.0));
        b.sd = g.value("sd", std::vector<double>(d, 1.0));
        b.scale = g.value("scale", std::vector<double>(d, 0.0));
        s.groups.push_back(std::move(b));
      }
    } else {
      BehaviorGroup b;
      for (int pe = 0; pe < s.pes; ++pe) b.pes.push_back(pe);
      b.mean.assign(d, 10.0);
      b.sd.assign(d, 1.0);
      b.scale.assign(d, 0.0);
      s.groups.push_back(std::move(b));
    }
    if (j.contains("events")) {
      for (const auto& e : j.at("events")) {
        ScenarioEvent ev;
        ev.kind = event_kind_from_string(e.at("kind").get<std::string>());
        ev.t = e.at("t").get<std::int64_t>();
        ev.duration = e.value("duration", ev.kind == EventKind::level_shift ? std::int64_t{1} : std::int64_t{5});
        ev.group = e.value("group", 0);
        ev.entities = e.value("entities", std::vector<int>{});
        ev.metric = e.value("metric", 0);
        ev.sigmas = e.value("sigmas", 0.0);
        ev.amount = e.value("amount", 0.0);
        s.events.push_back(std::move(ev));
      }
    }
    if (j.contains("coupling")) {
      const auto& c = j.at("coupling");
      s.coupling.cause = c.value("cause", s.coupling.cause);
      s.coupling.effect = c.value("effect", s.coupling.effect);
      s.coupling.gain = c.value("gain", 0.0);
    }
    if (j.contains("comm")) {
      const auto& c = j.at("comm");
      s.comm_within = c.value("within", s.comm_within);
      s.comm_across = c.value("across", s.comm_across);
      s.comm_noise = c.value("noise", s.comm_noise);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("scenario: ") + e.what());
  }
  s.validate();
  return s;
}

/// Produces the stream slice by slice. Metric value for entity e in group g:
///   max(0, mean_g + scale_g * L_m(t) + sd_g * noise + events)
/// with L_m a shared AR(1) latent per metric; the coupling adds
/// gain * L_cause(t - 1) to L_effect(t).
class Generator {
 public:
  Generator(Scenario scenario, std::uint64_t seed) : s_(std::move(scenario)), rng_(seed) {
    s_.validate();
    groups_ = s_.entity_groups();
    latent_.assign(static_cast<std::size_t>(s_.dims()), 0.0);
  }

  const Scenario& scenario() const { return s_; }
  std::int64_t next_time() const { return t_; }
  bool done() const { return t_ >= s_.length; }

  Preamble preamble() const {
    Preamble p;
    p.n = s_.entities();
    p.metrics = s_.metrics;
    for (int pe = 0; pe < s_.pes; ++pe)
      for (int kp = 0; kp < s_.kps_per_pe; ++kp) p.hierarchy.push_back({pe, kp});
    p.interval_ms = s_.interval_ms;
    return p;
  }

  /// Emits the records of the next slice.
  void next(std::vector<MetricRecord>& metrics, std::vector<CommRecord>& comm) {
    metrics.clear();
    comm.clear();
    const std::int64_t t = t_++;
    const Index d = s_.dims(), n = s_.entities();

    const std::vector<double> prev = latent_;
    for (Index m = 0; m < d; ++m) {
      double v = s_.latent_ar * prev[static_cast<std::size_t>(m)] + normal_(rng_);
      if (s_.coupling.gain != 0.0 && m == s_.coupling.effect)
        v += s_.coupling.gain * prev[static_cast<std::size_t>(s_.coupling.cause)];
      latent_[static_cast<std::size_t>(m)] = v;
    }

    for (Index e = 0; e < n; ++e) {
      const auto g = static_cast<std::size_t>(groups_[static_cast<std::size_t>(e)]);
      const BehaviorGroup& gr = s_.groups[g];
      MetricRecord r;
      r.t = t;
      r.e = e;
      r.v.resize(static_cast<std::size_t>(d));
      for (Index m = 0; m < d; ++m) {
        const auto mu = static_cast<std::size_t>(m);
        double v = gr.mean[mu] + gr.scale[mu] * latent_[mu] + gr.sd[mu] * normal_(rng_);
        v += event_offset(t, e, static_cast<int>(g), static_cast<int>(m));
        r.v[mu] = std::max(0.0, v);
      }
      metrics.push_back(std::move(r));
    }

    std::uniform_int_distribution<int> kp_pick(0, s_.kps_per_pe - 1);
    std::uniform_int_distribution<int> pe_pick(0, std::max(0, s_.pes - 1));
    for (Index e = 0; e < n; ++e) {
      const int pe = static_cast<int>(e / s_.kps_per_pe);
      const Index peer = static_cast<Index>(pe) * s_.kps_per_pe + kp_pick(rng_);
      comm.push_back({t, e, peer, noisy(s_.comm_within)});
      if (s_.pes > 1) {
        int other = pe_pick(rng_);
        if (other == pe) other = (other + 1) % s_.pes;
        comm.push_back({t, e, static_cast<Index>(other) * s_.kps_per_pe + kp_pick(rng_), noisy(s_.comm_across)});
      }
    }
    for (const auto& ev : s_.events) {
      if (ev.kind != EventKind::comm_hotspot || t < ev.t || t >= ev.t + ev.duration) continue;
      for (int ent : ev.entities) comm.push_back({t, ent, ent, ev.amount});
    }
  }

 private:
  double noisy(double base) {
    return std::max(0.0, std::round(base * (1.0 + s_.comm_noise * normal_(rng_))));
  }

  double event_offset(std::int64_t t, Index e, int group, int metric) const {
    double off = 0.0;
    for (const auto& ev : s_.events) {
      if (ev.metric != metric) continue;
      const double sd = s_.groups[static_cast<std::size_t>(group)].sd[static_cast<std::size_t>(metric)];
      switch (ev.kind) {
        case EventKind::level_shift:
          if (group == ev.group && t >= ev.t) off += ev.sigmas * sd;
          break;
        case EventKind::peak:
          if (group == ev.group && t >= ev.t && t < ev.t + ev.duration) off += ev.sigmas * sd;
          break;
        case EventKind::outlier:
          if (t >= ev.t && t < ev.t + ev.duration &&
              std::find(ev.entities.begin(), ev.entities.end(), static_cast<int>(e)) != ev.entities.end())
            off += ev.sigmas * sd;
          break;
        case EventKind::comm_hotspot: break;
      }
    }
    return off;
  }

  Scenario s_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::vector<int> groups_;
  std::vector<double> latent_;
  std::int64_t t_ = 0;
};

/// Receives one NDJSON line (without newline); return false to stop.
using LineSink = std::function<bool(const std::string&)>;

struct EmitStats {
  std::int64_t slices = 0;
  std::int64_t lines = 0;
  bool stopped = false;  // the sink asked to stop
};

/// Writes the full stream of `scenario`. Slice t is released at
/// t * interval after the start when `throttle` is set (sleep-until-deadline).
inline EmitStats generate(const Scenario& scenario, std::uint64_t seed, const LineSink& sink, bool throttle = true) {
  Generator gen(scenario, seed);
  EmitStats stats;
  auto emit = [&](const std::string& line) {
    ++stats.lines;
    if (!sink(line)) stats.stopped = true;
    return !stats.stopped;
  };
  if (!emit(to_line(gen.preamble()))) return stats;
  const auto start = SteadyClock::now();
  std::vector<MetricRecord> metrics;
  std::vector<CommRecord> comm;
  while (!gen.done()) {
    const std::int64_t t = gen.next_time();
    if (throttle && scenario.interval_ms > 0.0)
      std::this_thread::sleep_until(start + std::chrono::duration_cast<SteadyClock::duration>(
                                                Millis(scenario.interval_ms * static_cast<double>(t))));
    gen.next(metrics, comm);
    // Comm first: a slice seals on its last metric record.
    for (const auto& r : comm)
      if (!emit(to_line(r))) return stats;
    for (const auto& r : metrics)
      if (!emit(to_line(r))) return stats;
    ++stats.slices;
  }
  return stats;
}

struct ReplayStats {
  std::int64_t lines = 0;
  std::int64_t records = 0;
  std::int64_t malformed = 0;
  bool stopped = false;
};

/// Re-emits a recorded stream. Records of slice t are released at
/// (t - t_first) * interval / speed after the start, the interval coming from
/// the preamble (`default_interval_ms` when absent); speed 0 means no waiting.
/// Malformed lines are skipped and counted.
inline ReplayStats replay(std::istream& in, double speed, const LineSink& sink, double default_interval_ms = 1000.0) {
  if (!(speed >= 0.0)) throw std::invalid_argument("replay: speed must be non-negative");
  ReplayStats stats;
  double interval_ms = default_interval_ms;
  std::optional<std::int64_t> first_t;
  const auto start = SteadyClock::now();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++stats.lines;
    const WireRecord rec = parse_line(line);
    if (std::holds_alternative<ParseError>(rec)) {
      ++stats.malformed;
      continue;
    }
    std::optional<std::int64_t> t;
    if (const auto* p = std::get_if<Preamble>(&rec)) {
      if (p->interval_ms) interval_ms = *p->interval_ms;
    } else if (const auto* m = std::get_if<MetricRecord>(&rec)) {
      t = m->t;
    } else if (const auto* c = std::get_if<CommRecord>(&rec)) {
      t = c->t;
    }
    if (t) {
      if (!first_t) first_t = *t;
      if (speed > 0.0 && *t > *first_t) {
        const double at_ms = static_cast<double>(*t - *first_t) * interval_ms / speed;
        std::this_thread::sleep_until(start + std::chrono::duration_cast<SteadyClock::duration>(Millis(at_ms)));
      }
      ++stats.records;
    }
    if (!sink(line)) {
      stats.stopped = true;
      break;
    }
  }
  return stats;
}

}  // namespace perfstream
