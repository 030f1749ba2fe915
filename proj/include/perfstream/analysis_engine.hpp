#pragma once

// Per-slice analysis tick: change detection, progressive clustering and
// projection, periodic causality fitting and communication matrices, packaged
// as one self-contained JSON frame per sealed slice.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "perfstream/causality.hpp"
#include "perfstream/change_detect.hpp"
#include "perfstream/progressive_cluster.hpp"
#include "perfstream/progressive_dr.hpp"
#include "perfstream/session.hpp"
#include "perfstream/tensor_store.hpp"
#include "perfstream/wire_format.hpp"

namespace perfstream {

using CommPtr = std::shared_ptr<const CommGraphFrame>;

/// A sealed slice plus the communication frame of the same interval.
struct SliceEvent {
  SlicePtr slice;
  CommPtr comm;
};

struct StreamMeta {
  Index entities = 0;
  std::vector<std::string> metric_names;
  Hierarchy hierarchy;
  Index window_capacity = 64;
};

struct EngineConfig {
  std::uint64_t seed = 0;
  Index max_points = 512;     // decimation limit per polyline
  std::size_t comm_cap = 32;  // change-point frames kept for diff matrices
  Index dr_per_cluster_batch = 10;
  Index cluster_per_cluster_batch = 10;
  // Called before each stage with its section name; a throw marks the
  // section stale for this tick (fault injection in tests).
  std::function<void(const std::string&)> stage_hook;
};

struct ChangePoint {
  int metric = 0;
  std::int64_t t = 0;
  std::int64_t ordinal = 0;
};

struct Freshness {
  bool stale = false;
  std::int64_t computed_at = -1;  // time index of the computation
  std::int64_t computed_tick = -1;
  std::string error;
};

struct AnalysisFrame {
  std::int64_t t = 0;
  std::int64_t tick = 0;
  nlohmann::json body;
};

inline nlohmann::json envelope(const std::string& type, nlohmann::json payload) {
  return {{"type", type}, {"payload", std::move(payload)}};
}

namespace detail {

/// Evenly spaced indices into [0, len), at most `limit`, always keeping the last.
inline std::vector<Index> decimate(Index len, Index limit) {
  std::vector<Index> idx;
  if (len <= 0) return idx;
  if (len <= limit) {
    for (Index i = 0; i < len; ++i) idx.push_back(i);
    return idx;
  }
  for (Index j = 0; j < limit; ++j)
    idx.push_back(static_cast<Index>(std::llround(static_cast<double>(j) * static_cast<double>(len - 1) /
                                                  static_cast<double>(limit - 1))));
  return idx;
}

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline nlohmann::json freshness_json(const Freshness& f, std::int64_t tick) {
  nlohmann::json j{{"stale", f.stale},
                   {"computed_at", f.computed_at},
                   {"age", f.computed_tick < 0 ? -1 : tick - f.computed_tick}};
  if (!f.error.empty()) j["error"] = f.error;
  return j;
}

}  // namespace detail

struct ControlResult {
  nlohmann::json reply;                    // ack or error envelope for the sender
  std::optional<AnalysisFrame> broadcast;  // frame to broadcast now (resume)
};

class AnalysisEngine {
 public:
  AnalysisEngine(StreamMeta meta, SessionState session = {}, EngineConfig config = {})
      : meta_(std::move(meta)), session_(std::move(session)), config_(config),
        panel_(meta_.entities, static_cast<Index>(meta_.metric_names.size())) {
    if (meta_.hierarchy.entities() == 0) meta_.hierarchy = Hierarchy::flat(meta_.entities);
    // Startup settings precede the preamble; fit them to the stream's shape.
    session_.aggregation_level = std::min(session_.aggregation_level, meta_.hierarchy.depth());
    const int last_metric = static_cast<int>(meta_.metric_names.size()) - 1;
    session_.top_metric = std::min(session_.top_metric, last_metric);
    session_.bottom_metric = std::min(session_.bottom_metric, last_metric);
    session_.k = static_cast<int>(std::min<Index>(session_.k, meta_.entities));
    SettingContext ctx = context();
    ctx.comm_available = nullptr;
    ctx.current_time.reset();
    // Validate the startup session through the same registry as runtime changes.
    const nlohmann::json s = session_to_json(session_);
    for (const auto& spec : setting_registry()) {
      if (!s.contains(spec.key) || spec.key == "base_time") continue;
      SessionState probe = session_;
      if (auto err = spec.apply(probe, s.at(spec.key), ctx)) throw std::invalid_argument(*err);
    }
    reset_clusters();
    reset_layout(top_dr_);
    reset_layout(bottom_dr_);
  }

  const SessionState& session() const { return session_; }
  const StreamMeta& meta() const { return meta_; }
  const std::vector<ChangePoint>& change_points() const { return change_points_; }
  const ClusterModel& clusters() const { return cluster_; }
  const DrState& top_layout() const { return top_dr_; }
  const DrState& bottom_layout() const { return bottom_dr_; }
  const std::optional<CausalityReport>& causality() const { return report_; }
  const RepresentativePanel& panel() const { return panel_; }
  const std::optional<AnalysisFrame>& latest_frame() const { return latest_; }
  std::int64_t ticks() const { return tick_; }

  SettingContext context() const {
    SettingContext c;
    c.metrics = static_cast<Index>(meta_.metric_names.size());
    c.entities = meta_.entities;
    c.hierarchy_depth = meta_.hierarchy.depth();
    if (latest_slice_) c.current_time = latest_slice_->time_index;
    c.comm_available = [this](std::int64_t t) { return find_comm(t) != nullptr; };
    return c;
  }

  /// Runs one analysis tick on a sealed slice and returns its frame. The
  /// frame should be broadcast only when the session is not paused.
  AnalysisFrame tick(const SliceEvent& ev) {
    if (!ev.slice) throw std::invalid_argument("tick: missing slice");
    if (ev.slice->values.rows() != meta_.entities || ev.slice->values.cols() != metrics())
      throw std::invalid_argument("tick: slice shape does not match the stream");
    if (latest_slice_ && ev.slice->time_index <= latest_slice_->time_index)
      throw std::invalid_argument("tick: slices must arrive in increasing time order");
    const auto t0 = SteadyClock::now();
    ++tick_;
    latest_slice_ = ev.slice;
    if (tick_ == 1) session_.base_time = ev.slice->time_index;

    window_.push_back(ev.slice);
    comm_window_.push_back(ev.comm ? ev.comm : std::make_shared<CommGraphFrame>(empty_comm(ev.slice->time_index)));
    while (static_cast<Index>(window_.size()) > meta_.window_capacity) {
      window_.pop_front();
      comm_window_.pop_front();
    }
    const Eigen::RowVectorXd means = ev.slice->values.colwise().mean();
    summary_times_.push_back(ev.slice->time_index);
    summary_.push_back(means);
    if (tick_ == 1) retain_base();

    run_stage("change_points", cpd_fresh_, [&] { detect_changes(*ev.slice); });
    run_stage("clusters", cluster_fresh_, [&] { refresh_clusters(); });
    run_stage("layout", layout_fresh_, [&] { refresh_layouts(); });
    if ((tick_ - 1) % session_.causality_cadence == 0 || refit_requested_) {
      run_stage("causality", causality_fresh_, [&] { refit_causality(); });
    }
    run_stage("comm", comm_fresh_, [&] { comm_section_ = comm_section(); });

    last_tick_ms_ = Millis(SteadyClock::now() - t0).count();
    AnalysisFrame f = assemble();
    latest_ = f;
    return f;
  }

  /// Handles one client control message (already parsed JSON).
  ControlResult handle_control(const nlohmann::json& msg) {
    ControlResult out;
    auto error = [&](const std::string& m) { out.reply = envelope("error", {{"message", m}}); };
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string()) {
      error("control message must be an object with a string \"type\"");
      return out;
    }
    const std::string type = msg["type"].get<std::string>();
    if (type == "pause") {
      session_.paused = true;
      out.reply = envelope("ack", {{"type", "pause"}, {"session", session_to_json(session_)}});
    } else if (type == "resume") {
      session_.paused = false;
      out.reply = envelope("ack", {{"type", "resume"}, {"session", session_to_json(session_)}});
      if (latest_) out.broadcast = *latest_;
    } else if (type == "select") {
      if (!msg.contains("entities") || !msg["entities"].is_array()) {
        error("select requires an \"entities\" array");
        return out;
      }
      std::vector<Index> sel;
      for (const auto& e : msg["entities"]) {
        if (!(e.is_number_integer() || e.is_number_unsigned()) || e.get<std::int64_t>() < 0 ||
            e.get<std::int64_t>() >= meta_.entities) {
          error("select: entity ids must be integers in [0, " + std::to_string(meta_.entities - 1) + "]");
          return out;
        }
        sel.push_back(e.get<Index>());
      }
      std::sort(sel.begin(), sel.end());
      sel.erase(std::unique(sel.begin(), sel.end()), sel.end());
      session_.selection = std::move(sel);
      out.reply = envelope("ack", {{"type", "select"}, {"selection", session_.selection}});
    } else if (type == "set") {
      if (!msg.contains("key") || !msg["key"].is_string() || !msg.contains("value")) {
        error("set requires \"key\" (string) and \"value\"");
        return out;
      }
      const std::string key = msg["key"].get<std::string>();
      const SessionState before = session_;
      const SettingResult r = apply_setting(session_, key, msg["value"], context());
      if (!r.ok) {
        error(r.error);
        return out;
      }
      on_session_change(before);
      nlohmann::json payload{{"type", "set"}, {"key", key}, {"value", msg["value"]}, {"session", session_to_json(session_)}};
      if (std::find(r.effects.begin(), r.effects.end(), SettingEffect::recompute_comm) != r.effects.end() && latest_slice_) {
        comm_section_ = comm_section();
        comm_fresh_ = {false, latest_slice_->time_index, tick_, ""};
        payload["comm"] = comm_section_;
      }
      out.reply = envelope("ack", std::move(payload));
    } else {
      error("unknown control message type '" + type + "'");
    }
    return out;
  }

  /// Session plus the latest frame, for a newly connected client. The comm
  /// section reflects settings applied since that frame was computed.
  nlohmann::json snapshot() const {
    nlohmann::json frame;
    if (latest_) {
      frame = latest_->body;
      frame["comm"] = comm_section_;
    }
    return envelope("snapshot", {{"session", session_to_json(session_)}, {"frame", std::move(frame)}});
  }

  /// Communication frame retained for `t` (window, base or change point).
  CommPtr find_comm(std::int64_t t) const {
    for (const auto& c : comm_window_)
      if (c->time_index == t) return c;
    if (base_comm_ && base_comm_->time_index == t) return base_comm_;
    const auto it = cp_comm_.find(t);
    return it == cp_comm_.end() ? nullptr : it->second;
  }

  std::size_t retained_change_frames() const { return cp_comm_.size(); }

 private:
  template <typename F>
  void run_stage(const std::string& name, Freshness& fresh, F&& f) {
    try {
      if (config_.stage_hook) config_.stage_hook(name);
      f();
      fresh.stale = false;
      fresh.error.clear();
      fresh.computed_at = latest_slice_->time_index;
      fresh.computed_tick = tick_;
    } catch (const std::exception& e) {
      fresh.stale = true;
      fresh.error = e.what();
    }
  }

  CommGraphFrame empty_comm(std::int64_t t) const {
    CommGraphFrame f;
    f.time_index = t;
    f.level = meta_.hierarchy.depth();
    f.dim = meta_.entities;
    return f;
  }

  Index metrics() const { return static_cast<Index>(meta_.metric_names.size()); }

  Eigen::MatrixXd window_matrix(int metric) const {
    Eigen::MatrixXd out(meta_.entities, static_cast<Index>(window_.size()));
    Index c = 0;
    for (const auto& s : window_) out.col(c++) = s->values.col(metric);
    return out;
  }

  // ---- stages

  void detect_changes(const Slice& slice) {
    const Eigen::VectorXd reps = panel_.push_slice(slice.values);
    std::vector<int> enabled{session_.top_metric};
    if (session_.cpd_bottom && session_.bottom_metric != session_.top_metric) enabled.push_back(session_.bottom_metric);
    for (int m : enabled) {
      auto it = detectors_.find(m);
      if (it == detectors_.end()) {
        DetectorConfig cfg;
        cfg.alpha = session_.alpha;
        it = detectors_.emplace(m, AffMeanDetector(cfg)).first;
      }
      if (it->second.alpha() != session_.alpha) it->second.set_alpha(session_.alpha);
      if (it->second.update(reps(m))) add_change_point(m, slice.time_index);
    }
  }

  void add_change_point(int metric, std::int64_t t) {
    change_points_.push_back({metric, t, ++ordinal_});
    if (!cp_comm_.count(t)) {
      cp_comm_[t] = comm_window_.back();
      while (cp_comm_.size() > config_.comm_cap) cp_comm_.erase(cp_comm_.begin());
    }
  }

  void reset_clusters() {
    ClusterConfig cc;
    cc.k = session_.k;
    cc.per_cluster_batch = config_.cluster_per_cluster_batch;
    cc.budget = Budget::millis(session_.cluster_budget_ms);
    cc.seed = mix_seed(config_.seed, 1);
    cluster_ = ClusterModel::create(cc);
    cluster_reseed_pending_ = true;
  }

  void reset_layout(DrState& dr) {
    DrConfig dc;
    dc.k = session_.k;
    dc.per_cluster_batch = config_.dr_per_cluster_batch;
    dc.seed = mix_seed(config_.seed, &dr == &top_dr_ ? 2 : 3);
    dr = DrState::create(dc);
  }

  void refresh_clusters() {
    if (session_.k > meta_.entities) throw std::invalid_argument("k exceeds the entity count");
    const Eigen::MatrixXd w = window_matrix(session_.effective_cluster_metric());
    cluster_.config.budget = Budget::millis(session_.cluster_budget_ms);
    cluster_ = refresh(cluster_, w);
    if (cluster_reseed_pending_) cluster_.reseeded = true;
    cluster_reseed_pending_ = false;
  }

  void refresh_layouts() {
    const std::span<const int> labels(cluster_.assignments);
    for (DrState* dr : {&top_dr_, &bottom_dr_}) {
      const int metric = dr == &top_dr_ ? session_.top_metric : session_.bottom_metric;
      dr->config.k = session_.k;
      *dr = refresh_layout(*dr, window_matrix(metric), labels, Budget::millis(session_.dr_budget_ms));
    }
  }

  void refit_causality() {
    refit_requested_ = false;
    var_fit_.reset();
    if (metrics() < 2) {
      report_ = CausalityReport{};
      report_->target = session_.effective_target();
      report_->direction = session_.direction;
      return;
    }
    const Eigen::MatrixXd z = panel_.standardized();
    Rng rng(mix_seed(config_.seed, 1000 + static_cast<std::uint64_t>(tick_)));
    VarFitOptions opt;
    opt.lag = session_.var_lag;
    ProgressiveVarFit fit = progressive_var_fit(z, Budget::millis(session_.var_budget_ms), var_s_, opt, rng);
    var_s_ = fit.next_start;
    var_fit_ = fit;
    if (!fit.model) {
      report_.reset();  // withheld: too few points
      return;
    }
    report_ = build_report(*fit.model, session_.effective_target(), session_.direction, session_.p_threshold,
                           session_.ir_horizon);
  }

  void retain_base() {
    base_comm_ = find_comm(session_.base_time);
  }

  nlohmann::json comm_section() {
    const int level = session_.aggregation_level;
    auto agg = [&](const CommGraphFrame& f) { return aggregate_comm(f, meta_.hierarchy, level).dense(); };
    nlohmann::json j;
    j["level"] = level;
    j["dim"] = meta_.hierarchy.group_count(level);
    j["t"] = latest_slice_->time_index;
    j["live"] = detail::matrix_json(agg(*comm_window_.back()));
    if (!base_comm_ || base_comm_->time_index != session_.base_time) retain_base();
    j["diffs"] = nlohmann::json::array();
    if (!base_comm_) {
      j["base"] = nullptr;
      return j;
    }
    const Eigen::MatrixXd base = agg(*base_comm_);
    j["base"] = {{"t", base_comm_->time_index}, {"matrix", detail::matrix_json(base)}};
    for (const auto& cp : change_points_) {
      const auto it = cp_comm_.find(cp.t);
      if (it == cp_comm_.end()) continue;
      j["diffs"].push_back(
          {{"ordinal", cp.ordinal}, {"t", cp.t}, {"metric", cp.metric}, {"matrix", detail::matrix_json(agg(*it->second) - base)}});
    }
    return j;
  }

  void on_session_change(const SessionState& before) {
    if (before.k != session_.k || before.effective_cluster_metric() != session_.effective_cluster_metric()) {
      reset_clusters();
    }
    if (before.top_metric != session_.top_metric || before.k != session_.k) reset_layout(top_dr_);
    if (before.bottom_metric != session_.bottom_metric || before.k != session_.k) reset_layout(bottom_dr_);
    if (before.effective_target() != session_.effective_target() || before.direction != session_.direction ||
        before.p_threshold != session_.p_threshold || before.ir_horizon != session_.ir_horizon ||
        before.var_lag != session_.var_lag)
      refit_requested_ = true;
    if (before.base_time != session_.base_time) retain_base();
  }

  // ---- frame

  nlohmann::json series_rows(int metric, const std::vector<Index>& cols) const {
    nlohmann::json rows = nlohmann::json::array();
    for (Index e = 0; e < meta_.entities; ++e) {
      nlohmann::json r = nlohmann::json::array();
      for (Index c : cols) r.push_back(window_[static_cast<std::size_t>(c)]->values(e, metric));
      rows.push_back(std::move(r));
    }
    return rows;
  }

  nlohmann::json layout_json(const DrState& dr) const {
    nlohmann::json pts = nlohmann::json::array();
    for (Index i = 0; i < dr.layout.rows(); ++i) pts.push_back({dr.layout.positions(i, 0), dr.layout.positions(i, 1)});
    return {{"positions", pts},
            {"epoch", dr.layout.epoch},
            {"break", dr.layout_break},
            {"processed", dr.processed_count},
            {"raw_disparity", dr.raw_disparity},
            {"aligned_disparity", dr.aligned_disparity}};
  }

  AnalysisFrame assemble() const {
    using json = nlohmann::json;
    AnalysisFrame f;
    f.t = latest_slice_->time_index;
    f.tick = tick_;
    json& b = f.body;
    b["t"] = f.t;
    b["tick"] = tick_;
    b["metrics"] = {{"names", meta_.metric_names},
                    {"top", session_.top_metric},
                    {"bottom", session_.bottom_metric},
                    {"cluster", session_.effective_cluster_metric()}};

    const std::vector<Index> wcols = detail::decimate(static_cast<Index>(window_.size()), config_.max_points);
    json wtimes = json::array();
    for (Index c : wcols) wtimes.push_back(window_[static_cast<std::size_t>(c)]->time_index);
    b["window"] = {{"times", wtimes},
                   {"top", series_rows(session_.top_metric, wcols)},
                   {"bottom", series_rows(session_.bottom_metric, wcols)},
                   {"filled", latest_slice_->missing()}};

    const std::vector<Index> scols = detail::decimate(static_cast<Index>(summary_.size()), config_.max_points);
    json stimes = json::array(), stop = json::array(), sbot = json::array();
    for (Index c : scols) {
      const auto cu = static_cast<std::size_t>(c);
      stimes.push_back(summary_times_[cu]);
      stop.push_back(summary_[cu](session_.top_metric));
      sbot.push_back(summary_[cu](session_.bottom_metric));
    }
    b["summary"] = {{"times", stimes}, {"top", stop}, {"bottom", sbot}};

    json cps = json::array();
    for (const auto& cp : change_points_) cps.push_back({{"metric", cp.metric}, {"t", cp.t}, {"ordinal", cp.ordinal}});
    b["change_points"] = cps;

    b["clusters"] = cluster_.assignments;
    b["cluster_sizes"] = cluster_.cluster_sizes();
    b["cluster_reseeded"] = cluster_.reseeded;
    b["layout"] = {{"top", layout_json(top_dr_)}, {"bottom", layout_json(bottom_dr_)}};

    if (report_) {
      json rows = json::array();
      for (const auto& r : report_->rows)
        rows.push_back({{"metric", r.metric},
                        {"name", meta_.metric_names[static_cast<std::size_t>(r.metric)]},
                        {"granger_p", r.granger_p},
                        {"significant", r.significant},
                        {"ir", r.ir},
                        {"vd", r.vd}});
      b["causality"] = {{"target", report_->target},
                        {"direction", to_string(report_->direction)},
                        {"p_threshold", report_->p_threshold},
                        {"horizon", report_->horizon},
                        {"ordering", meta_.metric_names},
                        {"jittered", report_->jittered},
                        {"rows", rows}};
    } else {
      b["causality"] = nullptr;
    }
    b["comm"] = comm_section_;
    b["selection"] = session_.selection;
    b["session"] = session_to_json(session_);
    b["freshness"] = {{"change_points", detail::freshness_json(cpd_fresh_, tick_)},
                      {"clusters", detail::freshness_json(cluster_fresh_, tick_)},
                      {"layout", detail::freshness_json(layout_fresh_, tick_)},
                      {"causality", detail::freshness_json(causality_fresh_, tick_)},
                      {"comm", detail::freshness_json(comm_fresh_, tick_)}};
    json diag{{"tick_ms", last_tick_ms_},
              {"cluster_processed", cluster_.processed_count},
              {"dr_processed", {{"top", top_dr_.processed_count}, {"bottom", bottom_dr_.processed_count}}},
              {"panel_length", panel_.length()}};
    if (var_fit_) {
      json steps = json::array();
      for (const auto& s : var_fit_->steps) steps.push_back({{"s", s.sample_size}, {"ms", s.seconds * 1e3}});
      diag["var"] = {{"steps", steps},
                     {"next_s", var_fit_->next_start},
                     {"overrun", var_fit_->overrun},
                     {"withheld", var_fit_->withheld},
                     {"ridge", var_fit_->model ? var_fit_->model->ridge : false}};
    }
    b["diagnostics"] = diag;
    return f;
  }

  StreamMeta meta_;
  SessionState session_;
  EngineConfig config_;

  std::deque<SlicePtr> window_;
  std::deque<CommPtr> comm_window_;
  std::vector<std::int64_t> summary_times_;
  std::vector<Eigen::RowVectorXd> summary_;
  SlicePtr latest_slice_;
  std::int64_t tick_ = 0;

  RepresentativePanel panel_;
  std::map<int, AffMeanDetector> detectors_;
  std::vector<ChangePoint> change_points_;
  std::int64_t ordinal_ = 0;

  ClusterModel cluster_;
  bool cluster_reseed_pending_ = false;
  DrState top_dr_, bottom_dr_;

  std::optional<CausalityReport> report_;
  std::optional<ProgressiveVarFit> var_fit_;
  Index var_s_ = 0;
  bool refit_requested_ = false;

  CommPtr base_comm_;
  std::map<std::int64_t, CommPtr> cp_comm_;
  nlohmann::json comm_section_;

  Freshness cpd_fresh_, cluster_fresh_, layout_fresh_, causality_fresh_, comm_fresh_;
  double last_tick_ms_ = 0.0;
  std::optional<AnalysisFrame> latest_;
};

/// Packages a freshly sealed slice with its communication frame. Call from
/// the store's subscriber, before any later comm record can arrive.
inline SliceEvent make_slice_event(const TensorStore& store, const SlicePtr& slice) {
  return {slice, std::make_shared<const CommGraphFrame>(store.comm_frame(slice->time_index))};
}

/// Single-threaded ingest and analysis over NDJSON lines. The first valid
/// line must be the preamble.
class Pipeline {
 public:
  explicit Pipeline(SessionState session = {}, EngineConfig engine_config = {}, StoreConfig store_config = {})
      : session_(std::move(session)), engine_config_(engine_config), store_config_(store_config) {}

  /// Feeds one line; returns frames produced by slices it sealed.
  std::vector<AnalysisFrame> feed(std::string_view line, double now = TensorStore::steady_now()) {
    const WireRecord rec = parse_line(line);
    if (std::holds_alternative<ParseError>(rec)) {
      ++malformed_;
      return {};
    }
    if (const auto* p = std::get_if<Preamble>(&rec)) {
      if (store_) {
        ++malformed_;  // a second preamble is ignored
        return {};
      }
      start(*p);
      return {};
    }
    if (!store_) {
      ++malformed_;
      return {};
    }
    apply_record(*store_, rec, now);
    return drain();
  }

  std::vector<AnalysisFrame> poll(double now = TensorStore::steady_now()) {
    if (!store_) return {};
    store_->poll(now);
    return drain();
  }

  std::vector<AnalysisFrame> flush() {
    if (!store_) return {};
    store_->flush();
    return drain();
  }

  bool started() const { return store_ != nullptr; }
  const std::optional<Preamble>& preamble() const { return preamble_; }
  TensorStore& store() { return *store_; }
  AnalysisEngine& engine() { return *engine_; }
  std::int64_t malformed() const { return malformed_; }

 private:
  void start(const Preamble& p) {
    preamble_ = p;
    store_ = std::make_unique<TensorStore>(make_store(p, store_config_));
    StreamMeta meta{p.n, p.metrics, store_->hierarchy(), store_config_.window_capacity};
    engine_ = std::make_unique<AnalysisEngine>(meta, session_, engine_config_);
    store_->subscribe([this](const SlicePtr& s) { queue_.push_back(make_slice_event(*store_, s)); });
  }

  std::vector<AnalysisFrame> drain() {
    std::vector<AnalysisFrame> out;
    for (const auto& ev : queue_) out.push_back(engine_->tick(ev));
    queue_.clear();
    return out;
  }

  SessionState session_;
  EngineConfig engine_config_;
  StoreConfig store_config_;
  std::optional<Preamble> preamble_;
  std::unique_ptr<TensorStore> store_;
  std::unique_ptr<AnalysisEngine> engine_;
  std::vector<SliceEvent> queue_;
  std::int64_t malformed_ = 0;
};

}  // namespace perfstream
