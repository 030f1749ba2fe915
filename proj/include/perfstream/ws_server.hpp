#pragma once

// Streaming server. Three lanes hand off through channels:
//   ingest   (owns the tensor store; NDJSON lines from TCP or a caller)
//   analysis (owns the engine; one slice or control message at a time)
//   io       (owns the WebSocket sessions and the fan-out hub)

#include <atomic>
#include <chrono>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <variant>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "perfstream/analysis_engine.hpp"
#include "perfstream/frame_hub.hpp"

namespace perfstream {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = boost::beast::websocket;
using tcp = boost::asio::ip::tcp;

struct ServerConfig {
  std::string host = "127.0.0.1";
  unsigned short port = 8080;                // 0 picks an ephemeral port
  std::optional<unsigned short> ingest_port;  // TCP NDJSON ingest; 0 is ephemeral
  SessionState session;
  EngineConfig engine;
  StoreConfig store;
  double poll_interval_ms = 50.0;      // straggler timeout checks
  std::size_t max_client_queue = 256;  // pending messages before a slow client is dropped
  std::function<void(const std::string&)> log = [](const std::string& m) { std::clog << m << '\n'; };
};

struct ServerStats {
  std::atomic<std::int64_t> lines{0};
  std::atomic<std::int64_t> malformed{0};
  std::atomic<std::int64_t> frames{0};
  std::atomic<std::int64_t> broadcasts{0};
  std::atomic<std::int64_t> serialization_failures{0};
  std::atomic<double> max_tick_ms{0.0};     // analysis compute per tick
  std::atomic<double> max_latency_ms{0.0};  // slice sealed -> frame handed to io
  std::atomic<std::int64_t> last_t{-1};
};

namespace detail {

inline void atomic_max(std::atomic<double>& a, double v) {
  double cur = a.load();
  while (v > cur && !a.compare_exchange_weak(cur, v)) {
  }
}

inline std::string dump_safe(const nlohmann::json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace detail

class Server {
 public:
  explicit Server(ServerConfig config)
      : config_(std::move(config)), ws_acceptor_(ioc_), ingest_acceptor_(ioc_) {}

  ~Server() { stop(); }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the listeners and starts the lanes. Throws on bind failure.
  void start() {
    bind(ws_acceptor_, config_.port);
    port_ = ws_acceptor_.local_endpoint().port();
    if (config_.ingest_port) {
      bind(ingest_acceptor_, *config_.ingest_port);
      ingest_port_ = ingest_acceptor_.local_endpoint().port();
      accept_ingest();
    }
    accept_ws();
    work_.emplace(net::make_work_guard(ioc_));
    io_thread_ = std::thread([this] { ioc_.run(); });
    ingest_thread_ = std::thread([this] { ingest_lane(); });
    analysis_thread_ = std::thread([this] { analysis_lane(); });
    started_ = true;
  }

  unsigned short port() const { return port_; }
  unsigned short ingest_port() const { return ingest_port_; }
  const ServerStats& stats() const { return stats_; }

  /// Ingest entry point for non-TCP sources (stdin, tests).
  void push_line(std::string line) { lines_.push(IngestItem{std::move(line), false}); }
  /// Seals every pending slice; call when the source is exhausted.
  void end_of_stream() { lines_.push(IngestItem{{}, true}); }

  /// True once every queued line and slice has been processed.
  bool idle() const {
    return lines_.size() == 0 && !ingest_busy_.load() && analysis_in_.size() == 0 && !busy_.load();
  }

  void stop() {
    if (!started_ || stopped_.exchange(true)) return;
    lines_.close();
    if (ingest_thread_.joinable()) ingest_thread_.join();
    analysis_in_.close();
    if (analysis_thread_.joinable()) analysis_thread_.join();
    net::post(ioc_, [this] {
      beast::error_code ec;
      ws_acceptor_.close(ec);
      ingest_acceptor_.close(ec);
      auto sessions = std::move(sessions_);
      sessions_.clear();
      for (auto& [id, s] : sessions)
        if (auto p = s.lock()) p->close();
    });
    work_.reset();
    // Sessions get a moment to close; then the loop is stopped.
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    ioc_.stop();
    if (io_thread_.joinable()) io_thread_.join();
  }

 private:
  struct IngestItem {
    std::string line;
    bool eof = false;
  };
  struct StartMsg {
    StreamMeta meta;
  };
  struct SliceMsg {
    SliceEvent event;
    double sealed_at = 0.0;
  };
  struct ConnectMsg {
    ClientId id;
  };
  struct ControlMsg {
    ClientId id;
    std::string text;
  };
  using AnalysisInput = std::variant<StartMsg, SliceMsg, ConnectMsg, ControlMsg>;

  // ---- WebSocket session (io lane)

  class WsSession : public std::enable_shared_from_this<WsSession> {
   public:
    WsSession(tcp::socket socket, Server& server) : ws_(std::move(socket)), server_(server) {}

    void run() {
      ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->on_open();
      });
    }

    bool send(const std::string& text) {
      if (closed_) return false;
      if (queue_.size() >= server_.config_.max_client_queue) return false;
      queue_.push_back(std::make_shared<const std::string>(text));
      if (!writing_) write_next();
      return true;
    }

    void close() {
      if (closed_) return;
      closed_ = true;
      server_.hub_.disconnect(id_);
      server_.sessions_.erase(id_);
      beast::error_code ec;
      beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
      beast::get_lowest_layer(ws_).socket().close(ec);
    }

   private:
    void on_open() {
      std::weak_ptr<WsSession> weak = shared_from_this();
      id_ = server_.hub_.connect([weak](const std::string& text) {
        auto self = weak.lock();
        return self && self->send(text);
      });
      server_.sessions_[id_] = weak;
      server_.analysis_in_.push(ConnectMsg{id_});
      read_next();
    }

    void read_next() {
      ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->close();
          return;
        }
        std::string text = beast::buffers_to_string(self->buffer_.data());
        self->buffer_.consume(self->buffer_.size());
        self->server_.analysis_in_.push(ControlMsg{self->id_, std::move(text)});
        self->read_next();
      });
    }

    void write_next() {
      if (queue_.empty() || closed_) {
        writing_ = false;
        return;
      }
      writing_ = true;
      auto msg = queue_.front();
      ws_.text(true);
      ws_.async_write(net::buffer(*msg), [self = shared_from_this(), msg](beast::error_code ec, std::size_t) {
        if (ec) {
          self->close();
          return;
        }
        self->queue_.pop_front();
        self->write_next();
      });
    }

    websocket::stream<beast::tcp_stream> ws_;
    Server& server_;
    beast::flat_buffer buffer_;
    std::deque<std::shared_ptr<const std::string>> queue_;
    ClientId id_ = 0;
    bool writing_ = false;
    bool closed_ = false;
  };

  // ---- TCP ingest session (io lane)

  class IngestSession : public std::enable_shared_from_this<IngestSession> {
   public:
    IngestSession(tcp::socket socket, Server& server) : socket_(std::move(socket)), server_(server) {}
    void run() { read_next(); }

   private:
    void read_next() {
      net::async_read_until(socket_, buffer_, '\n', [self = shared_from_this()](beast::error_code ec, std::size_t n) {
        if (ec) {
          if (self->buffer_.size() > 0) {  // final unterminated line
            std::string rest(net::buffers_begin(self->buffer_.data()), net::buffers_end(self->buffer_.data()));
            self->server_.push_line(std::move(rest));
          }
          return;
        }
        std::string line(net::buffers_begin(self->buffer_.data()),
                         net::buffers_begin(self->buffer_.data()) + static_cast<std::ptrdiff_t>(n) - 1);
        self->buffer_.consume(n);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) self->server_.push_line(std::move(line));
        self->read_next();
      });
    }

    tcp::socket socket_;
    Server& server_;
    net::streambuf buffer_;
  };

  void bind(tcp::acceptor& acc, unsigned short port) {
    const tcp::endpoint ep(net::ip::make_address(config_.host), port);
    acc.open(ep.protocol());
    acc.set_option(net::socket_base::reuse_address(true));
    acc.bind(ep);
    acc.listen();
  }

  void accept_ws() {
    ws_acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<WsSession>(std::move(socket), *this)->run();
      accept_ws();
    });
  }

  void accept_ingest() {
    ingest_acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<IngestSession>(std::move(socket), *this)->run();
      accept_ingest();
    });
  }

  void log(const std::string& m) const {
    if (config_.log) config_.log(m);
  }

  // ---- ingest lane

  void ingest_lane() {
    std::unique_ptr<TensorStore> store;
    const auto poll_every = std::chrono::duration<double, std::milli>(config_.poll_interval_ms);
    for (;;) {
      ingest_busy_ = false;
      std::optional<IngestItem> item = lines_.pop_for(poll_every);
      ingest_busy_ = true;
      if (!item) {
        if (lines_.closed()) break;
        if (store) store->poll();
        continue;
      }
      if (item->eof) {
        if (store) store->flush();
        continue;
      }
      ++stats_.lines;
      const WireRecord rec = parse_line(item->line);
      if (const auto* err = std::get_if<ParseError>(&rec)) {
        ++stats_.malformed;
        log("ingest: skipped malformed line: " + err->message);
        continue;
      }
      if (const auto* p = std::get_if<Preamble>(&rec)) {
        if (store) {
          ++stats_.malformed;
          log("ingest: ignored repeated preamble");
          continue;
        }
        try {
          store = std::make_unique<TensorStore>(make_store(*p, config_.store));
        } catch (const std::exception& e) {
          ++stats_.malformed;
          log(std::string("ingest: rejected preamble: ") + e.what());
          continue;
        }
        analysis_in_.push(StartMsg{{p->n, p->metrics, store->hierarchy(), config_.store.window_capacity}});
        TensorStore* sp = store.get();
        store->subscribe([this, sp](const SlicePtr& s) {
          analysis_in_.push(SliceMsg{make_slice_event(*sp, s), TensorStore::steady_now()});
        });
        log("ingest: stream started with " + std::to_string(p->n) + " entities and " +
            std::to_string(p->metrics.size()) + " metrics");
        continue;
      }
      if (!store) {
        ++stats_.malformed;
        continue;
      }
      apply_record(*store, rec);
      store->poll();
    }
  }

  // ---- analysis lane

  void post_broadcast(std::string text) {
    net::post(ioc_, [this, text = std::move(text)] {
      hub_.broadcast(text);
      ++stats_.broadcasts;
    });
  }

  void post_unicast(ClientId id, std::string text, bool snapshot) {
    net::post(ioc_, [this, id, snapshot, text = std::move(text)] {
      if (snapshot) {
        hub_.deliver_snapshot(id, text);
      } else {
        hub_.unicast(id, text);
      }
    });
  }

  void broadcast_frame(const AnalysisFrame& f) {
    try {
      post_broadcast(detail::dump_safe(envelope("frame", f.body)));
    } catch (const std::exception& e) {
      ++stats_.serialization_failures;
      log(std::string("serve: frame dropped: ") + e.what());
    }
  }

  void analysis_lane() {
    std::unique_ptr<AnalysisEngine> engine;
    while (auto msg = analysis_in_.pop()) {
      busy_ = true;
      std::visit(
          [&](auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, StartMsg>) {
              try {
                engine = std::make_unique<AnalysisEngine>(m.meta, config_.session, config_.engine);
              } catch (const std::exception& e) {
                log(std::string("analysis: cannot start: ") + e.what());
              }
            } else if constexpr (std::is_same_v<M, SliceMsg>) {
              if (!engine) return;
              const auto t0 = SteadyClock::now();
              AnalysisFrame f;
              try {
                f = engine->tick(m.event);
              } catch (const std::exception& e) {
                log(std::string("analysis: slice skipped: ") + e.what());
                return;
              }
              ++stats_.frames;
              stats_.last_t = f.t;
              detail::atomic_max(stats_.max_tick_ms, Millis(SteadyClock::now() - t0).count());
              if (!engine->session().paused) broadcast_frame(f);
              detail::atomic_max(stats_.max_latency_ms, (TensorStore::steady_now() - m.sealed_at) * 1e3);
            } else if constexpr (std::is_same_v<M, ConnectMsg>) {
              nlohmann::json snap = engine ? engine->snapshot()
                                           : envelope("snapshot", {{"session", session_to_json(config_.session)},
                                                                   {"frame", nullptr}});
              post_unicast(m.id, detail::dump_safe(snap), true);
            } else if constexpr (std::is_same_v<M, ControlMsg>) {
              nlohmann::json err;
              const auto parsed = parse_control(m.text, &err);
              if (!parsed) {
                post_unicast(m.id, err.dump(), false);
                return;
              }
              if (!engine) {
                post_unicast(m.id, envelope("error", {{"message", "no stream has started yet"}}).dump(), false);
                return;
              }
              ControlResult r = engine->handle_control(*parsed);
              post_unicast(m.id, detail::dump_safe(r.reply), false);
              if (r.broadcast) broadcast_frame(*r.broadcast);
            }
          },
          *msg);
      busy_ = false;
    }
  }

  ServerConfig config_;
  net::io_context ioc_;
  std::optional<net::executor_work_guard<net::io_context::executor_type>> work_;
  tcp::acceptor ws_acceptor_;
  tcp::acceptor ingest_acceptor_;
  unsigned short port_ = 0;
  unsigned short ingest_port_ = 0;

  FrameHub hub_;                                         // io lane only
  std::map<ClientId, std::weak_ptr<WsSession>> sessions_;  // io lane only

  Channel<IngestItem> lines_;
  Channel<AnalysisInput> analysis_in_;
  std::atomic<bool> busy_{false};
  std::atomic<bool> ingest_busy_{false};
  ServerStats stats_;

  std::thread io_thread_, ingest_thread_, analysis_thread_;
  bool started_ = false;
  std::atomic<bool> stopped_{false};
};

}  // namespace perfstream
