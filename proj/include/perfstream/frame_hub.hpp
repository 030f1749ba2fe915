#pragma once

// Transport-independent client fan-out. A client registers a send function;
// it receives nothing until its snapshot is delivered, then every broadcast.
// A failing send removes only that client.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace perfstream {

using ClientId = std::uint64_t;

class FrameHub {
 public:
  using Send = std::function<bool(const std::string&)>;

  ClientId connect(Send send) {
    const ClientId id = next_id_++;
    clients_[id] = Client{std::move(send), false};
    return id;
  }

  void disconnect(ClientId id) { clients_.erase(id); }

  /// Delivers the client's snapshot and makes it eligible for broadcasts.
  bool deliver_snapshot(ClientId id, const std::string& text) {
    auto it = clients_.find(id);
    if (it == clients_.end()) return false;
    it->second.ready = true;
    return send_or_drop(it, text);
  }

  bool unicast(ClientId id, const std::string& text) {
    auto it = clients_.find(id);
    if (it == clients_.end()) return false;
    return send_or_drop(it, text);
  }

  /// Sends one serialized message to every ready client. Returns the number
  /// of successful deliveries.
  std::size_t broadcast(const std::string& text) {
    std::size_t ok = 0;
    for (auto it = clients_.begin(); it != clients_.end();) {
      if (!it->second.ready) {
        ++it;
        continue;
      }
      auto next = std::next(it);
      if (send_or_drop(it, text)) ++ok;
      it = next;
    }
    ++broadcasts_;
    return ok;
  }

  std::size_t size() const { return clients_.size(); }
  bool contains(ClientId id) const { return clients_.count(id) > 0; }
  std::int64_t dropped() const { return dropped_; }
  std::int64_t broadcasts() const { return broadcasts_; }

 private:
  struct Client {
    Send send;
    bool ready = false;
  };

  bool send_or_drop(std::map<ClientId, Client>::iterator it, const std::string& text) {
    bool ok = false;
    try {
      ok = it->second.send(text);
    } catch (...) {
      ok = false;
    }
    if (!ok) {
      clients_.erase(it);
      ++dropped_;
    }
    return ok;
  }

  std::map<ClientId, Client> clients_;
  ClientId next_id_ = 1;
  std::int64_t dropped_ = 0;
  std::int64_t broadcasts_ = 0;
};

/// Parses a client text message. Malformed JSON yields the error envelope to
/// send back instead.
inline std::optional<nlohmann::json> parse_control(const std::string& text, nlohmann::json* error_reply) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    if (error_reply) *error_reply = {{"type", "error"}, {"payload", {{"message", "malformed JSON message"}}}};
    return std::nullopt;
  }
  return j;
}

/// Closable multi-producer queue used between lanes.
template <typename T>
class Channel {
 public:
  bool push(T value) {
    {
      std::lock_guard lock(mutex_);
      if (closed_) return false;
      queue_.push_back(std::move(value));
    }
    cv_.notify_one();
    return true;
  }

  /// Blocks until an item arrives or the channel is closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return closed_ || !queue_.empty(); });
    if (queue_.empty()) return std::nullopt;
    T v = std::move(queue_.front());
    queue_.pop_front();
    return v;
  }

  /// Waits at most `timeout`; nullopt on timeout or closed-and-drained.
  template <typename Duration>
  std::optional<T> pop_for(Duration timeout) {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || !queue_.empty(); });
    if (queue_.empty()) return std::nullopt;
    T v = std::move(queue_.front());
    queue_.pop_front();
    return v;
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mutex_);
    return closed_;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return queue_.size();
  }

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<T> queue_;
  bool closed_ = false;
};

}  // namespace perfstream
