#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "irrigation/mqtt/codec.hpp"

namespace irrigation::mqtt {

using ClientRef = std::uint64_t;

/// One subscription table entry. Construction rejects invalid filters, so
/// routing never sees one.
class Subscription {
 public:
  Subscription(ClientRef client, std::string filter) : client_(client), filter_(std::move(filter)) {
    if (!is_valid_filter(filter_)) throw CodecError("invalid topic filter: " + filter_);
  }

  ClientRef client() const { return client_; }
  const std::string& filter() const { return filter_; }
  bool operator==(const Subscription&) const = default;

 private:
  ClientRef client_;
  std::string filter_;
};

struct Delivery {
  ClientRef client;
  Publish publish;
};

/// One delivery per matching subscription entry, in table order. A client
/// holding overlapping filters ("a/#" and "a/b") receives one copy per entry.
inline std::vector<Delivery> broker_route(const Publish& pub, std::span<const Subscription> subs) {
  std::vector<Delivery> out;
  for (const auto& s : subs) {
    if (topic_matches(s.filter(), pub.topic)) out.push_back({s.client(), pub});
  }
  return out;
}

/// Broker state machine shared by the TCP server and the loopback transport.
///
/// Not thread-safe: the owner drives every call from one logical event queue
/// (an asio thread, or a mutex-guarded loopback hub). Each session is wired
/// to its transport through two callbacks: `send` queues outbound bytes and
/// `close` tears the connection down.
class BrokerCore {
 public:
  using Clock = std::chrono::steady_clock;
  using SendFn = std::function<void(Bytes)>;
  using CloseFn = std::function<void()>;

  /// Registers a freshly accepted transport connection.
  ClientRef open(SendFn send, CloseFn close, Clock::time_point now) {
    ClientRef id = next_id_++;
    sessions_.emplace(id, Session{std::move(send), std::move(close), {}, {}, false, 0, now});
    return id;
  }

  /// Feeds raw bytes read from a session. A protocol violation closes the
  /// session.
  void receive(ClientRef id, std::span<const std::uint8_t> bytes, Clock::time_point now) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return;
    it->second.decoder.feed(bytes);
    while (true) {
      std::optional<Packet> packet;
      try {
        auto found = sessions_.find(id);
        if (found == sessions_.end()) return;
        packet = found->second.decoder.next();
      } catch (const CodecError&) {
        drop(id);
        return;
      }
      if (!packet) return;
      if (!handle(id, *packet, now)) return;
    }
  }

  /// Transport reported the connection gone.
  void closed(ClientRef id) { forget(id); }

  /// Drops every connected session silent for more than 1.5x its keep-alive.
  void expire(Clock::time_point now) {
    std::vector<ClientRef> stale;
    for (const auto& [id, s] : sessions_) {
      if (!s.connected || s.keep_alive == 0) continue;
      auto limit = std::chrono::milliseconds(s.keep_alive * 1500);
      if (now - s.last_activity > limit) stale.push_back(id);
    }
    for (auto id : stale) drop(id);
  }

  /// Routes a publish that originates inside the broker process.
  std::size_t inject(const Publish& pub) { return route(pub); }

  std::size_t session_count() const { return sessions_.size(); }
  const std::vector<Subscription>& subscriptions() const { return subscriptions_; }
  std::uint64_t publishes_routed() const { return publishes_routed_; }

 private:
  struct Session {
    SendFn send;
    CloseFn close;
    StreamDecoder decoder;
    std::string client_id;
    bool connected = false;
    std::uint16_t keep_alive = 0;
    Clock::time_point last_activity;
  };

  // Returns false once the session is gone.
  bool handle(ClientRef id, const Packet& packet, Clock::time_point now) {
    Session& s = sessions_.at(id);
    s.last_activity = now;

    if (!s.connected) {
      const auto* connect = std::get_if<Connect>(&packet);
      if (!connect) {
        drop(id);
        return false;
      }
      // A second connection with the same client id takes over.
      if (!connect->client_id.empty()) {
        for (auto& [other, os] : sessions_) {
          if (other != id && os.connected && os.client_id == connect->client_id) {
            drop(other);
            break;
          }
        }
      }
      Session& fresh = sessions_.at(id);
      fresh.connected = true;
      fresh.client_id = connect->client_id;
      fresh.keep_alive = connect->keep_alive;
      fresh.send(encode_packet(ConnAck{0}));
      return true;
    }

    if (std::holds_alternative<Publish>(packet)) {
      route(std::get<Publish>(packet));
      return sessions_.contains(id);
    }
    if (const auto* sub = std::get_if<Subscribe>(&packet)) {
      SubAck ack{sub->packet_id, {}};
      for (const auto& filter : sub->filters) {
        Subscription entry(id, filter);
        if (std::find(subscriptions_.begin(), subscriptions_.end(), entry) == subscriptions_.end()) {
          subscriptions_.push_back(std::move(entry));
        }
        ack.codes.push_back(0x00);  // granted QoS 0
      }
      s.send(encode_packet(ack));
      return true;
    }
    if (std::holds_alternative<PingReq>(packet)) {
      s.send(encode_packet(PingResp{}));
      return true;
    }
    if (std::holds_alternative<Disconnect>(packet)) {
      drop(id);
      return false;
    }
    // CONNECT twice, or a server-to-client packet from a client.
    drop(id);
    return false;
  }

  std::size_t route(const Publish& pub) {
    ++publishes_routed_;
    auto deliveries = broker_route(pub, subscriptions_);
    if (deliveries.empty()) return 0;
    Bytes wire = encode_packet(pub);
    std::size_t sent = 0;
    for (const auto& d : deliveries) {
      auto it = sessions_.find(d.client);
      if (it == sessions_.end()) continue;  // QoS 0: silently dropped
      it->second.send(wire);
      ++sent;
    }
    return sent;
  }

  void drop(ClientRef id) {
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return;
    CloseFn close = std::move(it->second.close);
    forget(id);
    if (close) close();
  }

  void forget(ClientRef id) {
    sessions_.erase(id);
    std::erase_if(subscriptions_, [id](const Subscription& s) { return s.client() == id; });
  }

  std::map<ClientRef, Session> sessions_;
  std::vector<Subscription> subscriptions_;
  ClientRef next_id_ = 1;
  std::uint64_t publishes_routed_ = 0;
};

}  // namespace irrigation::mqtt
