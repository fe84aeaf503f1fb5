#pragma once

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "irrigation/mqtt/codec.hpp"
#include "irrigation/mqtt/transport.hpp"

namespace irrigation::mqtt {

/// Blocking MQTT client over any Transport.
///
/// connect() and subscribe() are synchronous handshakes and must happen
/// before start(). After start() a reader thread dispatches publishes to the
/// handler and answers keep-alive; publish() may be called from any thread.
class Client {
 public:
  using Handler = std::function<void(const Publish&)>;
  using Clock = std::chrono::steady_clock;

  Client(std::unique_ptr<Transport> transport, std::string client_id, std::uint16_t keep_alive = 30)
      : transport_(std::move(transport)), client_id_(std::move(client_id)), keep_alive_(keep_alive) {}

  ~Client() { stop(); }

  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  void connect(std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    send(Connect{client_id_, keep_alive_});
    auto packet = await([](const Packet& p) { return std::holds_alternative<ConnAck>(p); }, timeout);
    if (!packet) throw std::runtime_error("broker did not answer CONNECT");
    if (std::get<ConnAck>(*packet).return_code != 0) throw std::runtime_error("broker refused connection");
    connected_ = true;
  }

  void subscribe(const std::vector<std::string>& filters, std::chrono::milliseconds timeout = std::chrono::seconds(5)) {
    std::uint16_t id = next_packet_id_++;
    send(Subscribe{id, filters});
    auto packet = await(
        [id](const Packet& p) {
          const auto* ack = std::get_if<SubAck>(&p);
          return ack && ack->packet_id == id;
        },
        timeout);
    if (!packet) throw std::runtime_error("broker did not answer SUBSCRIBE");
  }

  void publish(const std::string& topic, const std::string& payload) { send(Publish{topic, payload}); }

  /// Reads for up to `timeout`, returning the next publish (buffered ones
  /// first). Sends PINGREQ when the connection has been idle for half the
  /// keep-alive.
  std::optional<Publish> poll(std::chrono::milliseconds timeout) {
    if (!pending_.empty()) {
      Publish p = std::move(pending_.front());
      pending_.pop_front();
      return p;
    }
    auto deadline = Clock::now() + timeout;
    while (true) {
      if (auto p = decoder_.next()) {
        if (auto* pub = std::get_if<Publish>(&*p)) return std::move(*pub);
        continue;  // PINGRESP and stray acks
      }
      ping_if_idle();
      auto now = Clock::now();
      if (now >= deadline) return std::nullopt;
      auto wait = std::min<Clock::duration>(deadline - now, std::chrono::milliseconds(200));
      Bytes chunk = transport_->read(std::chrono::duration_cast<std::chrono::milliseconds>(wait));
      decoder_.feed(chunk);
    }
  }

  /// Spawns the reader thread. `on_closed` runs if the connection drops.
  void start(Handler handler, std::function<void()> on_closed = {}) {
    running_ = true;
    reader_ = std::thread([this, handler = std::move(handler), on_closed = std::move(on_closed)] {
      try {
        while (running_) {
          if (auto p = poll(std::chrono::milliseconds(100))) handler(*p);
        }
      } catch (const TransportClosed&) {
        connected_ = false;
        if (on_closed && running_) on_closed();
      } catch (const CodecError&) {
        connected_ = false;
        if (on_closed && running_) on_closed();
      }
    });
  }

  void stop() {
    bool was_running = running_.exchange(false);
    if (connected_) {
      try {
        send(Disconnect{});
      } catch (...) {
      }
      connected_ = false;
    }
    if (was_running && reader_.joinable()) reader_.join();
    transport_->close();
  }

  bool connected() const { return connected_; }

 private:
  void send(const Packet& p) {
    Bytes wire = encode_packet(p);
    std::lock_guard lock(write_mutex_);
    transport_->write(wire);
    last_send_ = Clock::now();
  }

  void ping_if_idle() {
    if (keep_alive_ == 0) return;
    Clock::time_point last;
    {
      std::lock_guard lock(write_mutex_);
      last = last_send_;
    }
    if (Clock::now() - last > std::chrono::milliseconds(keep_alive_ * 500)) send(PingReq{});
  }

  template <typename Pred>
  std::optional<Packet> await(Pred pred, std::chrono::milliseconds timeout) {
    auto deadline = Clock::now() + timeout;
    while (Clock::now() < deadline) {
      while (auto p = decoder_.next()) {
        if (pred(*p)) return p;
        if (auto* pub = std::get_if<Publish>(&*p)) pending_.push_back(std::move(*pub));
      }
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      decoder_.feed(transport_->read(std::max(left, std::chrono::milliseconds(1))));
    }
    return std::nullopt;
  }

  std::unique_ptr<Transport> transport_;
  std::string client_id_;
  std::uint16_t keep_alive_;
  std::uint16_t next_packet_id_ = 1;
  StreamDecoder decoder_;
  std::deque<Publish> pending_;
  std::mutex write_mutex_;
  Clock::time_point last_send_ = Clock::now();
  std::atomic<bool> running_{false};
  std::atomic<bool> connected_{false};
  std::thread reader_;
};

}  // namespace irrigation::mqtt
