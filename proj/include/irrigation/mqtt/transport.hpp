#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>

#include "irrigation/mqtt/broker.hpp"
#include "irrigation/mqtt/codec.hpp"

namespace irrigation::mqtt {

class TransportClosed : public std::runtime_error {
 public:
  TransportClosed() : std::runtime_error("transport closed") {}
};

/// Client side of a byte-stream connection to a broker.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void write(std::span<const std::uint8_t> bytes) = 0;
  /// Next chunk of inbound bytes; empty on timeout. Throws TransportClosed
  /// once the peer is gone and nothing is left to read.
  virtual Bytes read(std::chrono::milliseconds timeout) = 0;
  virtual void close() = 0;
};

/// In-process broker. Every call into the core happens under one mutex, which
/// plays the role of the TCP server's single event-loop thread.
class LoopbackBroker : public std::enable_shared_from_this<LoopbackBroker> {
 public:
  using Clock = BrokerCore::Clock;

  static std::shared_ptr<LoopbackBroker> create() { return std::shared_ptr<LoopbackBroker>(new LoopbackBroker()); }

  std::unique_ptr<Transport> connect();

  void expire(Clock::time_point now) {
    std::lock_guard lock(mutex_);
    core_.expire(now);
  }

  void inject(const Publish& pub) {
    std::lock_guard lock(mutex_);
    core_.inject(pub);
  }

  std::size_t session_count() {
    std::lock_guard lock(mutex_);
    return core_.session_count();
  }

  std::size_t subscription_count() {
    std::lock_guard lock(mutex_);
    return core_.subscriptions().size();
  }

 private:
  LoopbackBroker() = default;
  friend class LoopbackTransport;

  std::mutex mutex_;
  BrokerCore core_;
};

/// Inbox shared between a loopback transport and the broker session that
/// feeds it.
struct LoopbackInbox {
  std::mutex mutex;
  std::condition_variable ready;
  std::deque<Bytes> chunks;
  bool closed = false;

  void push(Bytes bytes) {
    {
      std::lock_guard lock(mutex);
      if (closed) return;
      chunks.push_back(std::move(bytes));
    }
    ready.notify_all();
  }
  void close() {
    {
      std::lock_guard lock(mutex);
      closed = true;
    }
    ready.notify_all();
  }
};

class LoopbackTransport : public Transport {
 public:
  LoopbackTransport(std::shared_ptr<LoopbackBroker> broker) : broker_(std::move(broker)), inbox_(std::make_shared<LoopbackInbox>()) {
    std::lock_guard lock(broker_->mutex_);
    std::weak_ptr<LoopbackInbox> weak = inbox_;
    id_ = broker_->core_.open(
        [weak](Bytes b) {
          if (auto in = weak.lock()) in->push(std::move(b));
        },
        [weak] {
          if (auto in = weak.lock()) in->close();
        },
        LoopbackBroker::Clock::now());
  }

  ~LoopbackTransport() override { close(); }

  void write(std::span<const std::uint8_t> bytes) override {
    {
      std::lock_guard in_lock(inbox_->mutex);
      if (inbox_->closed) throw TransportClosed();
    }
    std::lock_guard lock(broker_->mutex_);
    broker_->core_.receive(id_, bytes, LoopbackBroker::Clock::now());
  }

  Bytes read(std::chrono::milliseconds timeout) override {
    std::unique_lock lock(inbox_->mutex);
    inbox_->ready.wait_for(lock, timeout, [&] { return !inbox_->chunks.empty() || inbox_->closed; });
    if (!inbox_->chunks.empty()) {
      Bytes out = std::move(inbox_->chunks.front());
      inbox_->chunks.pop_front();
      return out;
    }
    if (inbox_->closed) throw TransportClosed();
    return {};
  }

  void close() override {
    bool was_open;
    {
      std::lock_guard in_lock(inbox_->mutex);
      was_open = !inbox_->closed;
      inbox_->closed = true;
    }
    inbox_->ready.notify_all();
    if (was_open) {
      std::lock_guard lock(broker_->mutex_);
      broker_->core_.closed(id_);
    }
  }

 private:
  std::shared_ptr<LoopbackBroker> broker_;
  std::shared_ptr<LoopbackInbox> inbox_;
  ClientRef id_ = 0;
};

inline std::unique_ptr<Transport> LoopbackBroker::connect() {
  return std::make_unique<LoopbackTransport>(shared_from_this());
}

}  // namespace irrigation::mqtt
