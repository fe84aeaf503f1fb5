#pragma once

// TCP front end for BrokerCore plus a client-side TCP transport.
//
// The server runs one asio io_context on one thread: accepts, reads, writes,
// keep-alive sweeps and routing all execute on it, so the subscription table
// has exactly one writer.

#include <poll.h>

#include <array>
#include <atomic>
#include <boost/asio.hpp>
#include <chrono>
#include <deque>
#include <future>
#include <memory>
#include <string>
#include <thread>

#include "irrigation/mqtt/broker.hpp"
#include "irrigation/mqtt/transport.hpp"

namespace irrigation::mqtt {

namespace asio = boost::asio;
using asio::ip::tcp;

class TcpBroker {
 public:
  /// Binds immediately; port 0 picks an ephemeral port (see port()).
  explicit TcpBroker(std::uint16_t port, const std::string& bind_address = "0.0.0.0")
      : acceptor_(io_, tcp::endpoint(asio::ip::make_address(bind_address), port)), sweep_(io_) {}

  ~TcpBroker() { stop(); }

  std::uint16_t port() const { return acceptor_.local_endpoint().port(); }

  /// Runs the event loop on a background thread.
  void start() {
    accept();
    schedule_sweep();
    thread_ = std::thread([this] { io_.run(); });
  }

  /// Runs the event loop on the calling thread until stop().
  void run() {
    accept();
    schedule_sweep();
    io_.run();
  }

  void stop() {
    io_.stop();
    if (thread_.joinable()) thread_.join();
  }

  /// Thread-safe snapshot of the session count.
  std::size_t session_count() {
    std::promise<std::size_t> result;
    asio::post(io_, [&] { result.set_value(core_.session_count()); });
    return result.get_future().get();
  }

 private:
  class Session : public std::enable_shared_from_this<Session> {
   public:
    Session(TcpBroker& owner, tcp::socket socket) : owner_(owner), socket_(std::move(socket)) {}

    void begin() {
      std::weak_ptr<Session> weak = shared_from_this();
      id_ = owner_.core_.open(
          [weak](Bytes b) {
            if (auto s = weak.lock()) s->enqueue(std::move(b));
          },
          [weak] {
            if (auto s = weak.lock()) s->shutdown();
          },
          BrokerCore::Clock::now());
      read();
    }

   private:
    void read() {
      auto self = shared_from_this();
      socket_.async_read_some(asio::buffer(buffer_), [self](boost::system::error_code ec, std::size_t n) {
        if (ec) {
          self->owner_.core_.closed(self->id_);
          self->closing_ = true;
          return;
        }
        self->owner_.core_.receive(self->id_, std::span<const std::uint8_t>(self->buffer_.data(), n),
                                   BrokerCore::Clock::now());
        if (!self->closing_) self->read();
      });
    }

    void enqueue(Bytes bytes) {
      if (closing_) return;
      outbox_.push_back(std::move(bytes));
      if (outbox_.size() == 1) write();
    }

    void write() {
      auto self = shared_from_this();
      asio::async_write(socket_, asio::buffer(outbox_.front()), [self](boost::system::error_code ec, std::size_t) {
        if (ec) return;
        self->outbox_.pop_front();
        if (!self->outbox_.empty()) {
          self->write();
        } else if (self->closing_) {
          self->close_socket();
        }
      });
    }

    // Broker-initiated close: flush what is queued, then close.
    void shutdown() {
      closing_ = true;
      if (outbox_.empty()) close_socket();
    }

    void close_socket() {
      boost::system::error_code ignored;
      socket_.shutdown(tcp::socket::shutdown_both, ignored);
      socket_.close(ignored);
    }

    TcpBroker& owner_;
    tcp::socket socket_;
    ClientRef id_ = 0;
    std::array<std::uint8_t, 4096> buffer_{};
    std::deque<Bytes> outbox_;
    bool closing_ = false;
  };

  void accept() {
    acceptor_.async_accept([this](boost::system::error_code ec, tcp::socket socket) {
      if (!ec) {
        socket.set_option(tcp::no_delay(true));
        std::make_shared<Session>(*this, std::move(socket))->begin();
      }
      if (acceptor_.is_open()) accept();
    });
  }

  void schedule_sweep() {
    sweep_.expires_after(std::chrono::milliseconds(250));
    sweep_.async_wait([this](boost::system::error_code ec) {
      if (ec) return;
      core_.expire(BrokerCore::Clock::now());
      schedule_sweep();
    });
  }

  asio::io_context io_;
  tcp::acceptor acceptor_;
  asio::steady_timer sweep_;
  BrokerCore core_;
  std::thread thread_;
};

/// Blocking client transport over a TCP socket.
class TcpTransport : public Transport {
 public:
  TcpTransport(const std::string& host, std::uint16_t port) : socket_(io_) {
    tcp::resolver resolver(io_);
    asio::connect(socket_, resolver.resolve(host, std::to_string(port)));
    socket_.set_option(tcp::no_delay(true));
  }

  ~TcpTransport() override { close(); }

  void write(std::span<const std::uint8_t> bytes) override {
    if (closed_) throw TransportClosed();
    boost::system::error_code ec;
    asio::write(socket_, asio::buffer(bytes.data(), bytes.size()), ec);
    if (ec) throw TransportClosed();
  }

  Bytes read(std::chrono::milliseconds timeout) override {
    if (closed_) throw TransportClosed();
    pollfd pfd{socket_.native_handle(), POLLIN, 0};
    int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (ready <= 0) return {};
    std::array<std::uint8_t, 4096> buf{};
    boost::system::error_code ec;
    std::size_t n = socket_.read_some(asio::buffer(buf), ec);
    if (ec || n == 0) throw TransportClosed();
    return Bytes(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(n));
  }

  void close() override {
    if (closed_.exchange(true)) return;
    boost::system::error_code ignored;
    socket_.shutdown(tcp::socket::shutdown_both, ignored);
    socket_.close(ignored);
  }

 private:
  asio::io_context io_;
  tcp::socket socket_;
  std::atomic<bool> closed_{false};
};

/// Parses "host:port"; a bare host uses 1883.
inline std::pair<std::string, std::uint16_t> parse_broker_address(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos) return {address, 1883};
  return {address.substr(0, colon), static_cast<std::uint16_t>(std::stoi(address.substr(colon + 1)))};
}

}  // namespace irrigation::mqtt
