#pragma once

// HTTP + WebSocket front end for Gateway. One thread per connection; HTTP
// connections serve a single request, WebSocket sessions stream the event
// feed until the client goes away or the server stops.

#include <poll.h>

#include <atomic>
#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <list>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "irrigation/gateway.hpp"

namespace irrigation::gateway {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

struct ServerOptions {
  std::string bind_address = "0.0.0.0";
  std::uint16_t port = 8080;
  std::filesystem::path static_dir;  // optional dashboard files served at /
};

class GatewayServer {
 public:
  GatewayServer(Gateway& gateway, EventHub& hub, ServerOptions options)
      : gateway_(gateway), hub_(hub), options_(std::move(options)), acceptor_(io_) {
    tcp::endpoint endpoint(net::ip::make_address(options_.bind_address), options_.port);
    acceptor_.open(endpoint.protocol());
    acceptor_.set_option(net::socket_base::reuse_address(true));
    acceptor_.bind(endpoint);
    acceptor_.listen();
  }

  ~GatewayServer() { stop(); }

  std::uint16_t port() const { return acceptor_.local_endpoint().port(); }

  void start() {
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    if (stopping_.exchange(true)) return;
    // Unblock accept() with a throwaway connection.
    try {
      net::io_context io;
      tcp::socket poke(io);
      poke.connect(tcp::endpoint(net::ip::make_address("127.0.0.1"), port()));
    } catch (...) {
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    // Sessions notice the flag within one pop timeout and close politely; a
    // peer that never answers the close handshake has its socket shut down.
    auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
    while (std::chrono::steady_clock::now() < deadline) {
      {
        std::lock_guard lock(mutex_);
        if (active_.empty()) break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    {
      std::lock_guard lock(mutex_);
      for (int fd : active_) ::shutdown(fd, SHUT_RDWR);
    }
    std::list<std::thread> sessions;
    {
      std::lock_guard lock(mutex_);
      sessions.swap(sessions_);
    }
    for (auto& t : sessions) {
      if (t.joinable()) t.join();
    }
    boost::system::error_code ignored;
    acceptor_.close(ignored);
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      tcp::socket socket(io_);
      boost::system::error_code ec;
      acceptor_.accept(socket, ec);
      if (stopping_) break;
      if (ec) continue;
      std::lock_guard lock(mutex_);
      sessions_.emplace_back([this, s = std::move(socket)]() mutable { serve(std::move(s)); });
    }
  }

  void serve(tcp::socket socket) {
    const int fd = socket.native_handle();
    {
      std::lock_guard lock(mutex_);
      active_.insert(fd);
    }
    handle(std::move(socket));
    std::lock_guard lock(mutex_);
    active_.erase(fd);
  }

  void handle(tcp::socket socket) {
    try {
      beast::flat_buffer buffer;
      http::request<http::string_body> req;
      http::read(socket, buffer, req);
      if (websocket::is_upgrade(req) && req.target() == "/ws") {
        stream(socket, std::move(req));
        return;
      }
      http::response<http::string_body> res = respond(req);
      res.keep_alive(false);
      res.prepare_payload();
      http::write(socket, res);
      boost::system::error_code ignored;
      socket.shutdown(tcp::socket::shutdown_send, ignored);
    } catch (const std::exception&) {
      // client vanished mid-request
    }
  }

  http::response<http::string_body> respond(const http::request<http::string_body>& req) {
    std::string target(req.target());
    if (req.method() == http::verb::get && !target.starts_with("/api/") && !options_.static_dir.empty()) {
      if (auto file = static_file(target)) return *file;
    }
    HttpResponse r = gateway_.handle_request(std::string(req.method_string()), target, req.body());
    http::response<http::string_body> res{static_cast<http::status>(r.status), req.version()};
    res.set(http::field::content_type, "application/json");
    res.set(http::field::access_control_allow_origin, "*");
    res.body() = r.body.dump();
    return res;
  }

  std::optional<http::response<http::string_body>> static_file(std::string target) {
    if (target == "/") target = "/index.html";
    if (target.find("..") != std::string::npos) return std::nullopt;
    auto path = options_.static_dir / target.substr(1);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::stringstream content;
    content << in.rdbuf();
    http::response<http::string_body> res{http::status::ok, 11};
    auto ext = path.extension().string();
    const char* type = ext == ".html" ? "text/html" : ext == ".js" ? "text/javascript" : ext == ".css" ? "text/css" : "application/octet-stream";
    res.set(http::field::content_type, type);
    res.body() = content.str();
    return res;
  }

  // Single-threaded session: drain the event queue, then give the client
  // 50 ms to send something (close, ping, or text we ignore). Reading keeps
  // the close handshake working in both directions.
  void stream(tcp::socket& socket, http::request<http::string_body> req) {
    websocket::stream<tcp::socket&> ws(socket);
    ws.accept(req);
    ws.text(true);
    auto queue = hub_.subscribe();
    try {
      // Subscribe before taking the snapshot so nothing falls between them.
      ws.write(net::buffer(gateway_.snapshot().to_json().dump()));
      auto last_write = std::chrono::steady_clock::now();
      while (!stopping_) {
        while (auto event = queue->pop(std::chrono::milliseconds(0))) {
          ws.write(net::buffer(event->to_json().dump()));
          last_write = std::chrono::steady_clock::now();
        }
        pollfd pfd{socket.native_handle(), POLLIN, 0};
        if (::poll(&pfd, 1, 50) > 0) {
          beast::flat_buffer incoming;
          beast::error_code ec;
          ws.read(incoming, ec);
          if (ec) break;  // closed by the client, or the connection died
        }
        if (std::chrono::steady_clock::now() - last_write > std::chrono::seconds(5)) {
          ws.ping({});  // detects a dead peer on idle feeds
          last_write = std::chrono::steady_clock::now();
        }
      }
      if (stopping_) ws.close(websocket::close_code::going_away);
    } catch (const std::exception&) {
    }
    hub_.unsubscribe(queue);
  }

  Gateway& gateway_;
  EventHub& hub_;
  ServerOptions options_;
  net::io_context io_;
  tcp::acceptor acceptor_;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex mutex_;
  std::list<std::thread> sessions_;
  std::set<int> active_;  // session sockets, so stop() can unblock them
};

}  // namespace irrigation::gateway
