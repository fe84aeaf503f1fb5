#pragma once

// Operator API: HTTP request handling and the live event feed, independent
// of any socket code (see gateway_server.hpp for the network front end).
//
// HTTP (JSON bodies, schema version 1):
//   GET  /api/status                 -> {"mode", "pump", "last_decision"}
//   GET  /api/telemetry?from=&to=    -> {"readings": [SensorReading...]}
//   GET  /api/decisions?from=&to=    -> {"decisions": [DecisionRecord...]}
//   POST /api/mode     {"mode": "auto"|"manual"}  -> status
//   POST /api/command  {"value": 0|1}              -> status
// Errors: 400 malformed body, 404 unknown path, 409 rejected, 503 controller
// unreachable; error bodies are {"error": "..."}.
//
// WebSocket /ws pushes ApiEvent documents {"kind", "timestamp", "payload"}.
// kind: snapshot (always first), reading, decision, mode, pump, gap.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "irrigation/controller.hpp"
#include "irrigation/mqtt/client.hpp"
#include "irrigation/store.hpp"

namespace irrigation::gateway {

inline constexpr int kApiVersion = 1;
inline constexpr std::size_t kDefaultQueueDepth = 1024;

class ControllerUnavailable : public std::runtime_error {
 public:
  ControllerUnavailable() : std::runtime_error("controller unreachable") {}
};

inline TimestampMs now_ms() { return control::Controller::system_clock_ms(); }

struct ApiEvent {
  std::string kind;
  TimestampMs timestamp = 0;
  nlohmann::json payload;

  nlohmann::json to_json() const { return {{"kind", kind}, {"timestamp", timestamp}, {"payload", payload}}; }
  static ApiEvent from_json(const nlohmann::json& j) {
    return {j.at("kind").get<std::string>(), j.at("timestamp").get<TimestampMs>(), j.at("payload")};
  }
};

// ---------------------------------------------------------------------------
// Event fan-out

/// Bounded per-client queue. When full the oldest event is dropped and the
/// next pop yields a "gap" marker carrying the number of dropped events.
class EventQueue {
 public:
  explicit EventQueue(std::size_t depth) : depth_(depth) {}

  void push(ApiEvent e) {
    {
      std::lock_guard lock(mutex_);
      if (closed_) return;
      if (events_.size() >= depth_) {
        events_.pop_front();
        ++dropped_;
      }
      events_.push_back(std::move(e));
    }
    ready_.notify_one();
  }

  /// Next event, or nullopt after `timeout` / once closed.
  std::optional<ApiEvent> pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    ready_.wait_for(lock, timeout, [&] { return closed_ || !events_.empty() || dropped_ > 0; });
    if (dropped_ > 0) {
      ApiEvent gap{"gap", now_ms(), {{"dropped", dropped_}}};
      dropped_ = 0;
      return gap;
    }
    if (events_.empty()) return std::nullopt;
    ApiEvent e = std::move(events_.front());
    events_.pop_front();
    return e;
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    ready_.notify_all();
  }

  std::size_t size() {
    std::lock_guard lock(mutex_);
    return events_.size();
  }

 private:
  std::size_t depth_;
  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<ApiEvent> events_;
  std::uint64_t dropped_ = 0;
  bool closed_ = false;
};

class EventHub {
 public:
  explicit EventHub(std::size_t depth = kDefaultQueueDepth) : depth_(depth) {}

  std::shared_ptr<EventQueue> subscribe() {
    auto q = std::make_shared<EventQueue>(depth_);
    std::lock_guard lock(mutex_);
    queues_.insert(q);
    return q;
  }

  void unsubscribe(const std::shared_ptr<EventQueue>& q) {
    q->close();
    std::lock_guard lock(mutex_);
    queues_.erase(q);
  }

  void publish(const ApiEvent& e) {
    std::lock_guard lock(mutex_);
    for (const auto& q : queues_) q->push(e);
  }

  std::size_t subscriber_count() {
    std::lock_guard lock(mutex_);
    return queues_.size();
  }

 private:
  std::size_t depth_;
  std::mutex mutex_;
  std::set<std::shared_ptr<EventQueue>> queues_;
};

// ---------------------------------------------------------------------------
// Controller access

/// Throws ControllerUnavailable when the controller cannot be reached and
/// control::CommandRejected when it refuses a request.
class ControlLink {
 public:
  virtual ~ControlLink() = default;
  virtual nlohmann::json status() = 0;
  virtual nlohmann::json set_mode(control::Mode mode) = 0;
  virtual nlohmann::json command(int value) = 0;
};

/// Same-process controller.
class LocalControlLink : public ControlLink {
 public:
  explicit LocalControlLink(control::ControllerService& service) : service_(service) {}

  nlohmann::json status() override { return guard([&] { return service_.status(); }); }
  nlohmann::json set_mode(control::Mode mode) override {
    return guard([&] {
      service_.call([mode](control::Controller& c) { return c.set_mode(mode).has_value(); });
      return service_.status();
    });
  }
  nlohmann::json command(int value) override {
    return guard([&] {
      service_.call([value](control::Controller& c) { return c.manual_command(value).value; });
      return service_.status();
    });
  }

 private:
  template <typename Fn>
  nlohmann::json guard(Fn fn) {
    try {
      return fn();
    } catch (const control::CommandRejected&) {
      throw;
    } catch (const std::runtime_error&) {
      throw ControllerUnavailable();
    }
  }
  control::ControllerService& service_;
};

/// Controller in another process, reached through control/request and
/// control/response on the bus. Feed every control/response publish to
/// on_response().
class BusControlLink : public ControlLink {
 public:
  using Sender = std::function<void(const std::string& topic, const std::string& payload)>;

  explicit BusControlLink(Sender send, std::chrono::milliseconds timeout = std::chrono::seconds(2))
      : send_(std::move(send)), timeout_(timeout) {}

  nlohmann::json status() override { return request({{"op", "status"}}); }
  nlohmann::json set_mode(control::Mode mode) override {
    return request({{"op", "set_mode"}, {"mode", control::to_string(mode)}});
  }
  nlohmann::json command(int value) override { return request({{"op", "command"}, {"value", value}}); }

  void on_response(const std::string& payload) {
    auto j = nlohmann::json::parse(payload, nullptr, false);
    if (j.is_discarded() || !j.contains("id") || !j["id"].is_number_unsigned()) return;
    std::lock_guard lock(mutex_);
    auto it = pending_.find(j["id"].get<std::uint64_t>());
    if (it == pending_.end()) return;
    it->second.set_value(std::move(j));
    pending_.erase(it);
  }

 private:
  nlohmann::json request(nlohmann::json body) {
    std::future<nlohmann::json> reply;
    std::uint64_t id;
    {
      std::lock_guard lock(mutex_);
      id = next_id_++;
      reply = pending_[id].get_future();
    }
    body["id"] = id;
    try {
      send_(control::kRequestTopic, body.dump());
    } catch (const std::exception&) {
      forget(id);
      throw ControllerUnavailable();
    }
    if (reply.wait_for(timeout_) != std::future_status::ready) {
      forget(id);
      throw ControllerUnavailable();
    }
    nlohmann::json response = reply.get();
    if (!response.value("ok", false)) {
      std::string error = response.value("error", "request failed");
      if (response.value("rejected", false)) throw control::CommandRejected(error);
      throw ControllerUnavailable();
    }
    return response.at("status");
  }

  void forget(std::uint64_t id) {
    std::lock_guard lock(mutex_);
    pending_.erase(id);
  }

  Sender send_;
  std::chrono::milliseconds timeout_;
  std::mutex mutex_;
  std::map<std::uint64_t, std::promise<nlohmann::json>> pending_;
  std::uint64_t next_id_ = 1;
};

// ---------------------------------------------------------------------------
// Request handling

struct HttpResponse {
  int status = 200;
  nlohmann::json body;
};

namespace detail {

inline HttpResponse error(int status, const std::string& message) { return {status, {{"error", message}}}; }

inline std::map<std::string, std::string> parse_query(std::string_view query) {
  std::map<std::string, std::string> out;
  while (!query.empty()) {
    auto amp = query.find('&');
    auto pair = query.substr(0, amp);
    auto eq = pair.find('=');
    if (eq == std::string_view::npos) out[std::string(pair)] = "";
    else out[std::string(pair.substr(0, eq))] = std::string(pair.substr(eq + 1));
    if (amp == std::string_view::npos) break;
    query.remove_prefix(amp + 1);
  }
  return out;
}

inline std::optional<TimestampMs> parse_ms(const std::map<std::string, std::string>& q, const std::string& key,
                                           TimestampMs fallback) {
  auto it = q.find(key);
  if (it == q.end() || it->second.empty()) return fallback;
  TimestampMs value = 0;
  auto [end, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), value);
  if (ec != std::errc{} || end != it->second.data() + it->second.size()) return std::nullopt;
  return value;
}

}  // namespace detail

/// Stateless bridge between HTTP requests and the store/controller.
class Gateway {
 public:
  Gateway(StoreReader store, ControlLink& control) : store_(std::move(store)), control_(control) {}

  HttpResponse handle_request(std::string_view method, std::string_view target, std::string_view body) {
    auto qmark = target.find('?');
    std::string_view path = target.substr(0, qmark);
    auto query = detail::parse_query(qmark == std::string_view::npos ? std::string_view{} : target.substr(qmark + 1));
    try {
      if (method == "GET" && path == "/api/status") return {200, control_.status()};
      if (method == "GET" && (path == "/api/telemetry" || path == "/api/decisions")) return history(path, query);
      if (method == "POST" && path == "/api/mode") return post_mode(body);
      if (method == "POST" && path == "/api/command") return post_command(body);
      if (method == "GET" && path == "/api/version") return {200, {{"api_version", kApiVersion}}};
    } catch (const ControllerUnavailable& e) {
      return detail::error(503, e.what());
    } catch (const control::CommandRejected& e) {
      return detail::error(409, e.what());
    } catch (const StoreError& e) {
      return detail::error(500, e.what());
    }
    return detail::error(404, "no such endpoint: " + std::string(method) + " " + std::string(path));
  }

  /// First message for a new live-feed client.
  ApiEvent snapshot() {
    try {
      return {"snapshot", now_ms(), control_.status()};
    } catch (const ControllerUnavailable&) {
      return {"snapshot", now_ms(), {{"mode", nullptr}, {"pump", nullptr}, {"last_decision", nullptr}, {"error", "controller unreachable"}}};
    }
  }

 private:
  HttpResponse history(std::string_view path, const std::map<std::string, std::string>& query) {
    auto from = detail::parse_ms(query, "from", std::numeric_limits<TimestampMs>::min());
    auto to = detail::parse_ms(query, "to", std::numeric_limits<TimestampMs>::max());
    if (!from || !to) return detail::error(400, "from/to must be integer unix milliseconds");
    nlohmann::json items = nlohmann::json::array();
    if (path == "/api/telemetry") {
      for (const auto& s : store_.query_readings(*from, *to)) items.push_back(to_json(s.record));
      return {200, {{"readings", items}}};
    }
    for (const auto& s : store_.query_decisions(*from, *to)) items.push_back(to_json(s.record));
    return {200, {{"decisions", items}}};
  }

  HttpResponse post_mode(std::string_view body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("mode") || !j["mode"].is_string()) {
      return detail::error(400, "expected {\"mode\": \"auto\" | \"manual\"}");
    }
    auto mode = control::mode_from(j["mode"].get<std::string>());
    if (!mode) return detail::error(409, "mode must be \"auto\" or \"manual\"");
    return {200, control_.set_mode(*mode)};
  }

  HttpResponse post_command(std::string_view body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("value") || !j["value"].is_number_integer()) {
      return detail::error(400, "expected {\"value\": 0 | 1}");
    }
    auto value = j["value"].get<std::int64_t>();
    if (value != 0 && value != 1) return detail::error(409, "command value must be 0 or 1");
    return {200, control_.command(static_cast<int>(value))};
  }

  StoreReader store_;
  ControlLink& control_;
};

/// Controller event sink that feeds a hub directly.
inline control::Controller::EventSink hub_sink(EventHub& hub) {
  return [&hub](const std::string& kind, const nlohmann::json& payload) { hub.publish({kind, now_ms(), payload}); };
}

/// Controller event sink that forwards events over the bus on control/event.
inline control::Controller::EventSink bus_sink(std::function<void(const std::string&, const std::string&)> publish) {
  return [publish = std::move(publish)](const std::string& kind, const nlohmann::json& payload) {
    publish(control::kEventTopic, ApiEvent{kind, now_ms(), payload}.to_json().dump());
  };
}

}  // namespace irrigation::gateway
