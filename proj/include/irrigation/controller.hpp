#pragma once

// Irrigation decision loop: telemetry in, model prediction, command out,
// with an operator override (manual mode) and an audit trail in the store.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "irrigation/c45.hpp"
#include "irrigation/dataprep.hpp"
#include "irrigation/store.hpp"
#include "irrigation/telemetry.hpp"

namespace irrigation::control {

inline constexpr const char* kTestInputTopic = "test/newdata";
inline constexpr const char* kTestResultTopic = "test/result";
inline constexpr const char* kTelemetryFilter = "field/+/telemetry";
inline constexpr const char* kRequestTopic = "control/request";
inline constexpr const char* kResponseTopic = "control/response";
inline constexpr const char* kEventTopic = "control/event";
/// Node id recorded for harness payloads on the test topic.
inline constexpr const char* kTestNodeId = "test";

enum class Mode { kAuto, kManual };

inline const char* to_string(Mode m) { return m == Mode::kAuto ? "auto" : "manual"; }

inline std::optional<Mode> mode_from(const std::string& s) {
  if (s == "auto") return Mode::kAuto;
  if (s == "manual") return Mode::kManual;
  return std::nullopt;
}

class CommandRejected : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class StartupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Command {
  int value = 0;
  DecisionSource source = DecisionSource::kModel;
  TimestampMs timestamp = 0;
  bool operator==(const Command&) const = default;
};

struct LastReading {
  SensorReading reading;
  std::string reply_topic;
};

struct ControllerState {
  Mode mode = Mode::kAuto;
  bool pump_commanded = false;
  std::optional<DecisionRecord> last_decision;
  std::optional<LastReading> last_reading;
};

/// Reads a model file; any failure is a startup error carrying a diagnostic.
inline c45::TreeModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StartupError("cannot open model file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return c45::deserialize_model(buffer.str());
  } catch (const c45::ModelLoadError& e) {
    throw StartupError("invalid model file " + path.string() + ": " + e.what());
  }
}

/// Command topic for a telemetry topic: test/newdata -> test/result,
/// field/<id>/telemetry -> field/<id>/command. nullopt for anything else.
inline std::optional<std::pair<std::string, std::string>> route_for(const std::string& topic) {
  if (topic == kTestInputTopic) return std::pair<std::string, std::string>{kTestNodeId, kTestResultTopic};
  const std::string prefix = "field/";
  const std::string suffix = "/telemetry";
  if (topic.size() > prefix.size() + suffix.size() && topic.starts_with(prefix) && topic.ends_with(suffix)) {
    std::string node = topic.substr(prefix.size(), topic.size() - prefix.size() - suffix.size());
    if (node.find('/') == std::string::npos) return std::pair<std::string, std::string>{node, "field/" + node + "/command"};
  }
  return std::nullopt;
}

nlohmann::json status_json(const ControllerState& s);

/// The decision core. Not thread-safe; ControllerService serializes access.
class Controller {
 public:
  using Publisher = std::function<void(const std::string& topic, const std::string& payload)>;
  /// kind is one of "reading", "decision", "mode", "pump".
  using EventSink = std::function<void(const std::string& kind, const nlohmann::json& payload)>;
  using ClockFn = std::function<TimestampMs()>;

  Controller(c45::TreeModel model, TelemetryStore* store, Publisher publish, ClockFn clock = system_clock_ms)
      : model_(std::move(model)), store_(store), publish_(std::move(publish)), clock_(std::move(clock)) {}

  void set_event_sink(EventSink sink) { sink_ = std::move(sink); }

  /// Parses, predicts and (in auto mode) commands. In manual mode the
  /// prediction is recorded but no command is emitted. Unparseable payloads
  /// are counted and otherwise ignored.
  std::optional<Command> on_telemetry(const std::string& topic, const std::string& payload) {
    auto route = route_for(topic);
    if (!route) {
      ++rejected_;
      return std::nullopt;
    }
    TimestampMs now = clock_();
    SensorReading reading;
    try {
      reading = payload_to_reading(payload, now, route->first);
    } catch (const std::invalid_argument& e) {
      ++rejected_;
      std::cerr << "controller: rejected payload on " << topic << ": " << e.what() << "\n";
      return std::nullopt;
    }
    if (store_) store_->append(reading);
    state_.last_reading = LastReading{reading, route->second};
    known_routes_.insert(route->second);
    emit("reading", to_json(reading));

    int predicted = decide(reading);
    if (state_.mode == Mode::kManual) {
      record(DecisionRecord{now, reading, predicted, DecisionSource::kModel});
      return std::nullopt;
    }
    return command(predicted, DecisionSource::kModel, reading, {route->second}, now);
  }

  /// Switching to auto re-evaluates the last reading and may command.
  std::optional<Command> set_mode(Mode mode) {
    if (mode == state_.mode) return std::nullopt;
    state_.mode = mode;
    emit("mode", {{"mode", to_string(mode)}});
    if (mode == Mode::kAuto && state_.last_reading) {
      const auto& last = *state_.last_reading;
      return command(decide(last.reading), DecisionSource::kModel, last.reading, {last.reply_topic}, clock_());
    }
    return std::nullopt;
  }

  /// Operator command. In auto mode this first switches to manual. The
  /// command goes to every node seen so far.
  Command manual_command(int value) {
    if (value != 0 && value != 1) throw CommandRejected("command value must be 0 or 1");
    if (state_.mode == Mode::kAuto) set_mode(Mode::kManual);
    SensorReading reading = state_.last_reading ? state_.last_reading->reading : SensorReading{};
    return command(value, DecisionSource::kManual, reading, known_routes_, clock_());
  }

  const ControllerState& state() const { return state_; }
  const c45::TreeModel& model() const { return model_; }
  std::uint64_t rejected_payloads() const { return rejected_; }

  static TimestampMs system_clock_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

 private:
  int decide(const SensorReading& reading) const {
    try {
      return c45::predict(model_, to_instance(reading)).label;
    } catch (const std::exception& e) {
      std::cerr << "controller: prediction failed, holding pump off: " << e.what() << "\n";
      return 0;
    }
  }

  Command command(int value, DecisionSource source, const SensorReading& reading, const std::set<std::string>& topics,
                  TimestampMs now) {
    Command cmd{value, source, now};
    record(DecisionRecord{now, reading, value, source});
    bool pump = value == 1;
    if (pump != state_.pump_commanded) {
      state_.pump_commanded = pump;
      emit("pump", {{"pump", pump}});
    }
    for (const auto& topic : topics) publish_(topic, std::to_string(value));
    return cmd;
  }

  void record(const DecisionRecord& d) {
    if (store_) store_->append(d);
    state_.last_decision = d;
    emit("decision", to_json(d));
  }

  void emit(const std::string& kind, const nlohmann::json& payload) {
    if (sink_) sink_(kind, payload);
  }

  c45::TreeModel model_;
  TelemetryStore* store_;
  Publisher publish_;
  ClockFn clock_;
  EventSink sink_;
  ControllerState state_;
  std::set<std::string> known_routes_;
  std::uint64_t rejected_ = 0;
};

inline nlohmann::json status_json(const ControllerState& s) {
  nlohmann::json j;
  j["mode"] = to_string(s.mode);
  j["pump"] = s.pump_commanded;
  j["last_decision"] = s.last_decision ? to_json(*s.last_decision) : nlohmann::json(nullptr);
  return j;
}

/// Runs a Controller on its own thread. Bus messages and operator requests
/// enter one FIFO queue and are applied in order.
class ControllerService {
 public:
  explicit ControllerService(Controller controller) : controller_(std::move(controller)) {
    thread_ = std::thread([this] { loop(); });
  }

  ~ControllerService() { stop(); }

  ControllerService(const ControllerService&) = delete;
  ControllerService& operator=(const ControllerService&) = delete;

  void stop() {
    {
      std::lock_guard lock(mutex_);
      if (stopping_) return;
      stopping_ = true;
    }
    ready_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

  /// Queues a telemetry message without waiting.
  void post_telemetry(std::string topic, std::string payload) {
    post([this, topic = std::move(topic), payload = std::move(payload)] { controller_.on_telemetry(topic, payload); });
  }

  /// Runs `fn` on the controller thread and waits for its result.
  template <typename Fn>
  auto call(Fn fn) -> decltype(fn(std::declval<Controller&>())) {
    using R = decltype(fn(std::declval<Controller&>()));
    auto task = std::make_shared<std::packaged_task<R()>>([this, fn = std::move(fn)]() mutable { return fn(controller_); });
    auto result = task->get_future();
    post([task] { (*task)(); });
    return result.get();
  }

  nlohmann::json status() {
    return call([](Controller& c) { return status_json(c.state()); });
  }

  /// Waits until every message queued so far has been processed.
  void drain() {
    call([](Controller&) { return 0; });
  }

 private:
  void post(std::function<void()> task) {
    {
      std::lock_guard lock(mutex_);
      if (stopping_) throw std::runtime_error("controller stopped");
      queue_.push_back(std::move(task));
    }
    ready_.notify_one();
  }

  void loop() {
    while (true) {
      std::function<void()> task;
      {
        std::unique_lock lock(mutex_);
        ready_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        task = std::move(queue_.front());
        queue_.pop_front();
      }
      try {
        task();
      } catch (const std::exception& e) {
        std::cerr << "controller: " << e.what() << "\n";
      }
    }
  }

  Controller controller_;
  std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<std::function<void()>> queue_;
  bool stopping_ = false;
  std::thread thread_;
};

/// Executes one bus control request against the service and returns the
/// response document. Requests: {"id", "op": "status" | "set_mode" |
/// "command", "mode"?, "value"?}.
inline nlohmann::json handle_control_request(ControllerService& service, const nlohmann::json& request) {
  nlohmann::json response;
  response["id"] = request.value("id", nlohmann::json(nullptr));
  try {
    std::string op = request.at("op").get<std::string>();
    if (op == "status") {
      response["status"] = service.status();
    } else if (op == "set_mode") {
      auto mode = mode_from(request.at("mode").get<std::string>());
      if (!mode) throw CommandRejected("mode must be \"auto\" or \"manual\"");
      service.call([m = *mode](Controller& c) { return c.set_mode(m).has_value(); });
      response["status"] = service.status();
    } else if (op == "command") {
      const auto& v = request.at("value");
      if (!v.is_number_integer()) throw CommandRejected("value must be 0 or 1");
      int value = v.get<int>();
      service.call([value](Controller& c) { return c.manual_command(value).value; });
      response["status"] = service.status();
    } else {
      throw CommandRejected("unknown op " + op);
    }
    response["ok"] = true;
  } catch (const CommandRejected& e) {
    response["ok"] = false;
    response["error"] = e.what();
    response["rejected"] = true;
  } catch (const std::exception& e) {
    response["ok"] = false;
    response["error"] = e.what();
  }
  return response;
}

}  // namespace irrigation::control
