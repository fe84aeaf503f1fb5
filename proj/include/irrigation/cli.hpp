#pragma once

// Subcommand entry point shared by tools/irrigate.cpp and the tests.
//
// Option precedence: built-in default < --config file < IRRIGATION_STORE
// (store directory only) < command-line flag.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "irrigation/c45.hpp"
#include "irrigation/controller.hpp"
#include "irrigation/dataprep.hpp"
#include "irrigation/evaluation.hpp"
#include "irrigation/field_sim.hpp"
#include "irrigation/gateway.hpp"
#include "irrigation/gateway_server.hpp"
#include "irrigation/mqtt/client.hpp"
#include "irrigation/mqtt/tcp.hpp"
#include "irrigation/store.hpp"
#include "irrigation/table1.hpp"

namespace irrigation::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr const char* kStoreEnv = "IRRIGATION_STORE";

struct RunConfig {
  std::string subcommand;
  std::string broker = "127.0.0.1:1883";
  std::string store = "irrigation-data";
  std::string model;
  std::string sim_config;
  std::uint64_t seed = 1;
  std::size_t k = 10;
  int min_leaf = 2;
  double confidence = 0.25;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::atomic<bool>& shutdown_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

inline void on_signal(int) { shutdown_flag() = true; }

inline void install_signal_handlers() {
  shutdown_flag() = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

inline bool shutting_down() { return shutdown_flag().load(); }

inline void wait_for_shutdown(const std::atomic<bool>* also = nullptr) {
  while (!shutting_down() && !(also && also->load())) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline sim::SimConfig load_sim_config(const std::string& path) {
  if (path.empty()) return {};
  auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw UsageError("sim config " + path + " is not valid JSON");
  auto c = sim::sim_config_from_json(j);
  sim::validate(c);
  return c;
}

inline std::unique_ptr<mqtt::Client> connect_bus(const std::string& address, const std::string& client_id) {
  auto [host, port] = mqtt::parse_broker_address(address);
  auto client = std::make_unique<mqtt::Client>(std::make_unique<mqtt::TcpTransport>(host, port), client_id);
  client->connect();
  return client;
}

inline Dataset load_dataset(const std::string& path) {
  Dataset d = parse_training_csv(read_file(path));
  if (!d.supervised()) throw UsageError(path + " has no label column");
  return clean_dataset(d, KnnImpute{});
}

}  // namespace detail

/// Applies a JSON config file to every field whose flag was not given.
inline void apply_config_file(RunConfig& cfg, const std::string& path, const CLI::App& sub) {
  auto j = nlohmann::json::parse(detail::read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw UsageError("config " + path + " must be a JSON object");
  auto given = [&sub](const char* flag) {
    auto* opt = sub.get_option_no_throw(flag);
    return opt && opt->count() > 0;
  };
  auto take = [&](const char* key, const char* flag, auto& field) {
    if (j.contains(key) && !given(flag)) field = j[key].get<std::decay_t<decltype(field)>>();
  };
  take("broker", "--broker", cfg.broker);
  take("store", "--store", cfg.store);
  take("model", "--model", cfg.model);
  take("sim_config", "--sim-config", cfg.sim_config);
  take("seed", "--seed", cfg.seed);
  take("k", "--k", cfg.k);
  take("min_leaf", "--min-leaf", cfg.min_leaf);
  take("confidence", "--confidence", cfg.confidence);
}

inline int cmd_broker(const RunConfig&, std::uint16_t port, const std::string& bind, std::ostream& out) {
  mqtt::TcpBroker broker(port, bind);
  broker.start();
  out << "broker listening on " << bind << ":" << broker.port() << std::endl;
  detail::wait_for_shutdown();
  broker.stop();
  return kExitOk;
}

inline int cmd_generate(const RunConfig& cfg, std::size_t n, const std::string& out_path, std::ostream& out) {
  auto sim_cfg = detail::load_sim_config(cfg.sim_config);
  Dataset d = sim::generate_training_set(sim_cfg, n, cfg.seed);
  std::string csv = format_training_csv(d);
  if (out_path.empty() || out_path == "-") {
    out << csv;
  } else {
    detail::write_file(out_path, csv);
    auto counts = d.class_counts();
    out << "wrote " << d.size() << " instances (" << counts[1] << " irrigate, " << counts[0] << " hold) to " << out_path
        << "\n";
  }
  return kExitOk;
}

inline int cmd_train(const RunConfig& cfg, const std::string& data, std::ostream& out) {
  if (cfg.model.empty()) throw UsageError("train needs --model (output path)");
  Dataset d = detail::load_dataset(data);
  c45::LearnerParams params{cfg.min_leaf, cfg.confidence};
  auto model = c45::build_tree(d, params);
  detail::write_file(cfg.model, c45::serialize_model(model));
  out << c45::describe_tree(model);
  return kExitOk;
}

inline int cmd_eval(const RunConfig& cfg, const std::string& data, bool json, std::ostream& out) {
  Dataset d = detail::load_dataset(data);
  c45::LearnerParams params{cfg.min_leaf, cfg.confidence};
  auto report = eval::cross_validate(d, cfg.k, cfg.seed, params);
  out << (json ? eval::report_to_json(report).dump(2) + "\n" : eval::format_report(report));
  return kExitOk;
}

inline int cmd_predict(const RunConfig& cfg, const std::string& payload, std::ostream& out) {
  if (cfg.model.empty()) throw UsageError("predict needs --model");
  auto model = control::load_model(cfg.model);
  out << c45::predict(model, parse_payload(payload)).label << "\n";
  return kExitOk;
}

inline int cmd_replay_table1(const RunConfig& cfg, std::ostream& out) {
  if (cfg.model.empty()) throw UsageError("replay-table1 needs --model");
  auto model = control::load_model(cfg.model);
  int success = 0;
  out << "row  payload          PREDICTED  ACTUAL  RESULT\n";
  for (std::size_t i = 0; i < kTable1.size(); ++i) {
    const auto& row = kTable1[i];
    int predicted = c45::predict(model, parse_payload(row.payload)).label;
    bool ok = predicted == row.actual;
    success += ok ? 1 : 0;
    out << eval::detail::pad_left(std::to_string(i + 1), 3) << "  " << eval::detail::pad_right(std::string(row.payload), 16)
        << " " << eval::detail::pad_left(std::to_string(predicted), 9) << "  " << eval::detail::pad_left(std::to_string(row.actual), 6)
        << "  " << (ok ? "SUCCESS" : "FAIL") << "\n";
  }
  out << "success " << success << "/" << kTable1.size() << " ("
      << irrigation::detail::fixed(100.0 * success / static_cast<double>(kTable1.size()), 1) << " %)\n";
  return kExitOk;
}

inline int cmd_export(const RunConfig& cfg, TimestampMs from, TimestampMs to, const std::string& labels,
                      const std::string& out_path, std::ostream& out, std::ostream& err) {
  LabelSource source;
  if (labels == "oracle") {
    source = LabelSource::kOracle;
  } else if (labels == "decisions") {
    source = LabelSource::kDecisions;
  } else {
    throw UsageError("--labels must be oracle or decisions");
  }
  StoreReader store(cfg.store);
  auto result = store.export_training_csv(from, to, source);
  if (out_path.empty() || out_path == "-") {
    out << result.csv;
  } else {
    detail::write_file(out_path, result.csv);
  }
  err << "exported " << result.rows << " rows";
  if (result.skipped_rows > 0) err << ", skipped " << result.skipped_rows << " without a decision";
  err << "\n";
  return kExitOk;
}

/// Runs the field simulator in (optionally accelerated) real time, publishing
/// telemetry and applying pump commands received from the bus.
inline int cmd_sim(const RunConfig& cfg, const std::string& node, double speed, std::size_t count, std::ostream& out) {
  if (!(speed > 0)) throw UsageError("--speed must be positive");
  auto sim_cfg = detail::load_sim_config(cfg.sim_config);
  sim_cfg.seed = cfg.seed;
  auto client = detail::connect_bus(cfg.broker, "sim-" + node);
  const std::string command_topic = "field/" + node + "/command";
  const std::string telemetry_topic = "field/" + node + "/telemetry";
  client->subscribe({command_topic});

  std::atomic<int> pump{-1};  // -1: no command yet
  std::atomic<bool> lost{false};
  client->start(
      [&](const mqtt::Publish& p) {
        if (p.topic != command_topic) return;
        if (p.payload == "1" || p.payload == "0") pump = p.payload == "1" ? 1 : 0;
      },
      [&] { lost = true; });

  sim::FieldState state = sim::initial_state(sim_cfg);
  auto period = std::chrono::duration<double>(sim_cfg.publish_period_s / speed);
  auto next = std::chrono::steady_clock::now();
  for (std::size_t sent = 0; count == 0 || sent < count; ++sent) {
    if (detail::shutting_down() || lost) break;
    if (pump >= 0) state.pump_on = pump == 1;
    auto reading = sim::read_sensors(state, sim_cfg, node);
    client->publish(telemetry_topic, format_payload(reading));
    out << "t=" << state.sim_time_s << "s soil=" << reading.soil_moisture_raw << " rain=" << reading.is_raining
        << " pump=" << (state.pump_on ? 1 : 0) << std::endl;
    state = sim::step(state, sim_cfg, sim_cfg.publish_period_s);
    next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
    while (std::chrono::steady_clock::now() < next && !detail::shutting_down()) {
      std::this_thread::sleep_for(std::min<std::chrono::steady_clock::duration>(next - std::chrono::steady_clock::now(),
                                                                                 std::chrono::milliseconds(100)));
    }
  }
  client->stop();
  if (lost) throw std::runtime_error("lost connection to broker");
  return kExitOk;
}

inline int cmd_controller(const RunConfig& cfg, std::ostream& out) {
  if (cfg.model.empty()) throw UsageError("controller needs --model");
  auto model = control::load_model(cfg.model);
  TelemetryStore store(cfg.store);
  auto client = detail::connect_bus(cfg.broker, "controller");
  client->subscribe({control::kTestInputTopic, control::kTelemetryFilter, control::kRequestTopic});
  auto* bus = client.get();
  control::Controller controller(std::move(model), &store,
                                 [bus](const std::string& t, const std::string& p) { bus->publish(t, p); });
  controller.set_event_sink(gateway::bus_sink([bus](const std::string& t, const std::string& p) { bus->publish(t, p); }));
  control::ControllerService service(std::move(controller));

  std::atomic<bool> lost{false};
  client->start(
      [&](const mqtt::Publish& p) {
        if (p.topic == control::kRequestTopic) {
          auto request = nlohmann::json::parse(p.payload, nullptr, false);
          if (request.is_discarded()) return;
          bus->publish(control::kResponseTopic, control::handle_control_request(service, request).dump());
          return;
        }
        service.post_telemetry(p.topic, p.payload);
      },
      [&] { lost = true; });
  out << "controller running, store " << cfg.store << std::endl;
  detail::wait_for_shutdown(&lost);
  client->stop();
  service.drain();
  service.stop();
  if (lost) throw std::runtime_error("lost connection to broker");
  return kExitOk;
}

inline int cmd_gateway(const RunConfig& cfg, std::uint16_t port, const std::string& bind, const std::string& static_dir,
                       std::ostream& out) {
  auto client = detail::connect_bus(cfg.broker, "gateway");
  client->subscribe({control::kEventTopic, control::kResponseTopic});
  auto* bus = client.get();
  gateway::BusControlLink link([bus](const std::string& t, const std::string& p) { bus->publish(t, p); });
  gateway::EventHub hub;
  std::atomic<bool> lost{false};
  client->start(
      [&](const mqtt::Publish& p) {
        if (p.topic == control::kResponseTopic) {
          link.on_response(p.payload);
        } else if (p.topic == control::kEventTopic) {
          auto j = nlohmann::json::parse(p.payload, nullptr, false);
          if (j.is_discarded()) return;
          try {
            hub.publish(gateway::ApiEvent::from_json(j));
          } catch (const std::exception&) {
          }
        }
      },
      [&] { lost = true; });
  gateway::Gateway gw(StoreReader(cfg.store), link);
  gateway::GatewayServer server(gw, hub, {bind, port, static_dir});
  server.start();
  out << "gateway listening on " << bind << ":" << server.port() << std::endl;
  detail::wait_for_shutdown(&lost);
  server.stop();
  client->stop();
  if (lost) throw std::runtime_error("lost connection to broker");
  return kExitOk;
}

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Smart irrigation toolkit", "irrigate"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string config_path;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON file overriding defaults");
  };
  auto bus = [&](CLI::App* sub) { sub->add_option("--broker", cfg.broker, "Broker address host:port"); };
  auto store = [&](CLI::App* sub) { sub->add_option("--store", cfg.store, "Store directory (env IRRIGATION_STORE)"); };
  auto learner = [&](CLI::App* sub) {
    sub->add_option("--min-leaf", cfg.min_leaf, "Minimum instances per leaf");
    sub->add_option("--confidence", cfg.confidence, "Pruning confidence factor; 1 disables pruning");
  };

  std::uint16_t port = 0;
  std::string bind = "0.0.0.0";
  std::string data;
  std::string out_path;
  std::string node = "n1";
  std::string labels = "oracle";
  std::string static_dir;
  std::size_t n = 200;
  std::size_t count = 0;
  double speed = 1.0;
  bool json = false;
  TimestampMs from = 0;
  TimestampMs to = std::numeric_limits<TimestampMs>::max();

  auto* broker = app.add_subcommand("broker", "Serve the message bus");
  common(broker);
  broker->add_option("--port", port, "TCP port")->default_val(1883);
  broker->add_option("--bind", bind, "Bind address");

  auto* simc = app.add_subcommand("sim", "Run the field simulator against the bus");
  common(simc);
  bus(simc);
  simc->add_option("--sim-config", cfg.sim_config, "Simulator config JSON");
  simc->add_option("--seed", cfg.seed, "Random seed");
  simc->add_option("--node", node, "Node id");
  simc->add_option("--speed", speed, "Simulated seconds per wall-clock second");
  simc->add_option("--count", count, "Readings to publish; 0 runs until stopped");

  auto* generate = app.add_subcommand("generate", "Write an oracle-labeled training CSV from the simulator");
  common(generate);
  generate->add_option("--sim-config", cfg.sim_config, "Simulator config JSON");
  generate->add_option("--seed", cfg.seed, "Random seed");
  generate->add_option("--n", n, "Number of instances");
  generate->add_option("--out", out_path, "Output CSV (default stdout)");

  auto* train = app.add_subcommand("train", "Train a model from a CSV");
  common(train);
  train->add_option("--data", data, "Training CSV")->required();
  train->add_option("--model", cfg.model, "Model output path");
  learner(train);

  auto* evalc = app.add_subcommand("eval", "Cross-validate on a CSV and print a report");
  common(evalc);
  evalc->add_option("--data", data, "Training CSV")->required();
  evalc->add_option("--k", cfg.k, "Number of folds");
  evalc->add_option("--seed", cfg.seed, "Fold shuffling seed");
  evalc->add_flag("--json", json, "Print the report as JSON");
  learner(evalc);

  auto* predict = app.add_subcommand("predict", "Classify one payload");
  common(predict);
  predict->add_option("--model", cfg.model, "Model file");
  predict->add_option("--data", data, "Payload humidity,temperature,soil,rain")->required();

  auto* controller = app.add_subcommand("controller", "Run the decision loop");
  common(controller);
  bus(controller);
  store(controller);
  controller->add_option("--model", cfg.model, "Model file");

  auto* gatewayc = app.add_subcommand("gateway", "Serve the HTTP/WebSocket API");
  common(gatewayc);
  bus(gatewayc);
  store(gatewayc);
  gatewayc->add_option("--port", port, "HTTP port")->default_val(8080);
  gatewayc->add_option("--bind", bind, "Bind address");
  gatewayc->add_option("--static-dir", static_dir, "Dashboard files to serve at /");

  auto* exportc = app.add_subcommand("export", "Export stored readings as a training CSV");
  common(exportc);
  store(exportc);
  exportc->add_option("--from", from, "Start timestamp, ms (inclusive)");
  exportc->add_option("--to", to, "End timestamp, ms (exclusive)");
  exportc->add_option("--labels", labels, "oracle | decisions");
  exportc->add_option("--out", out_path, "Output CSV (default stdout)");

  auto* replay = app.add_subcommand("replay-table1", "Replay the 30 reference field-test payloads");
  common(replay);
  replay->add_option("--model", cfg.model, "Model file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  cfg.subcommand = sub->get_name();
  try {
    if (!config_path.empty()) apply_config_file(cfg, config_path, *sub);
    if (const char* env = std::getenv(kStoreEnv); env && *env) {
      auto* opt = sub->get_option_no_throw("--store");
      if (!opt || opt->count() == 0) cfg.store = env;
    }
    try {
      c45::validate(c45::LearnerParams{cfg.min_leaf, cfg.confidence});
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }

    if (cfg.subcommand == "broker") {
      detail::install_signal_handlers();
      return cmd_broker(cfg, port, bind, out);
    }
    if (cfg.subcommand == "sim") {
      detail::install_signal_handlers();
      return cmd_sim(cfg, node, speed, count, out);
    }
    if (cfg.subcommand == "generate") return cmd_generate(cfg, n, out_path, out);
    if (cfg.subcommand == "train") return cmd_train(cfg, data, out);
    if (cfg.subcommand == "eval") return cmd_eval(cfg, data, json, out);
    if (cfg.subcommand == "predict") return cmd_predict(cfg, data, out);
    if (cfg.subcommand == "controller") {
      detail::install_signal_handlers();
      return cmd_controller(cfg, out);
    }
    if (cfg.subcommand == "gateway") {
      detail::install_signal_handlers();
      return cmd_gateway(cfg, port, bind, static_dir, out);
    }
    if (cfg.subcommand == "export") return cmd_export(cfg, from, to, labels, out_path, out, err);
    if (cfg.subcommand == "replay-table1") return cmd_replay_table1(cfg, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << sub->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"irrigate"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace irrigation::cli
