#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace irrigation {

/// Unix time in milliseconds.
using TimestampMs = std::int64_t;

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One timestamped measurement from a field node.
struct SensorReading {
  TimestampMs timestamp = 0;
  std::string node_id;
  double humidity_pct = 0.0;    // air humidity, %
  double temperature_c = 0.0;   // DHT11 range 0-50
  int soil_moisture_raw = 0;    // FC-28 analog 0-1023, lower is wetter
  int is_raining = 0;

  bool operator==(const SensorReading&) const = default;
};

inline void validate(const SensorReading& r) {
  if (!(r.humidity_pct >= 0.0 && r.humidity_pct <= 100.0)) throw ValidationError("humidity_pct outside [0, 100]");
  if (!(r.temperature_c >= 0.0 && r.temperature_c <= 50.0)) throw ValidationError("temperature_c outside [0, 50]");
  if (r.soil_moisture_raw < 0 || r.soil_moisture_raw > 1023) throw ValidationError("soil_moisture_raw outside [0, 1023]");
  if (r.is_raining != 0 && r.is_raining != 1) throw ValidationError("is_raining must be 0 or 1");
}

enum class DecisionSource { kModel, kManual };

inline const char* to_string(DecisionSource s) { return s == DecisionSource::kModel ? "model" : "manual"; }

inline DecisionSource decision_source_from(const std::string& s) {
  if (s == "model") return DecisionSource::kModel;
  if (s == "manual") return DecisionSource::kManual;
  throw ValidationError("unknown decision source: " + s);
}

/// An irrigation decision together with the reading it was made on. Manual
/// commands carry the most recent reading, if any.
struct DecisionRecord {
  TimestampMs timestamp = 0;
  SensorReading reading;
  int decision = 0;
  DecisionSource source = DecisionSource::kModel;

  bool operator==(const DecisionRecord&) const = default;
};

inline void validate(const DecisionRecord& d) {
  if (d.decision != 0 && d.decision != 1) throw ValidationError("decision must be 0 or 1");
}

inline nlohmann::json to_json(const SensorReading& r) {
  return {{"ts", r.timestamp},          {"node", r.node_id},
          {"humidity", r.humidity_pct}, {"temperature", r.temperature_c},
          {"soil", r.soil_moisture_raw}, {"rain", r.is_raining}};
}

inline SensorReading reading_from_json(const nlohmann::json& j) {
  SensorReading r;
  r.timestamp = j.at("ts").get<TimestampMs>();
  r.node_id = j.at("node").get<std::string>();
  r.humidity_pct = j.at("humidity").get<double>();
  r.temperature_c = j.at("temperature").get<double>();
  r.soil_moisture_raw = j.at("soil").get<int>();
  r.is_raining = j.at("rain").get<int>();
  return r;
}

inline nlohmann::json to_json(const DecisionRecord& d) {
  return {{"ts", d.timestamp}, {"reading", to_json(d.reading)}, {"decision", d.decision}, {"source", to_string(d.source)}};
}

inline DecisionRecord decision_from_json(const nlohmann::json& j) {
  DecisionRecord d;
  d.timestamp = j.at("ts").get<TimestampMs>();
  d.reading = reading_from_json(j.at("reading"));
  d.decision = j.at("decision").get<int>();
  d.source = decision_source_from(j.at("source").get<std::string>());
  return d;
}

}  // namespace irrigation
