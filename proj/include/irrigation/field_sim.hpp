#pragma once

// Deterministic virtual field: soil moisture on the FC-28 raw scale (lower
// is wetter), DHT11-style air temperature and humidity, a rain flag and a
// pump. Dynamics are linear in time:
//
//   d(soil)/dt = drying_rate * (1 + (T - 25) / 50)
//              - irrigation_rate * pump_on - rain_rate * raining
//
// clamped to [120, 900] (tap-water floor to dry-soil ceiling). Temperature
// and humidity follow 24 h sinusoids plus seeded jitter.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "irrigation/dataprep.hpp"
#include "irrigation/detail/random.hpp"
#include "irrigation/label_oracle.hpp"
#include "irrigation/telemetry.hpp"

namespace irrigation::sim {

inline constexpr double kSoilFloor = 120.0;
inline constexpr double kSoilCeiling = 900.0;

struct RainEvent {
  double start_s = 0;
  double duration_s = 0;
  bool operator==(const RainEvent&) const = default;
};

struct SimConfig {
  std::uint64_t seed = 1;
  double tick_s = 60;
  double publish_period_s = 300;
  double drying_rate = 10;       // raw units per hour at 25 C
  double irrigation_rate = 400;  // raw units per hour while the pump runs
  double rain_rate = 150;        // raw units per hour while raining
  std::vector<RainEvent> rain_schedule;
  double temperature_mean = 22;
  double temperature_amplitude = 8;
  double humidity_mean = 50;
  double humidity_amplitude = 20;
  double humidity_rain_boost = 25;  // added to true humidity while raining
  double temperature_jitter = 0.5;  // process noise on the true temperature
  double humidity_jitter = 2;
  double temperature_noise = 2;     // sensor error margin, C
  double humidity_noise = 5;        // sensor error margin, %
  double initial_soil = 600;
  TimestampMs start_time_ms = 1'560'000'000'000;  // June 2019

  bool operator==(const SimConfig&) const = default;
};

/// Fastest drying the temperature model can produce (T = 50 C).
inline double max_drying_rate(const SimConfig& c) { return c.drying_rate * (1.0 + (50.0 - 25.0) / 50.0); }

inline void validate(const SimConfig& c) {
  if (!(c.tick_s > 0)) throw std::invalid_argument("tick must be positive");
  if (!(c.publish_period_s > 0)) throw std::invalid_argument("publish_period must be positive");
  double ratio = c.publish_period_s / c.tick_s;
  if (std::abs(ratio - std::round(ratio)) > 1e-9) throw std::invalid_argument("publish_period must be a multiple of tick");
  if (!(c.drying_rate > 0 && c.irrigation_rate > 0 && c.rain_rate > 0)) throw std::invalid_argument("rates must be positive");
  if (!(c.irrigation_rate > max_drying_rate(c))) {
    throw std::invalid_argument("irrigation_rate must exceed the maximum drying rate");
  }
  if (c.initial_soil < kSoilFloor || c.initial_soil > kSoilCeiling) throw std::invalid_argument("initial_soil outside [120, 900]");
  for (const auto& e : c.rain_schedule) {
    if (e.duration_s < 0) throw std::invalid_argument("rain duration must be nonnegative");
  }
}

/// Hours for a running pump to take the soil from `from` down to `to` in
/// the worst case (hottest drying, no rain).
inline double irrigation_horizon_hours(const SimConfig& c, double from, double to) {
  return (from - to) / (c.irrigation_rate - max_drying_rate(c));
}

struct FieldState {
  double sim_time_s = 0;
  double soil_moisture_raw = 600;
  double air_humidity_pct = 50;
  double temperature_c = 22;
  bool raining = false;
  bool pump_on = false;
  detail::Rng rng{1};

  bool operator==(const FieldState&) const = default;
};

inline bool raining_at(const SimConfig& c, double t) {
  return std::any_of(c.rain_schedule.begin(), c.rain_schedule.end(),
                     [t](const RainEvent& e) { return t >= e.start_s && t < e.start_s + e.duration_s; });
}

namespace detail {

inline double diurnal(double t_s) {
  // peaks mid-afternoon (15:00), troughs at 03:00
  return std::sin(2.0 * std::numbers::pi * (t_s / 3600.0 - 9.0) / 24.0);
}

inline void update_weather(FieldState& s, const SimConfig& c) {
  double wave = diurnal(s.sim_time_s);
  s.raining = raining_at(c, s.sim_time_s);
  double t = c.temperature_mean + c.temperature_amplitude * wave +
             s.rng.uniform(-c.temperature_jitter, c.temperature_jitter);
  double h = c.humidity_mean - c.humidity_amplitude * wave + s.rng.uniform(-c.humidity_jitter, c.humidity_jitter);
  if (s.raining) h += c.humidity_rain_boost;
  s.temperature_c = std::clamp(t, 0.0, 50.0);
  s.air_humidity_pct = std::clamp(h, 0.0, 100.0);
}

}  // namespace detail

inline FieldState initial_state(const SimConfig& c) {
  validate(c);
  FieldState s;
  s.rng = irrigation::detail::Rng(c.seed);
  s.soil_moisture_raw = c.initial_soil;
  detail::update_weather(s, c);
  return s;
}

/// Advances the field by `dt_s` seconds in sub-steps of at most one tick.
/// The pump state is an input: it is held constant over the step.
inline FieldState step(const FieldState& state, const SimConfig& c, double dt_s) {
  if (!(dt_s > 0)) throw std::invalid_argument("dt must be positive");
  FieldState s = state;
  double left = dt_s;
  while (left > 1e-12) {
    double h = std::min(left, c.tick_s);
    double hours = h / 3600.0;
    double rate = c.drying_rate * (1.0 + (s.temperature_c - 25.0) / 50.0);
    if (s.pump_on) rate -= c.irrigation_rate;
    if (s.raining) rate -= c.rain_rate;
    s.soil_moisture_raw = std::clamp(s.soil_moisture_raw + rate * hours, kSoilFloor, kSoilCeiling);
    s.sim_time_s += h;
    left -= h;
    detail::update_weather(s, c);
  }
  return s;
}

/// Samples the sensors. Temperature carries uniform +-2 C error clamped to
/// [0, 50]; humidity +-5 % clamped to the measurable [20, 80] band; both are
/// reported at the DHT11's 1-unit resolution. Draws noise from the state's
/// generator.
inline SensorReading read_sensors(FieldState& s, const SimConfig& c, const std::string& node_id = "n1") {
  SensorReading r;
  r.timestamp = c.start_time_ms + static_cast<TimestampMs>(std::llround(s.sim_time_s * 1000.0));
  r.node_id = node_id;
  double t = s.temperature_c + s.rng.uniform(-c.temperature_noise, c.temperature_noise);
  double h = s.air_humidity_pct + s.rng.uniform(-c.humidity_noise, c.humidity_noise);
  r.temperature_c = std::round(std::clamp(t, 0.0, 50.0));
  r.humidity_pct = std::round(std::clamp(h, 20.0, 80.0));
  r.soil_moisture_raw = static_cast<int>(std::lround(s.soil_moisture_raw));
  r.is_raining = s.raining ? 1 : 0;
  return r;
}

/// Training data in place of months of field logging. The simulator runs
/// day by day with per-day weather offsets, random storms and a pump that an
/// imaginary operator toggles at random dryness levels; readings are sampled
/// every publish period into a pool. The result draws 5 % of its instances
/// from rainy readings at or above the irrigation threshold, 30 % from
/// readings within +-60 raw units of it and the rest from the whole pool,
/// labeled by label_oracle, in time order.
inline Dataset generate_training_set(const SimConfig& base, std::size_t n, std::uint64_t seed,
                                     std::vector<SensorReading>* readings_out = nullptr) {
  if (n < 1) throw std::invalid_argument("n must be at least 1");
  validate(base);
  irrigation::detail::Rng rng(seed);
  constexpr int kDays = 120;
  constexpr double kDay = 86'400;

  SimConfig cfg = base;
  cfg.seed = seed;
  cfg.rain_schedule.clear();
  for (int day = 0; day < kDays; ++day) {
    if (rng.chance(0.3)) {
      double start = day * kDay + rng.uniform(0, kDay);
      cfg.rain_schedule.push_back({start, rng.uniform(1, 5) * 3600.0});
    }
  }

  FieldState s = initial_state(cfg);
  double pump_on_at = rng.uniform(700, 880);
  double pump_off_at = rng.uniform(350, 520);
  std::vector<SensorReading> pool;
  const auto steps_per_publish = static_cast<int>(std::lround(cfg.publish_period_s / cfg.tick_s));
  for (int day = 0; day < kDays; ++day) {
    SimConfig today = cfg;
    today.temperature_mean = base.temperature_mean + rng.uniform(-6, 8);
    today.humidity_mean = base.humidity_mean + rng.uniform(-15, 15);
    const int publishes = static_cast<int>(kDay / cfg.publish_period_s);
    for (int p = 0; p < publishes; ++p) {
      pool.push_back(read_sensors(s, today));
      for (int k = 0; k < steps_per_publish; ++k) {
        if (!s.pump_on && s.soil_moisture_raw >= pump_on_at) {
          s.pump_on = true;
          pump_off_at = rng.uniform(350, 520);
        } else if (s.pump_on && s.soil_moisture_raw <= pump_off_at) {
          s.pump_on = false;
          pump_on_at = rng.uniform(700, 880);
        }
        s = step(s, today, cfg.tick_s);
      }
    }
  }

  // Strata: storms over dry soil (rare in the pool, but the only readings
  // where rain decides the label), then the threshold band, then the rest.
  std::vector<std::size_t> wet_dry;
  std::vector<std::size_t> band;
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].is_raining == 1 && pool[i].soil_moisture_raw >= kIrrigateSoilThreshold) {
      wet_dry.push_back(i);
    } else {
      (std::abs(pool[i].soil_moisture_raw - kIrrigateSoilThreshold) <= 60 ? band : rest).push_back(i);
    }
  }
  std::size_t want_wet_dry = std::min(wet_dry.size(), (n + 19) / 20);
  std::size_t want_band = std::min({band.size(), (n * 3 + 9) / 10, n - want_wet_dry});
  rng.shuffle(wet_dry);
  rng.shuffle(band);
  std::vector<std::size_t> chosen(wet_dry.begin(), wet_dry.begin() + static_cast<std::ptrdiff_t>(want_wet_dry));
  chosen.insert(chosen.end(), band.begin(), band.begin() + static_cast<std::ptrdiff_t>(want_band));
  std::vector<std::size_t> others = rest;
  others.insert(others.end(), band.begin() + static_cast<std::ptrdiff_t>(want_band), band.end());
  others.insert(others.end(), wet_dry.begin() + static_cast<std::ptrdiff_t>(want_wet_dry), wet_dry.end());
  rng.shuffle(others);
  for (std::size_t i = 0; chosen.size() < n && i < others.size(); ++i) chosen.push_back(others[i]);
  std::sort(chosen.begin(), chosen.end());

  Dataset d;
  for (auto i : chosen) {
    d.instances.push_back(to_instance(pool[i], label_oracle(pool[i])));
    if (readings_out) readings_out->push_back(pool[i]);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Config file

inline nlohmann::json to_json(const SimConfig& c) {
  nlohmann::json rain = nlohmann::json::array();
  for (const auto& e : c.rain_schedule) rain.push_back({{"start_s", e.start_s}, {"duration_s", e.duration_s}});
  return {{"seed", c.seed},
          {"tick_s", c.tick_s},
          {"publish_period_s", c.publish_period_s},
          {"drying_rate", c.drying_rate},
          {"irrigation_rate", c.irrigation_rate},
          {"rain_rate", c.rain_rate},
          {"rain_schedule", rain},
          {"temperature", {{"mean", c.temperature_mean}, {"amplitude", c.temperature_amplitude}}},
          {"humidity", {{"mean", c.humidity_mean}, {"amplitude", c.humidity_amplitude}, {"rain_boost", c.humidity_rain_boost}}},
          {"jitter", {{"temperature", c.temperature_jitter}, {"humidity", c.humidity_jitter}}},
          {"sensor_noise", {{"temperature", c.temperature_noise}, {"humidity", c.humidity_noise}}},
          {"initial_soil", c.initial_soil},
          {"start_time_ms", c.start_time_ms}};
}

/// Reads a config document; absent keys keep their defaults.
inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  auto get_nested = [&j](const char* outer, const char* key, double& field) {
    if (j.contains(outer) && j.at(outer).contains(key)) field = j.at(outer).at(key).get<double>();
  };
  get("seed", c.seed);
  get("tick_s", c.tick_s);
  get("publish_period_s", c.publish_period_s);
  get("drying_rate", c.drying_rate);
  get("irrigation_rate", c.irrigation_rate);
  get("rain_rate", c.rain_rate);
  get("initial_soil", c.initial_soil);
  get("start_time_ms", c.start_time_ms);
  get_nested("temperature", "mean", c.temperature_mean);
  get_nested("temperature", "amplitude", c.temperature_amplitude);
  get_nested("humidity", "mean", c.humidity_mean);
  get_nested("humidity", "amplitude", c.humidity_amplitude);
  get_nested("humidity", "rain_boost", c.humidity_rain_boost);
  get_nested("jitter", "temperature", c.temperature_jitter);
  get_nested("jitter", "humidity", c.humidity_jitter);
  get_nested("sensor_noise", "temperature", c.temperature_noise);
  get_nested("sensor_noise", "humidity", c.humidity_noise);
  if (j.contains("rain_schedule")) {
    for (const auto& e : j.at("rain_schedule")) {
      c.rain_schedule.push_back({e.at("start_s").get<double>(), e.at("duration_s").get<double>()});
    }
  }
  validate(c);
  return c;
}

}  // namespace irrigation::sim
