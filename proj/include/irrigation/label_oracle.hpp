#pragma once

#include "irrigation/telemetry.hpp"

namespace irrigation {

/// Soil reading at or above which a dry, rain-free field needs water. Lies
/// between the driest "do not irrigate" reading (682) and the wettest
/// "irrigate" reading (694) of the reference test table.
inline constexpr int kIrrigateSoilThreshold = 690;

/// Experience-based irrigation label: water only when it is not raining and
/// the soil is dry. Rain always vetoes.
inline int label_oracle(const SensorReading& r) {
  return (r.is_raining == 0 && r.soil_moisture_raw >= kIrrigateSoilThreshold) ? 1 : 0;
}

}  // namespace irrigation
