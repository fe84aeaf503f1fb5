#pragma once

// Payload parsing, cleaning, normalization and period downsampling for the
// four irrigation features.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "irrigation/detail/format.hpp"
#include "irrigation/telemetry.hpp"

namespace irrigation {

inline constexpr std::size_t kFeatureCount = 4;

enum Feature : std::size_t { kHumidity = 0, kTemperature = 1, kSoilMoisture = 2, kIsRaining = 3 };

inline constexpr std::array<const char*, kFeatureCount> kFeatureNames = {"humidity", "temperature", "soil_moisture",
                                                                         "is_raining"};

/// Feature slot; nullopt marks a MISSING value.
using FeatureValue = std::optional<double>;

struct Instance {
  std::array<FeatureValue, kFeatureCount> features{};
  std::optional<int> label;

  bool complete() const {
    return std::all_of(features.begin(), features.end(), [](const FeatureValue& v) { return v.has_value(); });
  }
  double at(std::size_t i) const { return features[i].value(); }
  bool operator==(const Instance&) const = default;
};

inline Instance make_instance(double humidity, double temperature, double soil, double rain,
                              std::optional<int> label = std::nullopt) {
  return Instance{{humidity, temperature, soil, rain}, label};
}

inline Instance to_instance(const SensorReading& r, std::optional<int> label = std::nullopt) {
  return make_instance(r.humidity_pct, r.temperature_c, r.soil_moisture_raw, r.is_raining, label);
}

/// Attribute metadata is fixed: four numeric attributes and classes {0, 1}.
struct Dataset {
  std::vector<Instance> instances;

  static constexpr std::array<int, 2> class_values = {0, 1};

  std::size_t size() const { return instances.size(); }
  bool empty() const { return instances.empty(); }
  bool supervised() const {
    return !instances.empty() &&
           std::all_of(instances.begin(), instances.end(), [](const Instance& i) { return i.label.has_value(); });
  }
  std::array<std::size_t, 2> class_counts() const {
    std::array<std::size_t, 2> counts{0, 0};
    for (const auto& inst : instances) {
      if (inst.label) ++counts[static_cast<std::size_t>(*inst.label)];
    }
    return counts;
  }
  bool operator==(const Dataset&) const = default;
};

class ParseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Payload parsing

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_number(std::string_view token) {
  token = trim(token);
  if (token.empty()) return std::nullopt;
  if (token.front() == '+') token.remove_prefix(1);
  double value = 0;
  auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || end != token.data() + token.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace detail

/// Parses "humidity,temperature,soil,rain[,label]". Four fields give an
/// unlabeled instance, a fifth field is the class label.
inline Instance parse_payload(std::string_view text) {
  auto fields = detail::split(detail::trim(text), ',');
  if (fields.size() != 4 && fields.size() != 5) {
    throw ParseError("expected 4 or 5 comma-separated fields, got " + std::to_string(fields.size()));
  }
  Instance inst;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    auto value = detail::parse_number(fields[i]);
    if (!value) {
      throw ParseError("field " + std::to_string(i + 1) + " is not numeric: '" + std::string(detail::trim(fields[i])) +
                       "'");
    }
    if (i < kFeatureCount) {
      inst.features[i] = *value;
    } else {
      if (*value != 0.0 && *value != 1.0) throw ParseError("field 5 (label) must be 0 or 1");
      inst.label = static_cast<int>(*value);
    }
  }
  return inst;
}

/// Validated SensorReading view of a payload; throws ValidationError when a
/// value is out of sensor range.
inline SensorReading payload_to_reading(std::string_view text, TimestampMs timestamp, std::string node_id) {
  Instance inst = parse_payload(text);
  SensorReading r;
  r.timestamp = timestamp;
  r.node_id = std::move(node_id);
  r.humidity_pct = inst.at(kHumidity);
  r.temperature_c = inst.at(kTemperature);
  double soil = inst.at(kSoilMoisture);
  double rain = inst.at(kIsRaining);
  if (soil != std::floor(soil)) throw ValidationError("soil moisture must be an integer reading");
  if (rain != 0.0 && rain != 1.0) throw ValidationError("is_raining must be 0 or 1");
  r.soil_moisture_raw = static_cast<int>(soil);
  r.is_raining = static_cast<int>(rain);
  validate(r);
  return r;
}

/// Telemetry payload text for a reading ("78,9,485,1").
inline std::string format_payload(const SensorReading& r) {
  return detail::shortest(r.humidity_pct) + "," + detail::shortest(r.temperature_c) + "," +
         std::to_string(r.soil_moisture_raw) + "," + std::to_string(r.is_raining);
}

// ---------------------------------------------------------------------------
// CSV (same layout as the store's training export; empty cell or '?' = MISSING)

inline Dataset parse_training_csv(std::string_view text) {
  Dataset d;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool header_seen = false;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    std::string_view line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    line = detail::trim(line);
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      auto first = detail::trim(detail::split(line, ',').front());
      if (!first.empty() && first != "?" && !detail::parse_number(first)) continue;  // header row
    }
    auto fields = detail::split(line, ',');
    if (fields.size() != 4 && fields.size() != 5) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 4 or 5 fields");
    }
    Instance inst;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      auto cell = detail::trim(fields[i]);
      if (cell.empty() || cell == "?") continue;
      auto value = detail::parse_number(cell);
      if (!value) throw ParseError("line " + std::to_string(line_no) + ", field " + std::to_string(i + 1) + " is not numeric");
      if (i < kFeatureCount) {
        inst.features[i] = *value;
      } else {
        if (*value != 0.0 && *value != 1.0) throw ParseError("line " + std::to_string(line_no) + ": label must be 0 or 1");
        inst.label = static_cast<int>(*value);
      }
    }
    d.instances.push_back(inst);
  }
  return d;
}

inline std::string format_training_csv(const Dataset& d) {
  std::string out = "humidity,temperature,soil_moisture,is_raining,label\n";
  for (const auto& inst : d.instances) {
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      if (inst.features[i]) out += detail::shortest(*inst.features[i]);
      else out += "?";
      out += ',';
    }
    out += inst.label ? std::to_string(*inst.label) : std::string("?");
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

enum class NormMethod { kZScore, kMinMax };

inline const char* to_string(NormMethod m) { return m == NormMethod::kZScore ? "zscore" : "minmax"; }

/// Per-attribute statistics. For z-score `center` is the mean and `scale`
/// the sample standard deviation; for min-max they are min and max.
struct NormStats {
  NormMethod method = NormMethod::kZScore;
  std::array<double, kFeatureCount> center{};
  std::array<double, kFeatureCount> scale{};

  double mean(std::size_t i) const { return center[i]; }
  double stddev(std::size_t i) const { return scale[i]; }
  double min(std::size_t i) const { return center[i]; }
  double max(std::size_t i) const { return scale[i]; }
  bool operator==(const NormStats&) const = default;
};

/// Fits z-score (sample stddev, n-1 divisor) or min-max statistics.
inline NormStats fit_norm_stats(const Dataset& d, NormMethod method) {
  if (d.size() < 2) throw std::invalid_argument("normalization needs at least 2 instances");
  for (const auto& inst : d.instances) {
    if (!inst.complete()) throw std::invalid_argument("normalization input contains MISSING values");
  }
  NormStats stats;
  stats.method = method;
  const double n = static_cast<double>(d.size());
  for (std::size_t a = 0; a < kFeatureCount; ++a) {
    if (method == NormMethod::kZScore) {
      double sum = 0;
      for (const auto& inst : d.instances) sum += inst.at(a);
      double mean = sum / n;
      double ss = 0;
      for (const auto& inst : d.instances) ss += (inst.at(a) - mean) * (inst.at(a) - mean);
      stats.center[a] = mean;
      stats.scale[a] = std::sqrt(ss / (n - 1));
    } else {
      auto [lo, hi] = std::minmax_element(d.instances.begin(), d.instances.end(),
                                          [a](const Instance& x, const Instance& y) { return x.at(a) < y.at(a); });
      stats.center[a] = lo->at(a);
      stats.scale[a] = hi->at(a);
    }
  }
  return stats;
}

inline double normalize_value(double x, const NormStats& stats, std::size_t a) {
  if (stats.method == NormMethod::kZScore) {
    if (stats.scale[a] == 0.0) return 0.0;
    return (x - stats.center[a]) / stats.scale[a];
  }
  double lo = stats.center[a];
  double hi = stats.scale[a];
  if (hi == lo) return 0.0;
  if (x <= lo) return 0.0;
  if (x >= hi) return 1.0;
  return (x - lo) / (hi - lo);
}

/// Normalizes each present feature; MISSING slots and the label are kept.
inline Instance apply_norm(const Instance& inst, const NormStats& stats) {
  Instance out = inst;
  for (std::size_t a = 0; a < kFeatureCount; ++a) {
    if (out.features[a]) out.features[a] = normalize_value(*out.features[a], stats, a);
  }
  return out;
}

inline Dataset apply_norm(const Dataset& d, const NormStats& stats) {
  Dataset out;
  out.instances.reserve(d.size());
  for (const auto& inst : d.instances) out.instances.push_back(apply_norm(inst, stats));
  return out;
}

/// Inverse of normalize_value for one attribute (min-max: unclamped values only).
inline double denormalize_value(double z, const NormStats& stats, std::size_t a) {
  if (stats.method == NormMethod::kZScore) return z * stats.scale[a] + stats.center[a];
  return stats.center[a] + z * (stats.scale[a] - stats.center[a]);
}

// ---------------------------------------------------------------------------
// Cleaning

struct DropMissing {};
struct KnnImpute {
  std::size_t k = 3;
};

/// Drop every incomplete instance, or replace each MISSING slot with the
/// mean of that attribute over the k nearest complete instances. Distance is
/// Euclidean over the attributes present in the incomplete instance, after
/// z-scoring with statistics fitted on the complete instances. Distance ties
/// resolve to the earlier instance.
template <typename Policy>
Dataset clean_dataset(const Dataset& d, const Policy& policy) {
  Dataset out;
  if constexpr (std::is_same_v<Policy, DropMissing>) {
    for (const auto& inst : d.instances) {
      if (inst.complete()) out.instances.push_back(inst);
    }
    return out;
  } else {
    if (policy.k < 1) throw std::invalid_argument("k must be at least 1");
    std::vector<std::size_t> complete;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.instances[i].complete()) complete.push_back(i);
    }
    bool any_missing = complete.size() != d.size();
    if (any_missing && complete.size() < policy.k) {
      throw std::invalid_argument("k-NN imputation needs at least k=" + std::to_string(policy.k) +
                                  " complete instances, found " + std::to_string(complete.size()));
    }
    NormStats stats;
    if (complete.size() >= 2) {
      Dataset reference;
      for (auto i : complete) reference.instances.push_back(d.instances[i]);
      stats = fit_norm_stats(reference, NormMethod::kZScore);
    } else {
      stats.scale.fill(0.0);  // a single reference instance: all distances 0
    }

    out.instances = d.instances;
    for (auto& inst : out.instances) {
      if (inst.complete()) continue;
      std::vector<std::pair<double, std::size_t>> ranked;
      ranked.reserve(complete.size());
      for (auto c : complete) {
        const Instance& ref = d.instances[c];
        double dist2 = 0;
        for (std::size_t a = 0; a < kFeatureCount; ++a) {
          if (!inst.features[a]) continue;
          double diff = normalize_value(*inst.features[a], stats, a) - normalize_value(ref.at(a), stats, a);
          dist2 += diff * diff;
        }
        ranked.emplace_back(dist2, c);
      }
      std::stable_sort(ranked.begin(), ranked.end(),
                       [](const auto& x, const auto& y) { return x.first < y.first; });
      for (std::size_t a = 0; a < kFeatureCount; ++a) {
        if (inst.features[a]) continue;
        double sum = 0;
        for (std::size_t j = 0; j < policy.k; ++j) sum += d.instances[ranked[j].second].at(a);
        inst.features[a] = sum / static_cast<double>(policy.k);
      }
    }
    return out;
  }
}

// ---------------------------------------------------------------------------
// Downsampling

/// Keeps the first instance of each epoch-aligned bucket of `period_s`
/// seconds. `timestamps` (unix ms) run parallel to the instances and must be
/// nondecreasing.
inline Dataset downsample_period(const Dataset& d, std::int64_t period_s, const std::vector<TimestampMs>& timestamps) {
  if (timestamps.size() != d.size()) throw std::invalid_argument("timestamps must parallel the instances");
  if (period_s <= 0) throw std::invalid_argument("period must be positive");
  Dataset out;
  const std::int64_t period_ms = period_s * 1000;
  std::optional<std::int64_t> last_bucket;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i > 0 && timestamps[i] < timestamps[i - 1]) throw std::invalid_argument("timestamps must be nondecreasing");
    // floor division keeps buckets epoch-aligned for negative times too
    std::int64_t t = timestamps[i];
    std::int64_t bucket = t / period_ms - ((t % period_ms != 0 && t < 0) ? 1 : 0);
    if (last_bucket != bucket) {
      out.instances.push_back(d.instances[i]);
      last_bucket = bucket;
    }
  }
  return out;
}

}  // namespace irrigation
