#pragma once

// Helpers and independent oracles shared by the unit and acceptance tests.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "irrigation/dataprep.hpp"
#include "irrigation/detail/random.hpp"
#include "irrigation/mqtt/codec.hpp"

namespace testing_support {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("irrigation-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Random packets

inline std::string random_level(irrigation::detail::Rng& rng) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789_-";
  std::string s;
  std::size_t len = 1 + rng.below(8);
  for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
  return s;
}

inline std::string random_topic(irrigation::detail::Rng& rng) {
  std::string t = random_level(rng);
  std::size_t levels = rng.below(4);
  for (std::size_t i = 0; i < levels; ++i) t += "/" + random_level(rng);
  return t;
}

inline std::string random_filter(irrigation::detail::Rng& rng) {
  std::string f;
  std::size_t levels = 1 + rng.below(4);
  for (std::size_t i = 0; i < levels; ++i) {
    if (i > 0) f += "/";
    double p = rng.uniform();
    if (i + 1 == levels && p < 0.15) {
      f += "#";
    } else if (p < 0.35) {
      f += "+";
    } else {
      f += random_level(rng);
    }
  }
  return f;
}

inline std::string random_bytes(irrigation::detail::Rng& rng, std::size_t max_len) {
  std::string s;
  std::size_t len = rng.below(max_len + 1);
  for (std::size_t i = 0; i < len; ++i) s.push_back(static_cast<char>(rng.below(256)));
  return s;
}

/// Any packet of the supported subset. Publish payloads occasionally exceed
/// 127 and 16383 bytes so multi-byte length fields are exercised.
inline irrigation::mqtt::Packet random_packet(irrigation::detail::Rng& rng) {
  using namespace irrigation::mqtt;
  switch (rng.below(8)) {
    case 0:
      return Connect{random_level(rng), static_cast<std::uint16_t>(rng.below(65536))};
    case 1:
      return ConnAck{static_cast<std::uint8_t>(rng.below(6))};
    case 2: {
      std::size_t max = rng.chance(0.05) ? 20000 : (rng.chance(0.2) ? 400 : 60);
      return Publish{random_topic(rng), random_bytes(rng, max)};
    }
    case 3: {
      Subscribe s{static_cast<std::uint16_t>(rng.below(65536)), {}};
      std::size_t n = 1 + rng.below(4);
      for (std::size_t i = 0; i < n; ++i) s.filters.push_back(random_filter(rng));
      return s;
    }
    case 4: {
      SubAck a{static_cast<std::uint16_t>(rng.below(65536)), {}};
      std::size_t n = 1 + rng.below(4);
      for (std::size_t i = 0; i < n; ++i) a.codes.push_back(rng.chance(0.8) ? 0x00 : 0x80);
      return a;
    }
    case 5:
      return PingReq{};
    case 6:
      return PingResp{};
    default:
      return Disconnect{};
  }
}

// ---------------------------------------------------------------------------
// Brute-force split oracle
//
// Enumerates every midpoint between consecutive distinct values, scores it
// from scratch, and applies the C4.5 selection rule: among candidates with
// gain >= mean positive gain, the highest gain ratio; lowest threshold on ties.

struct OracleSplit {
  double threshold;
  double gain;
  double gain_ratio;
};

inline double oracle_entropy(const std::vector<double>& counts) {
  double n = 0;
  for (double c : counts) n += c;
  double h = 0;
  for (double c : counts) {
    if (c > 0) h -= (c / n) * std::log2(c / n);
  }
  return h;
}

inline std::optional<OracleSplit> brute_force_split(const std::vector<double>& x, const std::vector<int>& y,
                                                    int min_leaf = 1) {
  std::vector<double> values = x;
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> parent(2, 0);
  for (int label : y) parent[label] += 1;
  const double n = static_cast<double>(x.size());

  std::vector<OracleSplit> all;
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    double t = (values[i] + values[i + 1]) / 2;
    std::vector<double> left(2, 0), right(2, 0);
    for (std::size_t k = 0; k < x.size(); ++k) (x[k] <= t ? left : right)[y[k]] += 1;
    double nl = left[0] + left[1];
    double nr = right[0] + right[1];
    if (nl < min_leaf || nr < min_leaf) continue;
    double gain = oracle_entropy(parent) - nl / n * oracle_entropy(left) - nr / n * oracle_entropy(right);
    double split_info = oracle_entropy({nl, nr});
    all.push_back({t, gain, gain / split_info});
  }
  double sum = 0;
  int positive = 0;
  for (const auto& c : all) {
    if (c.gain > 1e-12) {
      sum += c.gain;
      ++positive;
    }
  }
  if (positive == 0) return std::nullopt;
  double mean = sum / positive;
  std::optional<OracleSplit> best;
  for (const auto& c : all) {
    if (c.gain <= 1e-12 || c.gain < mean - 1e-12) continue;
    if (!best || c.gain_ratio > best->gain_ratio + 1e-12) best = c;
  }
  return best;
}

/// Random dataset over `attributes` columns (others zero), small integer
/// values so ties and duplicates occur.
inline irrigation::Dataset random_small_dataset(irrigation::detail::Rng& rng, std::size_t n) {
  irrigation::Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    double a = static_cast<double>(rng.below(6));
    double b = static_cast<double>(rng.below(10)) / 2.0;
    d.instances.push_back(irrigation::make_instance(a, b, 0, 0, static_cast<int>(rng.below(2))));
  }
  return d;
}

}  // namespace testing_support
