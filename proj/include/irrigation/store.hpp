#pragma once

// Append-only telemetry store.
//
// Layout: <dir>/readings-<seq>.log and <dir>/decisions-<seq>.log, where <seq>
// is the sequence number of the first record in the segment. Each line is one
// JSON object terminated by '\n'. A segment rolls over once it reaches
// `segment_bytes`. Sequence numbers are shared by both record kinds.
//
// Durability: every append is issued as a single write(2) of the whole line;
// with SyncPolicy::kEveryAppend it is followed by fsync before append returns.
// A line without its terminating newline is a torn write: readers ignore it
// and the next writer truncates it away on open.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "irrigation/detail/format.hpp"
#include "irrigation/label_oracle.hpp"
#include "irrigation/telemetry.hpp"

namespace irrigation {

class StoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RecordKind { kReadings, kDecisions };

inline const char* to_string(RecordKind k) { return k == RecordKind::kReadings ? "readings" : "decisions"; }

enum class SyncPolicy {
  kEveryAppend,  // fsync before append returns
  kOsBuffered,   // rely on the page cache; survives process crashes only
};

struct StoreOptions {
  std::uint64_t segment_bytes = 64ull << 20;
  SyncPolicy sync = SyncPolicy::kEveryAppend;
};

template <typename Record>
struct Stored {
  std::uint64_t seq = 0;
  Record record;
};

using StoredReading = Stored<SensorReading>;
using StoredDecision = Stored<DecisionRecord>;

enum class LabelSource { kOracle, kDecisions };

struct CsvExport {
  std::string csv;
  std::size_t rows = 0;
  std::size_t skipped_rows = 0;  // readings with no decision inside the join window
};

inline constexpr const char* kTrainingCsvHeader = "humidity,temperature,soil_moisture,is_raining,label";
inline constexpr TimestampMs kDecisionJoinWindowMs = 60'000;

namespace detail {

struct SegmentFile {
  std::uint64_t first_seq;
  std::filesystem::path path;
};

inline std::vector<SegmentFile> list_segments(const std::filesystem::path& dir, RecordKind kind) {
  std::vector<SegmentFile> out;
  if (!std::filesystem::exists(dir)) return out;
  std::string prefix = std::string(to_string(kind)) + "-";
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    if (!name.starts_with(prefix) || !name.ends_with(".log")) continue;
    std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - 4);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) continue;
    out.push_back({std::stoull(digits), entry.path()});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first_seq < b.first_seq; });
  return out;
}

/// Complete lines of a segment; a trailing fragment without '\n' is skipped.
inline std::vector<std::string> read_complete_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError("cannot open " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (true) {
    std::size_t nl = content.find('\n', start);
    if (nl == std::string::npos) break;
    if (nl > start) lines.push_back(content.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

inline std::string format_csv_row(const SensorReading& r, int label) {
  return shortest(r.humidity_pct) + "," + shortest(r.temperature_c) + "," + std::to_string(r.soil_moisture_raw) + "," +
         std::to_string(r.is_raining) + "," + std::to_string(label);
}

}  // namespace detail

/// Read-only view of a store directory. Safe to use from other processes
/// while a writer appends: every query re-reads the segment files and skips
/// torn tails.
class StoreReader {
 public:
  explicit StoreReader(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& directory() const { return dir_; }

  /// Readings with from <= timestamp < to, ordered by (timestamp, seq).
  std::vector<StoredReading> query_readings(TimestampMs from, TimestampMs to) const {
    return query<SensorReading>(RecordKind::kReadings, from, to, reading_from_json);
  }

  std::vector<StoredDecision> query_decisions(TimestampMs from, TimestampMs to) const {
    return query<DecisionRecord>(RecordKind::kDecisions, from, to, decision_from_json);
  }

  /// Training CSV for readings in [from, to). With LabelSource::kDecisions
  /// each reading takes the label of the nearest decision for the same node
  /// within 60 s (earlier wins a tie); readings without one are skipped and
  /// counted.
  CsvExport export_training_csv(TimestampMs from, TimestampMs to, LabelSource source) const {
    CsvExport out;
    out.csv = std::string(kTrainingCsvHeader) + "\n";
    auto readings = query_readings(from, to);
    std::vector<StoredDecision> decisions;
    if (source == LabelSource::kDecisions) {
      constexpr auto kMin = std::numeric_limits<TimestampMs>::min();
      constexpr auto kMax = std::numeric_limits<TimestampMs>::max();
      TimestampMs lo = from < kMin + kDecisionJoinWindowMs ? kMin : from - kDecisionJoinWindowMs;
      TimestampMs hi = to > kMax - kDecisionJoinWindowMs ? kMax : to + kDecisionJoinWindowMs;
      decisions = query_decisions(lo, hi);
    }
    for (const auto& [seq, r] : readings) {
      std::optional<int> label;
      if (source == LabelSource::kOracle) {
        label = label_oracle(r);
      } else {
        TimestampMs best = kDecisionJoinWindowMs + 1;
        for (const auto& [dseq, d] : decisions) {
          if (d.reading.node_id != r.node_id) continue;
          TimestampMs gap = d.timestamp > r.timestamp ? d.timestamp - r.timestamp : r.timestamp - d.timestamp;
          if (gap < best) {
            best = gap;
            label = d.decision;
          }
        }
      }
      if (!label) {
        ++out.skipped_rows;
        continue;
      }
      out.csv += detail::format_csv_row(r, *label) + "\n";
      ++out.rows;
    }
    return out;
  }

 protected:
  std::filesystem::path dir_;

 private:
  template <typename Record, typename Parse>
  std::vector<Stored<Record>> query(RecordKind kind, TimestampMs from, TimestampMs to, Parse parse) const {
    std::vector<Stored<Record>> out;
    if (from >= to) return out;
    for (const auto& seg : detail::list_segments(dir_, kind)) {
      for (const auto& line : detail::read_complete_lines(seg.path)) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw StoreError("corrupt record in " + seg.path.string());
        TimestampMs ts = j.at("ts").get<TimestampMs>();
        if (ts < from || ts >= to) continue;
        out.push_back({j.at("seq").get<std::uint64_t>(), parse(j)});
      }
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      if (a.record.timestamp != b.record.timestamp) return a.record.timestamp < b.record.timestamp;
      return a.seq < b.seq;
    });
    return out;
  }
};

/// The single writer. Queries are inherited from StoreReader.
class TelemetryStore : public StoreReader {
 public:
  explicit TelemetryStore(std::filesystem::path dir, StoreOptions options = {})
      : StoreReader(std::move(dir)), options_(options) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw StoreError("cannot create store directory " + dir_.string() + ": " + ec.message());
    recover(RecordKind::kReadings);
    recover(RecordKind::kDecisions);
  }

  ~TelemetryStore() {
    for (auto& [kind, w] : writers_) {
      if (w.fd >= 0) ::close(w.fd);
    }
  }

  TelemetryStore(const TelemetryStore&) = delete;
  TelemetryStore& operator=(const TelemetryStore&) = delete;

  std::uint64_t append(const SensorReading& r) {
    validate(r);
    std::lock_guard lock(mutex_);
    std::uint64_t seq = next_seq_;
    nlohmann::json j = to_json(r);
    j["seq"] = seq;
    write_line(RecordKind::kReadings, seq, j.dump());
    ++next_seq_;
    return seq;
  }

  std::uint64_t append(const DecisionRecord& d) {
    validate(d);
    std::lock_guard lock(mutex_);
    std::uint64_t seq = next_seq_;
    nlohmann::json j = to_json(d);
    j["seq"] = seq;
    write_line(RecordKind::kDecisions, seq, j.dump());
    ++next_seq_;
    return seq;
  }

  std::uint64_t next_sequence() const {
    std::lock_guard lock(mutex_);
    return next_seq_;
  }

 private:
  struct Writer {
    int fd = -1;
    std::uint64_t bytes = 0;
  };

  void recover(RecordKind kind) {
    auto segments = detail::list_segments(dir_, kind);
    for (const auto& seg : segments) {
      for (const auto& line : detail::read_complete_lines(seg.path)) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("seq")) throw StoreError("corrupt record in " + seg.path.string());
        next_seq_ = std::max(next_seq_, j["seq"].get<std::uint64_t>() + 1);
      }
    }
    if (segments.empty()) return;
    // Reopen the newest segment for appending, dropping any torn tail.
    const auto& last = segments.back();
    std::uint64_t size = std::filesystem::file_size(last.path);
    std::uint64_t intact = 0;
    {
      std::ifstream in(last.path, std::ios::binary);
      std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      auto nl = content.rfind('\n');
      intact = nl == std::string::npos ? 0 : nl + 1;
    }
    if (intact != size) std::filesystem::resize_file(last.path, intact);
    int fd = ::open(last.path.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
    if (fd < 0) throw StoreError("cannot open " + last.path.string() + ": " + std::strerror(errno));
    writers_[kind] = Writer{fd, intact};
  }

  void write_line(RecordKind kind, std::uint64_t seq, std::string line) {
    line.push_back('\n');
    Writer& w = writers_[kind];
    if (w.fd < 0 || w.bytes + line.size() > options_.segment_bytes) roll(kind, seq, w);
    const char* data = line.data();
    std::size_t left = line.size();
    while (left > 0) {
      ssize_t n = ::write(w.fd, data, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw StoreError(std::string("write failed: ") + std::strerror(errno));
      }
      data += n;
      left -= static_cast<std::size_t>(n);
    }
    if (options_.sync == SyncPolicy::kEveryAppend && ::fsync(w.fd) != 0) {
      throw StoreError(std::string("fsync failed: ") + std::strerror(errno));
    }
    w.bytes += line.size();
  }

  void roll(RecordKind kind, std::uint64_t first_seq, Writer& w) {
    // An empty segment is reused rather than leaving a run of empty files.
    if (w.fd >= 0 && w.bytes == 0) return;
    if (w.fd >= 0) ::close(w.fd);
    char name[64];
    std::snprintf(name, sizeof(name), "%s-%010llu.log", to_string(kind), static_cast<unsigned long long>(first_seq));
    auto path = dir_ / name;
    w.fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (w.fd < 0) throw StoreError("cannot create " + path.string() + ": " + std::strerror(errno));
    w.bytes = 0;
  }

  StoreOptions options_;
  mutable std::mutex mutex_;
  std::uint64_t next_seq_ = 1;
  std::map<RecordKind, Writer> writers_;
};

}  // namespace irrigation
