#pragma once

// MQTT 3.1.1 subset codec: CONNECT, CONNACK, PUBLISH (QoS 0), SUBSCRIBE,
// SUBACK, PINGREQ, PINGRESP and DISCONNECT.
//
// All functions here are pure and safe to call from any thread.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace irrigation::mqtt {

using Bytes = std::vector<std::uint8_t>;

/// Largest value the remaining-length field can carry (four 7-bit groups).
inline constexpr std::uint32_t kMaxRemainingLength = 268'435'455;

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Connect {
  std::string client_id;
  std::uint16_t keep_alive = 60;  // seconds, 0 disables
  bool operator==(const Connect&) const = default;
};

struct ConnAck {
  std::uint8_t return_code = 0;
  bool operator==(const ConnAck&) const = default;
};

struct Publish {
  std::string topic;
  std::string payload;  // opaque bytes
  bool operator==(const Publish&) const = default;
};

struct Subscribe {
  std::uint16_t packet_id = 1;
  std::vector<std::string> filters;
  bool operator==(const Subscribe&) const = default;
};

struct SubAck {
  std::uint16_t packet_id = 1;
  std::vector<std::uint8_t> codes;
  bool operator==(const SubAck&) const = default;
};

struct PingReq {
  bool operator==(const PingReq&) const = default;
};
struct PingResp {
  bool operator==(const PingResp&) const = default;
};
struct Disconnect {
  bool operator==(const Disconnect&) const = default;
};

using Packet =
    std::variant<Connect, ConnAck, Publish, Subscribe, SubAck, PingReq, PingResp, Disconnect>;

enum class PacketType : std::uint8_t {
  kConnect = 1,
  kConnAck = 2,
  kPublish = 3,
  kSubscribe = 8,
  kSubAck = 9,
  kPingReq = 12,
  kPingResp = 13,
  kDisconnect = 14,
};

// ---------------------------------------------------------------------------
// Topic names and filters

/// A topic name is non-empty, carries no wildcard characters and no NUL.
inline bool is_valid_topic(std::string_view topic) {
  if (topic.empty() || topic.size() > 0xFFFF) return false;
  for (char c : topic) {
    if (c == '+' || c == '#' || c == '\0') return false;
  }
  return true;
}

/// '#' may only appear as the whole final level, '+' only as a whole level.
inline bool is_valid_filter(std::string_view filter) {
  if (filter.empty() || filter.size() > 0xFFFF) return false;
  std::size_t level_start = 0;
  for (std::size_t i = 0; i <= filter.size(); ++i) {
    if (i < filter.size() && filter[i] != '/') {
      if (filter[i] == '\0') return false;
      continue;
    }
    std::string_view level = filter.substr(level_start, i - level_start);
    if (level.find_first_of("+#") != std::string_view::npos && level.size() != 1) return false;
    if (level == "#" && i != filter.size()) return false;
    level_start = i + 1;
  }
  return true;
}

/// Level-by-level match. '+' matches exactly one level, '#' matches the
/// remaining levels including none ("a/#" matches "a").
inline bool topic_matches(std::string_view filter, std::string_view topic) {
  std::size_t f = 0;
  std::size_t t = 0;
  while (true) {
    std::size_t f_end = filter.find('/', f);
    if (f_end == std::string_view::npos) f_end = filter.size();
    std::string_view f_level = filter.substr(f, f_end - f);
    if (f_level == "#") return true;

    std::size_t t_end = topic.find('/', t);
    if (t_end == std::string_view::npos) t_end = topic.size();
    std::string_view t_level = topic.substr(t, t_end - t);

    if (f_level != "+" && f_level != t_level) return false;

    bool f_last = f_end == filter.size();
    bool t_last = t_end == topic.size();
    if (f_last || t_last) {
      if (f_last && t_last) return true;
      // "a/#" also matches "a": the filter continues with exactly "/#".
      return t_last && filter.substr(f_end) == "/#";
    }
    f = f_end + 1;
    t = t_end + 1;
  }
}

// ---------------------------------------------------------------------------
// Remaining-length varint

inline std::size_t remaining_length_size(std::uint32_t n) {
  if (n <= 127) return 1;
  if (n <= 16'383) return 2;
  if (n <= 2'097'151) return 3;
  if (n <= kMaxRemainingLength) return 4;
  throw CodecError("remaining length exceeds 268435455");
}

inline void encode_remaining_length(std::uint32_t n, Bytes& out) {
  if (n > kMaxRemainingLength) throw CodecError("remaining length exceeds 268435455");
  do {
    std::uint8_t byte = n % 128;
    n /= 128;
    if (n > 0) byte |= 0x80;
    out.push_back(byte);
  } while (n > 0);
}

inline Bytes encode_remaining_length(std::uint32_t n) {
  Bytes out;
  encode_remaining_length(n, out);
  return out;
}

struct LengthField {
  std::uint32_t value;
  std::size_t size;  // bytes occupied by the field
};

/// nullopt when the field is not yet complete; throws on a fifth
/// continuation byte.
inline std::optional<LengthField> decode_remaining_length(std::span<const std::uint8_t> in) {
  std::uint32_t value = 0;
  std::uint32_t multiplier = 1;
  for (std::size_t i = 0; i < 4; ++i) {
    if (i >= in.size()) return std::nullopt;
    value += (in[i] & 0x7F) * multiplier;
    if ((in[i] & 0x80) == 0) return LengthField{value, i + 1};
    multiplier *= 128;
  }
  throw CodecError("malformed remaining length: more than 4 bytes");
}

// ---------------------------------------------------------------------------
// Encoding

namespace detail {

inline void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

inline void put_string(Bytes& out, std::string_view s) {
  if (s.size() > 0xFFFF) throw CodecError("string longer than 65535 bytes");
  put_u16(out, static_cast<std::uint16_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

inline Bytes frame(std::uint8_t first_byte, const Bytes& body) {
  if (body.size() > kMaxRemainingLength) throw CodecError("packet exceeds maximum remaining length");
  Bytes out;
  out.reserve(body.size() + 5);
  out.push_back(first_byte);
  encode_remaining_length(static_cast<std::uint32_t>(body.size()), out);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

struct Encoder {
  Bytes operator()(const Connect& p) const {
    Bytes body;
    put_string(body, "MQTT");
    body.push_back(0x04);  // protocol level 3.1.1
    body.push_back(0x02);  // clean session
    put_u16(body, p.keep_alive);
    put_string(body, p.client_id);
    return frame(0x10, body);
  }
  Bytes operator()(const ConnAck& p) const {
    if (p.return_code > 5) throw CodecError("connack return code out of range");
    return frame(0x20, Bytes{0x00, p.return_code});
  }
  Bytes operator()(const Publish& p) const {
    if (!is_valid_topic(p.topic)) throw CodecError("invalid publish topic");
    if (p.topic.size() + 2 + p.payload.size() > kMaxRemainingLength) {
      throw CodecError("publish payload too large");
    }
    Bytes body;
    body.reserve(p.topic.size() + 2 + p.payload.size());
    put_string(body, p.topic);
    body.insert(body.end(), p.payload.begin(), p.payload.end());
    return frame(0x30, body);
  }
  Bytes operator()(const Subscribe& p) const {
    if (p.filters.empty()) throw CodecError("subscribe without filters");
    Bytes body;
    put_u16(body, p.packet_id);
    for (const auto& f : p.filters) {
      if (!is_valid_filter(f)) throw CodecError("invalid topic filter: " + f);
      put_string(body, f);
      body.push_back(0x00);  // requested QoS 0
    }
    return frame(0x82, body);
  }
  Bytes operator()(const SubAck& p) const {
    Bytes body;
    put_u16(body, p.packet_id);
    body.insert(body.end(), p.codes.begin(), p.codes.end());
    return frame(0x90, body);
  }
  Bytes operator()(const PingReq&) const { return {0xC0, 0x00}; }
  Bytes operator()(const PingResp&) const { return {0xD0, 0x00}; }
  Bytes operator()(const Disconnect&) const { return {0xE0, 0x00}; }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> body) : body_(body) {}

  std::uint8_t u8() {
    need(1);
    return body_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    auto v = static_cast<std::uint16_t>((body_[pos_] << 8) | body_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::string string() {
    std::size_t n = u16();
    return raw(n);
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(body_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return body_.size() - pos_; }
  bool done() const { return pos_ == body_.size(); }

 private:
  void need(std::size_t n) const {
    if (body_.size() - pos_ < n) throw CodecError("packet body shorter than its fields");
  }
  std::span<const std::uint8_t> body_;
  std::size_t pos_ = 0;
};

inline void expect_flags(std::uint8_t flags, std::uint8_t want, const char* what) {
  if (flags != want) throw CodecError(std::string("invalid fixed-header flags for ") + what);
}

inline Packet decode_body(std::uint8_t type, std::uint8_t flags, std::span<const std::uint8_t> body) {
  Reader r(body);
  switch (static_cast<PacketType>(type)) {
    case PacketType::kConnect: {
      expect_flags(flags, 0, "CONNECT");
      if (r.string() != "MQTT") throw CodecError("unsupported protocol name");
      if (r.u8() != 0x04) throw CodecError("unsupported protocol level");
      std::uint8_t connect_flags = r.u8();
      if (connect_flags & 0x01) throw CodecError("reserved connect flag set");
      Connect c;
      c.keep_alive = r.u16();
      c.client_id = r.string();
      // Will, username and password are outside the supported subset.
      if (!r.done()) throw CodecError("unsupported CONNECT payload fields");
      return c;
    }
    case PacketType::kConnAck: {
      expect_flags(flags, 0, "CONNACK");
      if (body.size() != 2) throw CodecError("CONNACK must have length 2");
      r.u8();
      ConnAck a{r.u8()};
      if (a.return_code > 5) throw CodecError("connack return code out of range");
      return a;
    }
    case PacketType::kPublish: {
      if (flags & 0x06) throw CodecError("only QoS 0 publishes are supported");
      Publish p;
      p.topic = r.string();
      if (!is_valid_topic(p.topic)) throw CodecError("invalid publish topic");
      p.payload = r.raw(r.remaining());
      return p;
    }
    case PacketType::kSubscribe: {
      expect_flags(flags, 0x02, "SUBSCRIBE");
      Subscribe s;
      s.packet_id = r.u16();
      while (!r.done()) {
        s.filters.push_back(r.string());
        if (!is_valid_filter(s.filters.back())) throw CodecError("invalid topic filter");
        if (r.u8() > 2) throw CodecError("invalid requested QoS");
      }
      if (s.filters.empty()) throw CodecError("subscribe without filters");
      return s;
    }
    case PacketType::kSubAck: {
      expect_flags(flags, 0, "SUBACK");
      SubAck a;
      a.packet_id = r.u16();
      while (!r.done()) a.codes.push_back(r.u8());
      return a;
    }
    case PacketType::kPingReq:
      expect_flags(flags, 0, "PINGREQ");
      if (!body.empty()) throw CodecError("PINGREQ carries no body");
      return PingReq{};
    case PacketType::kPingResp:
      expect_flags(flags, 0, "PINGRESP");
      if (!body.empty()) throw CodecError("PINGRESP carries no body");
      return PingResp{};
    case PacketType::kDisconnect:
      expect_flags(flags, 0, "DISCONNECT");
      if (!body.empty()) throw CodecError("DISCONNECT carries no body");
      return Disconnect{};
  }
  throw CodecError("unknown packet type " + std::to_string(type));
}

}  // namespace detail

/// Standard MQTT byte encoding of `p`. Throws CodecError when `p` breaks a
/// packet invariant or exceeds the maximum remaining length.
inline Bytes encode_packet(const Packet& p) { return std::visit(detail::Encoder{}, p); }

struct Decoded {
  Packet packet;
  std::size_t consumed = 0;
};

/// Decodes the packet at the start of `in`. Returns nullopt when more bytes
/// are needed; throws CodecError on malformed input. Trailing bytes belonging
/// to the next packet are left untouched and reported through `consumed`.
inline std::optional<Decoded> decode_packet(std::span<const std::uint8_t> in) {
  if (in.empty()) return std::nullopt;
  std::uint8_t type = in[0] >> 4;
  std::uint8_t flags = in[0] & 0x0F;
  switch (type) {
    case 1: case 2: case 3: case 8: case 9: case 12: case 13: case 14:
      break;
    default:
      throw CodecError("unknown packet type " + std::to_string(type));
  }
  auto length = decode_remaining_length(in.subspan(1));
  if (!length) return std::nullopt;
  std::size_t header = 1 + length->size;
  if (in.size() - header < length->value) return std::nullopt;
  auto body = in.subspan(header, length->value);
  return Decoded{detail::decode_body(type, flags, body), header + length->value};
}

/// Accumulates stream chunks and yields whole packets in arrival order.
class StreamDecoder {
 public:
  void feed(std::span<const std::uint8_t> chunk) { buffer_.insert(buffer_.end(), chunk.begin(), chunk.end()); }

  /// Next complete packet, or nullopt until more bytes arrive.
  std::optional<Packet> next() {
    auto decoded = decode_packet(std::span<const std::uint8_t>(buffer_).subspan(offset_));
    if (!decoded) {
      compact();
      return std::nullopt;
    }
    offset_ += decoded->consumed;
    return std::move(decoded->packet);
  }

  std::size_t buffered() const { return buffer_.size() - offset_; }

 private:
  void compact() {
    if (offset_ == 0) return;
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
    offset_ = 0;
  }
  Bytes buffer_;
  std::size_t offset_ = 0;
};

inline const char* packet_name(const Packet& p) {
  static constexpr const char* kNames[] = {"CONNECT", "CONNACK",  "PUBLISH",  "SUBSCRIBE",
                                           "SUBACK",  "PINGREQ", "PINGRESP", "DISCONNECT"};
  return kNames[p.index()];
}

}  // namespace irrigation::mqtt
