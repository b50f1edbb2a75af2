#pragma once

// DNP3 subset used by the testbed: link-layer frames with block CRCs,
// single-sequence transport segmentation, and the application messages a
// polling master and analog-point outstations exchange (READ of analog
// inputs, read RESPONSE, DIRECT_OPERATE of analog outputs, CONFIRM).
// Encoding is byte-exact for the supported object variations so captures
// can be checked against external dissectors.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "vvsim/util.hpp"

namespace vvsim::dnp3 {

// ---------------------------------------------------------------------------
// CRC-16/DNP: poly 0x3D65 reflected, init 0x0000, final complement,
// transmitted least-significant byte first. check("123456789") == 0xEA82.

namespace detail {
constexpr std::array<uint16_t, 256> make_crc_table() {
  std::array<uint16_t, 256> table{};
  constexpr uint16_t poly = 0xA6BC;  // 0x3D65 bit-reversed
  for (int n = 0; n < 256; ++n) {
    uint16_t crc = static_cast<uint16_t>(n);
    for (int k = 0; k < 8; ++k)
      crc = (crc & 1) ? static_cast<uint16_t>((crc >> 1) ^ poly)
                      : static_cast<uint16_t>(crc >> 1);
    table[static_cast<size_t>(n)] = crc;
  }
  return table;
}
inline constexpr std::array<uint16_t, 256> kCrcTable = make_crc_table();
}  // namespace detail

inline uint16_t crc16(std::span<const uint8_t> data) {
  uint16_t crc = 0x0000;
  for (uint8_t b : data)
    crc = static_cast<uint16_t>((crc >> 8) ^ detail::kCrcTable[(crc ^ b) & 0xFF]);
  return static_cast<uint16_t>(~crc & 0xFFFF);
}

// ---------------------------------------------------------------------------
// Constants and small helpers.

constexpr uint8_t kSync0 = 0x05;
constexpr uint8_t kSync1 = 0x64;
constexpr size_t kMaxUserData = 250;   // LEN byte caps at 255 = 5 + 250
constexpr size_t kMaxFrameBytes = 292; // 10 header + 250 payload + 16 block CRCs
constexpr size_t kMaxFragmentBytes = 2048;
constexpr size_t kTransportChunk = kMaxUserData - 1;  // one transport octet per frame

enum class AppFunction : uint8_t {
  CONFIRM = 0x00,
  READ = 0x01,
  DIRECT_OPERATE = 0x05,
  RESPONSE = 0x81,
};

inline bool is_known_function(uint8_t fc) {
  return fc == 0x00 || fc == 0x01 || fc == 0x05 || fc == 0x81;
}

inline const char* function_name(AppFunction f) {
  switch (f) {
    case AppFunction::CONFIRM: return "CONFIRM";
    case AppFunction::READ: return "READ";
    case AppFunction::DIRECT_OPERATE: return "DIRECT_OPERATE";
    case AppFunction::RESPONSE: return "RESPONSE";
  }
  return "?";
}

enum class Diag : uint8_t { BAD_SYNC, BAD_CRC, BAD_LENGTH, UNKNOWN_FUNCTION };

inline const char* diag_name(Diag d) {
  switch (d) {
    case Diag::BAD_SYNC: return "BAD_SYNC";
    case Diag::BAD_CRC: return "BAD_CRC";
    case Diag::BAD_LENGTH: return "BAD_LENGTH";
    case Diag::UNKNOWN_FUNCTION: return "UNKNOWN_FUNCTION";
  }
  return "?";
}

struct DecodeError {
  Diag kind;
  std::string detail;
};

template <typename T>
using Decoded = std::variant<T, DecodeError>;

namespace detail {
inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>(v >> 8));
}
inline uint16_t get_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
inline void put_f32(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  out.push_back(static_cast<uint8_t>(bits & 0xFF));
  out.push_back(static_cast<uint8_t>((bits >> 8) & 0xFF));
  out.push_back(static_cast<uint8_t>((bits >> 16) & 0xFF));
  out.push_back(static_cast<uint8_t>((bits >> 24) & 0xFF));
}
inline float get_f32(const uint8_t* p) {
  uint32_t bits = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                  (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Application layer.

// Analog point carried in an object block. `flag` is the g30v5 quality octet
// on read responses and the command-status octet on g41v3 operate blocks.
struct AnalogPoint {
  uint16_t index = 0;
  float value = 0.0f;
  uint8_t flag = 0;

  bool operator==(const AnalogPoint&) const = default;
};

// Object groups/variations in the supported subset.
constexpr uint8_t kGroupAnalogInput = 30;   // static analog input
constexpr uint8_t kGroupAnalogOutput = 41;  // analog output block
constexpr uint8_t kVarFloatWithFlag = 5;    // g30v5: flag + float32
constexpr uint8_t kVarFloatOperate = 3;     // g41v3: float32 + status
constexpr uint8_t kVarAny = 0;
constexpr uint8_t kQualAllObjects = 0x06;   // no range field
constexpr uint8_t kQualStartStop8 = 0x00;   // 1-byte start/stop, packed values
constexpr uint8_t kQualCountIndex8 = 0x17;  // 1-byte count, 1-byte index prefixes

struct ObjectBlock {
  uint8_t group = 0;
  uint8_t variation = 0;
  uint8_t qualifier = 0;
  std::vector<AnalogPoint> points;  // empty for all-objects requests

  bool operator==(const ObjectBlock&) const = default;
};

constexpr uint8_t kAppFir = 0x80;
constexpr uint8_t kAppFin = 0x40;
constexpr uint8_t kAppCon = 0x20;
constexpr uint8_t kAppUns = 0x10;
constexpr uint8_t kAppSeqMask = 0x0F;

struct ApplicationFragment {
  uint8_t app_control = kAppFir | kAppFin;
  AppFunction function = AppFunction::READ;
  uint16_t iin = 0;  // responses only
  std::vector<ObjectBlock> objects;

  uint8_t seq() const { return app_control & kAppSeqMask; }
  bool is_response() const { return function == AppFunction::RESPONSE; }

  bool operator==(const ApplicationFragment&) const = default;

  // Canonical messages used by the master/outstation exchange.
  static ApplicationFragment read_analog_inputs(uint8_t seq) {
    ApplicationFragment f;
    f.app_control = static_cast<uint8_t>(kAppFir | kAppFin | (seq & kAppSeqMask));
    f.function = AppFunction::READ;
    f.objects.push_back({kGroupAnalogInput, kVarAny, kQualAllObjects, {}});
    return f;
  }
  static ApplicationFragment analog_response(uint8_t seq, std::vector<AnalogPoint> pts,
                                             uint16_t iin = 0) {
    ApplicationFragment f;
    f.app_control = static_cast<uint8_t>(kAppFir | kAppFin | (seq & kAppSeqMask));
    f.function = AppFunction::RESPONSE;
    f.iin = iin;
    f.objects.push_back({kGroupAnalogInput, kVarFloatWithFlag, kQualStartStop8, std::move(pts)});
    return f;
  }
  static ApplicationFragment direct_operate(uint8_t seq, std::vector<AnalogPoint> pts) {
    ApplicationFragment f;
    f.app_control = static_cast<uint8_t>(kAppFir | kAppFin | (seq & kAppSeqMask));
    f.function = AppFunction::DIRECT_OPERATE;
    f.objects.push_back({kGroupAnalogOutput, kVarFloatOperate, kQualCountIndex8, std::move(pts)});
    return f;
  }
  static ApplicationFragment operate_response(uint8_t seq, std::vector<AnalogPoint> echoed,
                                              uint16_t iin = 0) {
    ApplicationFragment f;
    f.app_control = static_cast<uint8_t>(kAppFir | kAppFin | (seq & kAppSeqMask));
    f.function = AppFunction::RESPONSE;
    f.iin = iin;
    f.objects.push_back({kGroupAnalogOutput, kVarFloatOperate, kQualCountIndex8, std::move(echoed)});
    return f;
  }
  static ApplicationFragment confirm(uint8_t seq) {
    ApplicationFragment f;
    f.app_control = static_cast<uint8_t>(kAppFir | kAppFin | (seq & kAppSeqMask));
    f.function = AppFunction::CONFIRM;
    return f;
  }
};

// Byte position of an encoded analog value within a fragment, used by the
// attack layer to aim value-level transforms.
struct ValueLocation {
  size_t offset = 0;  // offset of the 4-byte float within the fragment
  uint8_t group = 0;
  uint16_t index = 0;
};

inline std::vector<uint8_t> encode_fragment(const ApplicationFragment& frag) {
  std::vector<uint8_t> out;
  out.push_back(frag.app_control);
  out.push_back(static_cast<uint8_t>(frag.function));
  if (frag.is_response()) detail::put_u16(out, frag.iin);
  for (const ObjectBlock& blk : frag.objects) {
    out.push_back(blk.group);
    out.push_back(blk.variation);
    out.push_back(blk.qualifier);
    switch (blk.qualifier) {
      case kQualAllObjects:
        break;
      case kQualStartStop8: {
        if (blk.points.empty())
          throw ValidationError("dnp3: start/stop block requires at least one point");
        uint16_t start = blk.points.front().index;
        uint16_t stop = blk.points.back().index;
        if (stop != start + blk.points.size() - 1)
          throw ValidationError("dnp3: start/stop block requires dense indices");
        if (stop > 0xFF) throw ValidationError("dnp3: index exceeds 8-bit qualifier range");
        out.push_back(static_cast<uint8_t>(start));
        out.push_back(static_cast<uint8_t>(stop));
        for (const AnalogPoint& p : blk.points) {
          out.push_back(p.flag);
          detail::put_f32(out, p.value);
        }
        break;
      }
      case kQualCountIndex8: {
        if (blk.points.size() > 0xFF) throw ValidationError("dnp3: too many points for 8-bit count");
        out.push_back(static_cast<uint8_t>(blk.points.size()));
        for (const AnalogPoint& p : blk.points) {
          if (p.index > 0xFF) throw ValidationError("dnp3: index exceeds 8-bit qualifier range");
          out.push_back(static_cast<uint8_t>(p.index));
          detail::put_f32(out, p.value);
          out.push_back(p.flag);
        }
        break;
      }
      default:
        throw ValidationError("dnp3: unsupported qualifier in encode");
    }
  }
  if (out.size() > kMaxFragmentBytes) throw ValidationError("dnp3: oversize fragment");
  return out;
}

// Decodes a fragment; optionally reports the byte offsets of analog values.
inline Decoded<ApplicationFragment> decode_fragment(std::span<const uint8_t> bytes,
                                                    std::vector<ValueLocation>* locations = nullptr) {
  if (bytes.size() < 2) return DecodeError{Diag::BAD_LENGTH, "fragment shorter than app header"};
  ApplicationFragment frag;
  frag.app_control = bytes[0];
  if (!is_known_function(bytes[1]))
    return DecodeError{Diag::UNKNOWN_FUNCTION,
                       "application function 0x" + to_hex({bytes[1]})};
  frag.function = static_cast<AppFunction>(bytes[1]);
  size_t pos = 2;
  if (frag.is_response()) {
    if (bytes.size() < 4) return DecodeError{Diag::BAD_LENGTH, "response missing IIN"};
    frag.iin = detail::get_u16(bytes.data() + 2);
    pos = 4;
  }
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 3) return DecodeError{Diag::BAD_LENGTH, "truncated object header"};
    ObjectBlock blk;
    blk.group = bytes[pos];
    blk.variation = bytes[pos + 1];
    blk.qualifier = bytes[pos + 2];
    pos += 3;
    const bool g30 = blk.group == kGroupAnalogInput;
    const bool g41 = blk.group == kGroupAnalogOutput;
    if (!g30 && !g41)
      return DecodeError{Diag::UNKNOWN_FUNCTION, "object group " + std::to_string(blk.group)};
    switch (blk.qualifier) {
      case kQualAllObjects:
        if (blk.variation != kVarAny && !(g30 && blk.variation == kVarFloatWithFlag))
          return DecodeError{Diag::UNKNOWN_FUNCTION, "unsupported variation for all-objects"};
        break;
      case kQualStartStop8: {
        if (!(g30 && blk.variation == kVarFloatWithFlag))
          return DecodeError{Diag::UNKNOWN_FUNCTION, "unsupported start/stop object"};
        if (bytes.size() - pos < 2) return DecodeError{Diag::BAD_LENGTH, "truncated range"};
        uint8_t start = bytes[pos], stop = bytes[pos + 1];
        pos += 2;
        if (stop < start) return DecodeError{Diag::BAD_LENGTH, "inverted start/stop range"};
        size_t count = static_cast<size_t>(stop - start) + 1;
        if (bytes.size() - pos < count * 5) return DecodeError{Diag::BAD_LENGTH, "truncated points"};
        for (size_t k = 0; k < count; ++k) {
          AnalogPoint p;
          p.index = static_cast<uint16_t>(start + k);
          p.flag = bytes[pos];
          if (locations) locations->push_back({pos + 1, blk.group, p.index});
          p.value = detail::get_f32(bytes.data() + pos + 1);
          pos += 5;
          blk.points.push_back(p);
        }
        break;
      }
      case kQualCountIndex8: {
        if (!(g41 && blk.variation == kVarFloatOperate))
          return DecodeError{Diag::UNKNOWN_FUNCTION, "unsupported count/index object"};
        if (bytes.size() - pos < 1) return DecodeError{Diag::BAD_LENGTH, "truncated count"};
        size_t count = bytes[pos];
        pos += 1;
        if (bytes.size() - pos < count * 6) return DecodeError{Diag::BAD_LENGTH, "truncated points"};
        for (size_t k = 0; k < count; ++k) {
          AnalogPoint p;
          p.index = bytes[pos];
          if (locations) locations->push_back({pos + 1, blk.group, p.index});
          p.value = detail::get_f32(bytes.data() + pos + 1);
          p.flag = bytes[pos + 5];
          pos += 6;
          blk.points.push_back(p);
        }
        break;
      }
      default:
        return DecodeError{Diag::UNKNOWN_FUNCTION,
                           "qualifier 0x" + to_hex({blk.qualifier})};
    }
    frag.objects.push_back(std::move(blk));
  }
  return frag;
}

inline std::vector<ValueLocation> locate_analog_values(std::span<const uint8_t> fragment_bytes) {
  std::vector<ValueLocation> locs;
  auto res = decode_fragment(fragment_bytes, &locs);
  if (std::holds_alternative<DecodeError>(res)) return {};
  return locs;
}

// ---------------------------------------------------------------------------
// Link layer.

constexpr uint8_t kCtrlDir = 0x80;
constexpr uint8_t kCtrlPrm = 0x40;
constexpr uint8_t kFcUnconfirmedUserData = 0x04;

struct LinkFrame {
  uint8_t control = 0;
  uint16_t dest = 0;
  uint16_t src = 0;
  std::vector<uint8_t> user_data;  // CRC-stripped transport + app bytes
};

inline std::vector<uint8_t> encode_link_frame(uint8_t control, uint16_t dest, uint16_t src,
                                              std::span<const uint8_t> user_data) {
  if (user_data.size() > kMaxUserData) throw ValidationError("dnp3: user data exceeds 250 bytes");
  std::vector<uint8_t> out;
  out.reserve(10 + user_data.size() + 2 * ((user_data.size() + 15) / 16));
  out.push_back(kSync0);
  out.push_back(kSync1);
  out.push_back(static_cast<uint8_t>(5 + user_data.size()));
  out.push_back(control);
  detail::put_u16(out, dest);
  detail::put_u16(out, src);
  uint16_t hcrc = crc16(std::span<const uint8_t>(out.data(), 8));
  detail::put_u16(out, hcrc);
  size_t off = 0;
  while (off < user_data.size()) {
    size_t n = std::min<size_t>(16, user_data.size() - off);
    out.insert(out.end(), user_data.begin() + off, user_data.begin() + off + n);
    uint16_t bcrc = crc16(user_data.subspan(off, n));
    detail::put_u16(out, bcrc);
    off += n;
  }
  return out;
}

// Result of scanning a byte stream for one link frame. `consumed` is how many
// bytes the caller should advance; on BAD_SYNC it skips to the next sync
// candidate so hostile streams resynchronize.
struct FrameParse {
  std::optional<LinkFrame> frame;
  std::optional<DecodeError> error;
  size_t consumed = 0;
};

inline FrameParse parse_link_frame(std::span<const uint8_t> bytes) {
  FrameParse r;
  if (bytes.empty()) {
    r.error = DecodeError{Diag::BAD_LENGTH, "empty input"};
    return r;
  }
  if (bytes.size() < 2 || bytes[0] != kSync0 || bytes[1] != kSync1) {
    size_t next = 1;
    while (next + 1 < bytes.size() && !(bytes[next] == kSync0 && bytes[next + 1] == kSync1)) ++next;
    r.error = DecodeError{Diag::BAD_SYNC, "missing 05 64 start bytes"};
    r.consumed = (next + 1 < bytes.size()) ? next : bytes.size();
    return r;
  }
  if (bytes.size() < 10) {
    r.error = DecodeError{Diag::BAD_LENGTH, "truncated link header"};
    r.consumed = bytes.size();
    return r;
  }
  uint8_t len = bytes[2];
  if (len < 5) {
    r.error = DecodeError{Diag::BAD_LENGTH, "length field below minimum"};
    r.consumed = 2;
    return r;
  }
  if (crc16(bytes.subspan(0, 8)) != detail::get_u16(bytes.data() + 8)) {
    r.error = DecodeError{Diag::BAD_CRC, "header CRC mismatch"};
    r.consumed = 2;
    return r;
  }
  size_t user_len = static_cast<size_t>(len) - 5;
  size_t blocks = (user_len + 15) / 16;
  size_t total = 10 + user_len + 2 * blocks;
  if (bytes.size() < total) {
    r.error = DecodeError{Diag::BAD_LENGTH, "frame truncated mid-block"};
    r.consumed = 2;
    return r;
  }
  LinkFrame f;
  f.control = bytes[3];
  f.dest = detail::get_u16(bytes.data() + 4);
  f.src = detail::get_u16(bytes.data() + 6);
  f.user_data.reserve(user_len);
  size_t pos = 10;
  size_t remaining = user_len;
  while (remaining > 0) {
    size_t n = std::min<size_t>(16, remaining);
    if (crc16(bytes.subspan(pos, n)) != detail::get_u16(bytes.data() + pos + n)) {
      r.error = DecodeError{Diag::BAD_CRC, "data block CRC mismatch"};
      // Skip just past the sync so a genuine frame hidden behind a truncated
      // one is still found on rescan.
      r.consumed = 2;
      return r;
    }
    f.user_data.insert(f.user_data.end(), bytes.begin() + pos, bytes.begin() + pos + n);
    pos += n + 2;
    remaining -= n;
  }
  r.frame = std::move(f);
  r.consumed = total;
  return r;
}

struct StreamParseResult {
  std::vector<LinkFrame> frames;
  std::vector<DecodeError> errors;
};

// Total over arbitrary bytes: consumes the stream, yielding every parseable
// frame and a diagnostic per unparseable region.
inline StreamParseResult parse_stream(std::span<const uint8_t> bytes) {
  StreamParseResult out;
  size_t pos = 0;
  while (pos < bytes.size()) {
    FrameParse r = parse_link_frame(bytes.subspan(pos));
    if (r.frame) out.frames.push_back(std::move(*r.frame));
    if (r.error) out.errors.push_back(std::move(*r.error));
    pos += std::max<size_t>(r.consumed, 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transport layer.

constexpr uint8_t kTransportFin = 0x80;
constexpr uint8_t kTransportFir = 0x40;
constexpr uint8_t kTransportSeqMask = 0x3F;

// Splits an application fragment into link frames (the [OP] encode path).
inline std::vector<std::vector<uint8_t>> encode_frame(const ApplicationFragment& frag,
                                                      uint16_t src, uint16_t dest,
                                                      bool from_master = true,
                                                      uint8_t transport_seq = 0) {
  std::vector<uint8_t> app = encode_fragment(frag);
  uint8_t control = static_cast<uint8_t>(kCtrlPrm | kFcUnconfirmedUserData |
                                         (from_master ? kCtrlDir : 0));
  std::vector<std::vector<uint8_t>> frames;
  size_t off = 0;
  uint8_t seq = static_cast<uint8_t>(transport_seq & kTransportSeqMask);
  bool first = true;
  while (first || off < app.size()) {
    size_t n = std::min(kTransportChunk, app.size() - off);
    std::vector<uint8_t> user;
    user.reserve(1 + n);
    uint8_t th = seq;
    if (first) th |= kTransportFir;
    if (off + n == app.size()) th |= kTransportFin;
    user.push_back(th);
    user.insert(user.end(), app.begin() + off, app.begin() + off + n);
    frames.push_back(encode_link_frame(control, dest, src, user));
    off += n;
    seq = static_cast<uint8_t>((seq + 1) & kTransportSeqMask);
    first = false;
  }
  return frames;
}

// Reassembles transport segments into application fragments. One instance per
// association and direction; segments of a fragment must arrive in order.
class TransportReassembler {
 public:
  // Feeds one link frame's user data. Returns a completed fragment's bytes
  // when the FIN segment arrives.
  std::optional<std::vector<uint8_t>> feed(std::span<const uint8_t> user_data) {
    if (user_data.empty()) return std::nullopt;
    uint8_t th = user_data[0];
    uint8_t seq = th & kTransportSeqMask;
    if (th & kTransportFir) {
      buffer_.assign(user_data.begin() + 1, user_data.end());
      expected_seq_ = static_cast<uint8_t>((seq + 1) & kTransportSeqMask);
      in_progress_ = true;
    } else {
      if (!in_progress_ || seq != expected_seq_) {
        in_progress_ = false;  // out-of-order segment, drop the partial
        return std::nullopt;
      }
      buffer_.insert(buffer_.end(), user_data.begin() + 1, user_data.end());
      expected_seq_ = static_cast<uint8_t>((seq + 1) & kTransportSeqMask);
    }
    if (buffer_.size() > kMaxFragmentBytes) {
      in_progress_ = false;
      return std::nullopt;
    }
    if (th & kTransportFin) {
      in_progress_ = false;
      return std::move(buffer_);
    }
    return std::nullopt;
  }

 private:
  std::vector<uint8_t> buffer_;
  uint8_t expected_seq_ = 0;
  bool in_progress_ = false;
};

// Decodes a complete datagram (all frames of one fragment, concatenated).
inline Decoded<ApplicationFragment> decode_frame(std::span<const uint8_t> bytes) {
  TransportReassembler reasm;
  size_t pos = 0;
  while (pos < bytes.size()) {
    FrameParse r = parse_link_frame(bytes.subspan(pos));
    if (r.error) return *r.error;
    pos += r.consumed;
    if (auto frag_bytes = reasm.feed(r.frame->user_data))
      return decode_fragment(*frag_bytes);
  }
  return DecodeError{Diag::BAD_LENGTH, "datagram ended before transport FIN"};
}

// ---------------------------------------------------------------------------
// Point database and station state machines.

struct AnalogInput {
  double value = 0.0;
  int64_t timestamp_us = 0;
};

struct PointDatabase {
  std::map<uint16_t, AnalogInput> analog_inputs;
  std::map<uint16_t, double> analog_outputs;
};

// Field-device side of one association. Holds the point database and answers
// READ / DIRECT_OPERATE requests; writes are surfaced through a callback so
// the plant can apply (and clamp) them.
class Outstation {
 public:
  Outstation() = default;
  Outstation(uint16_t address, uint16_t master_addr)
      : address_(address), master_addr_(master_addr) {}

  uint16_t address() const { return address_; }
  PointDatabase& db() { return db_; }
  const PointDatabase& db() const { return db_; }

  // Invoked for every analog output accepted by the outstation.
  std::function<void(uint16_t index, double value)> on_analog_output;

  ApplicationFragment handle(const ApplicationFragment& request) {
    switch (request.function) {
      case AppFunction::READ: {
        std::vector<AnalogPoint> pts;
        for (const auto& [idx, ai] : db_.analog_inputs)
          pts.push_back({idx, static_cast<float>(ai.value), 0x01});
        return ApplicationFragment::analog_response(request.seq(), std::move(pts));
      }
      case AppFunction::DIRECT_OPERATE: {
        std::vector<AnalogPoint> echoed;
        for (const ObjectBlock& blk : request.objects) {
          if (blk.group != kGroupAnalogOutput) continue;
          for (const AnalogPoint& p : blk.points) {
            db_.analog_outputs[p.index] = p.value;
            if (on_analog_output) on_analog_output(p.index, p.value);
            echoed.push_back({p.index, p.value, 0x00});  // status 0 = success
          }
        }
        return ApplicationFragment::operate_response(request.seq(), std::move(echoed));
      }
      default:
        return ApplicationFragment::confirm(request.seq());
    }
  }

 private:
  uint16_t address_ = 0;
  uint16_t master_addr_ = 1;
  PointDatabase db_;
};

// Master-side state for one association: request sequencing, the mirrored
// point database, and UP/DOWN tracking driven by response timeouts.
class MasterAssociation {
 public:
  MasterAssociation() = default;
  MasterAssociation(uint16_t outstation_addr) : outstation_addr_(outstation_addr) {}

  uint16_t outstation_addr() const { return outstation_addr_; }
  const PointDatabase& mirror() const { return mirror_; }
  bool down() const { return down_; }
  int64_t last_response_us() const { return last_response_us_; }

  struct Counters {
    uint64_t requests_sent = 0;
    uint64_t responses_received = 0;
    uint64_t timeouts = 0;
    uint64_t decode_failures = 0;
  };
  const Counters& counters() const { return counters_; }
  size_t pending_count() const { return pending_.size(); }
  bool has_pending() const { return !pending_.empty(); }

  ApplicationFragment make_poll(int64_t t_us) {
    auto frag = ApplicationFragment::read_analog_inputs(next_seq_);
    note_request(frag, t_us);
    return frag;
  }
  ApplicationFragment make_operate(std::vector<AnalogPoint> pts, int64_t t_us) {
    auto frag = ApplicationFragment::direct_operate(next_seq_, std::move(pts));
    note_request(frag, t_us);
    return frag;
  }

  // Returns true if the fragment answered an outstanding request.
  bool handle_response(const ApplicationFragment& resp, int64_t t_us) {
    if (!resp.is_response()) return false;
    auto it = pending_.find(resp.seq());
    if (it == pending_.end()) return false;
    if (it->second.function == AppFunction::READ) {
      for (const ObjectBlock& blk : resp.objects) {
        if (blk.group != kGroupAnalogInput) continue;
        for (const AnalogPoint& p : blk.points)
          mirror_.analog_inputs[p.index] = {static_cast<double>(p.value), t_us};
      }
    }
    pending_.erase(it);
    counters_.responses_received++;
    last_response_us_ = t_us;
    down_ = false;
    return true;
  }

  void note_decode_failure() { counters_.decode_failures++; }

  // Expires the identified request if still outstanding; marks the link DOWN.
  bool expire(uint8_t seq, int64_t sent_us) {
    auto it = pending_.find(seq & kAppSeqMask);
    if (it == pending_.end() || it->second.sent_us != sent_us) return false;
    pending_.erase(it);
    counters_.timeouts++;
    down_ = true;
    return true;
  }

 private:
  void note_request(const ApplicationFragment& frag, int64_t t_us) {
    pending_[frag.seq()] = Pending{frag.function, t_us};
    next_seq_ = static_cast<uint8_t>((next_seq_ + 1) & kAppSeqMask);
    counters_.requests_sent++;
  }

  struct Pending {
    AppFunction function;
    int64_t sent_us;
  };

  uint16_t outstation_addr_ = 0;
  uint8_t next_seq_ = 0;
  std::map<uint8_t, Pending> pending_;
  PointDatabase mirror_;
  int64_t last_response_us_ = -1;
  bool down_ = false;
  Counters counters_;
};

}  // namespace vvsim::dnp3
