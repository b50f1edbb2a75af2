#pragma once

// Adversarial channel between the control master and field outstations.
//
// Two attack families are modeled:
//   - MODP: man-in-the-middle packet modification. Value-level transforms
//     (ADD_OFFSET, MULTIPLY, NULLIFY) decode the application fragment, mutate
//     analog values at or after a configured payload offset, and splice the
//     re-encoded bytes back into the wire image. Raw transforms (INVERT_BITS,
//     REPLACE_RANDOM) rewrite the payload bytes directly. With fixup_crc the
//     attacker recomputes link CRCs so the tampered frame passes validation;
//     without it the original CRC fields are left in place and the receiver
//     rejects the frame.
//   - DoS: drop every frame crossing the channel for a target association
//     during the attack window.
//
// All transforms are length preserving, which is what makes the in-place
// splice well defined. Every datagram whose bytes actually change produces a
// PerturbationRecord; misconfigured attacks (offset beyond the payload,
// unparseable traffic) produce a warning record and leave the bytes alone.

#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vvsim/dnp3.hpp"
#include "vvsim/util.hpp"

namespace vvsim::attack {

enum class Direction { ANY, MASTER_TO_OUTSTATION, OUTSTATION_TO_MASTER };
enum class Transform { ADD_OFFSET, MULTIPLY, NULLIFY, INVERT_BITS, REPLACE_RANDOM };
enum class DosMode { DROP_ALL };

struct ModpAttack {
  std::string name = "modp";
  uint16_t outstation = 0;  // 0 matches any association
  Direction direction = Direction::ANY;
  std::optional<dnp3::AppFunction> match_function;
  size_t start_byte = 0;  // offset into the application payload
  Transform transform = Transform::ADD_OFFSET;
  double operand = 0.0;   // offset for ADD_OFFSET, factor for MULTIPLY
  uint64_t seed = 0;      // REPLACE_RANDOM byte stream
  double t_start_s = 0.0;
  double t_end_s = 0.0;   // active over [t_start_s, t_end_s)
  bool fixup_crc = true;
};

struct DosAttack {
  std::string name = "dos";
  uint16_t outstation = 0;  // 0 matches any association
  DosMode mode = DosMode::DROP_ALL;
  double t_start_s = 0.0;
  double t_end_s = 0.0;
};

struct PerturbationRecord {
  int64_t t_us = 0;
  std::string attack;
  uint16_t outstation = 0;
  bool from_master = true;
  std::vector<uint8_t> original;
  std::vector<uint8_t> perturbed;
  size_t bytes_changed = 0;
  std::vector<double> values_before;  // decoded analog values, when decodable
  std::vector<double> values_after;
  bool warning = false;
  std::string note;
};

namespace detail {

// Maps every application-payload byte of a wire datagram (one or more link
// frames) to its absolute wire offset, skipping link headers, transport
// octets and CRC fields.
struct WireMap {
  bool ok = false;
  std::vector<uint8_t> fragment;
  std::vector<size_t> wire_offset;                    // per fragment byte
  std::vector<std::pair<size_t, size_t>> frame_spans; // [begin, end) per frame
};

inline WireMap map_wire(const std::vector<uint8_t>& wire) {
  WireMap wm;
  size_t pos = 0;
  while (pos < wire.size()) {
    if (pos + 10 > wire.size() || wire[pos] != dnp3::kSync0 ||
        wire[pos + 1] != dnp3::kSync1)
      return wm;
    const size_t len = wire[pos + 2];
    if (len < 5) return wm;
    const size_t user_len = len - 5;
    const size_t n_blocks = (user_len + 15) / 16;
    const size_t frame_size = 10 + user_len + 2 * n_blocks;
    if (pos + frame_size > wire.size()) return wm;
    for (size_t u = 0; u < user_len; ++u) {
      const size_t off = pos + 10 + (u / 16) * 18 + (u % 16);
      if (u == 0) continue;  // transport octet
      wm.fragment.push_back(wire[off]);
      wm.wire_offset.push_back(off);
    }
    wm.frame_spans.emplace_back(pos, pos + frame_size);
    pos += frame_size;
  }
  wm.ok = !wm.frame_spans.empty();
  return wm;
}

inline void recompute_crcs(std::vector<uint8_t>& wire,
                           std::pair<size_t, size_t> span) {
  const size_t pos = span.first;
  const uint16_t hcrc = dnp3::crc16({wire.data() + pos, 8});
  wire[pos + 8] = static_cast<uint8_t>(hcrc & 0xFF);
  wire[pos + 9] = static_cast<uint8_t>(hcrc >> 8);
  const size_t user_len = static_cast<size_t>(wire[pos + 2]) - 5;
  size_t done = 0;
  size_t at = pos + 10;
  while (done < user_len) {
    const size_t chunk = std::min<size_t>(16, user_len - done);
    const uint16_t crc = dnp3::crc16({wire.data() + at, chunk});
    wire[at + chunk] = static_cast<uint8_t>(crc & 0xFF);
    wire[at + chunk + 1] = static_cast<uint8_t>(crc >> 8);
    at += chunk + 2;
    done += chunk;
  }
}

inline std::vector<double> decoded_values(const std::vector<uint8_t>& fragment) {
  std::vector<double> vals;
  std::vector<dnp3::ValueLocation> locs = dnp3::locate_analog_values(fragment);
  for (const auto& loc : locs) {
    if (loc.offset + 4 > fragment.size()) continue;
    float f;
    std::memcpy(&f, fragment.data() + loc.offset, 4);
    vals.push_back(static_cast<double>(f));
  }
  return vals;
}

}  // namespace detail

struct ChannelStats {
  uint64_t datagrams_sent = 0;
  uint64_t delivered = 0;
  uint64_t dropped = 0;
  uint64_t mutated = 0;
  uint64_t warnings = 0;
};

// Stateless apart from counters and the random-replacement ordinal; the
// co-simulation owns scheduling and delivers the processed bytes after the
// configured latency.
class Channel {
 public:
  struct Outcome {
    bool dropped = false;
    std::string dropped_by;
    std::vector<uint8_t> bytes;
    std::vector<PerturbationRecord> records;
  };

  int64_t latency_us = 50'000;
  std::vector<ModpAttack> modp;
  std::vector<DosAttack> dos;

  const ChannelStats& stats() const { return stats_; }

  Outcome process(int64_t t_us, uint16_t outstation, bool from_master,
                  std::vector<uint8_t> wire) {
    stats_.datagrams_sent++;
    Outcome out;
    out.bytes = std::move(wire);
    for (const DosAttack& d : dos) {
      if (!window_covers(d.t_start_s, d.t_end_s, t_us)) continue;
      if (d.outstation != 0 && d.outstation != outstation) continue;
      out.dropped = true;
      out.dropped_by = d.name;
      stats_.dropped++;
      return out;
    }
    for (const ModpAttack& m : modp) {
      if (!window_covers(m.t_start_s, m.t_end_s, t_us)) continue;
      if (m.outstation != 0 && m.outstation != outstation) continue;
      if (m.direction == Direction::MASTER_TO_OUTSTATION && !from_master) continue;
      if (m.direction == Direction::OUTSTATION_TO_MASTER && from_master) continue;
      apply_modp(m, t_us, outstation, from_master, out);
    }
    stats_.delivered++;
    for (const auto& r : out.records)
      if (!r.warning) {
        stats_.mutated++;
        break;
      }
    return out;
  }

 private:
  static bool window_covers(double t0_s, double t1_s, int64_t t_us) {
    return t_us >= s_to_us(t0_s) && t_us < s_to_us(t1_s);
  }

  void warn(const ModpAttack& m, int64_t t_us, uint16_t outstation,
            bool from_master, const std::vector<uint8_t>& bytes,
            std::string note, Outcome& out) {
    PerturbationRecord rec;
    rec.t_us = t_us;
    rec.attack = m.name;
    rec.outstation = outstation;
    rec.from_master = from_master;
    rec.original = bytes;
    rec.perturbed = bytes;
    rec.warning = true;
    rec.note = std::move(note);
    stats_.warnings++;
    out.records.push_back(std::move(rec));
  }

  void apply_modp(const ModpAttack& m, int64_t t_us, uint16_t outstation,
                  bool from_master, Outcome& out) {
    detail::WireMap wm = detail::map_wire(out.bytes);
    if (!wm.ok) {
      warn(m, t_us, outstation, from_master, out.bytes,
           "target bytes do not parse as link frames", out);
      return;
    }
    if (m.match_function) {
      if (wm.fragment.size() < 2 ||
          wm.fragment[1] != static_cast<uint8_t>(*m.match_function))
        return;  // filter miss: not this attack's traffic
    }
    if (m.start_byte >= wm.fragment.size()) {
      warn(m, t_us, outstation, from_master, out.bytes,
           "start_byte " + std::to_string(m.start_byte) +
               " is beyond the " + std::to_string(wm.fragment.size()) +
               " byte payload",
           out);
      return;
    }

    PerturbationRecord rec;
    rec.t_us = t_us;
    rec.attack = m.name;
    rec.outstation = outstation;
    rec.from_master = from_master;
    rec.original = out.bytes;

    std::vector<uint8_t> frag = wm.fragment;
    switch (m.transform) {
      case Transform::ADD_OFFSET:
      case Transform::MULTIPLY:
      case Transform::NULLIFY: {
        const auto locs = dnp3::locate_analog_values(frag);
        for (const auto& loc : locs) {
          if (loc.offset < m.start_byte || loc.offset + 4 > frag.size())
            continue;
          float v;
          std::memcpy(&v, frag.data() + loc.offset, 4);
          double nv = 0.0;
          if (m.transform == Transform::ADD_OFFSET)
            nv = static_cast<double>(v) + m.operand;
          else if (m.transform == Transform::MULTIPLY)
            nv = static_cast<double>(v) * m.operand;
          const float nf = static_cast<float>(nv);
          rec.values_before.push_back(static_cast<double>(v));
          rec.values_after.push_back(static_cast<double>(nf));
          std::memcpy(frag.data() + loc.offset, &nf, 4);
        }
        break;
      }
      case Transform::INVERT_BITS: {
        rec.values_before = detail::decoded_values(frag);
        for (size_t i = m.start_byte; i < frag.size(); ++i) frag[i] ^= 0xFF;
        rec.values_after = detail::decoded_values(frag);
        break;
      }
      case Transform::REPLACE_RANDOM: {
        rec.values_before = detail::decoded_values(frag);
        std::mt19937_64 rng(mix64(m.seed ^ mix64(replace_ordinal_++)));
        for (size_t i = m.start_byte; i < frag.size(); ++i)
          frag[i] = static_cast<uint8_t>(rng() & 0xFF);
        rec.values_after = detail::decoded_values(frag);
        break;
      }
    }

    // Splice mutated payload bytes back into the wire image.
    std::vector<uint8_t> wire = out.bytes;
    for (size_t i = 0; i < frag.size(); ++i)
      if (frag[i] != wm.fragment[i]) wire[wm.wire_offset[i]] = frag[i];
    if (wire == out.bytes) return;  // identity transform: nothing happened
    if (m.fixup_crc)
      for (const auto& span : wm.frame_spans) detail::recompute_crcs(wire, span);

    rec.perturbed = wire;
    size_t changed = 0;
    for (size_t i = 0; i < wire.size(); ++i)
      if (wire[i] != rec.original[i]) ++changed;
    rec.bytes_changed = changed;
    out.bytes = std::move(wire);
    out.records.push_back(std::move(rec));
  }

  ChannelStats stats_;
  uint64_t replace_ordinal_ = 0;
};

inline Direction direction_from_string(const std::string& s) {
  if (s == "any") return Direction::ANY;
  if (s == "master_to_outstation") return Direction::MASTER_TO_OUTSTATION;
  if (s == "outstation_to_master") return Direction::OUTSTATION_TO_MASTER;
  throw ParseError("unknown direction '" + s + "'");
}

inline std::string to_string(Direction d) {
  switch (d) {
    case Direction::MASTER_TO_OUTSTATION: return "master_to_outstation";
    case Direction::OUTSTATION_TO_MASTER: return "outstation_to_master";
    default: return "any";
  }
}

inline Transform transform_from_string(const std::string& s) {
  if (s == "ADD_OFFSET") return Transform::ADD_OFFSET;
  if (s == "MULTIPLY") return Transform::MULTIPLY;
  if (s == "NULLIFY") return Transform::NULLIFY;
  if (s == "INVERT_BITS") return Transform::INVERT_BITS;
  if (s == "REPLACE_RANDOM") return Transform::REPLACE_RANDOM;
  throw ParseError("unknown transform '" + s + "'");
}

inline std::string to_string(Transform t) {
  switch (t) {
    case Transform::ADD_OFFSET: return "ADD_OFFSET";
    case Transform::MULTIPLY: return "MULTIPLY";
    case Transform::NULLIFY: return "NULLIFY";
    case Transform::INVERT_BITS: return "INVERT_BITS";
    default: return "REPLACE_RANDOM";
  }
}

inline dnp3::AppFunction function_from_string(const std::string& s) {
  if (s == "CONFIRM") return dnp3::AppFunction::CONFIRM;
  if (s == "READ") return dnp3::AppFunction::READ;
  if (s == "DIRECT_OPERATE") return dnp3::AppFunction::DIRECT_OPERATE;
  if (s == "RESPONSE") return dnp3::AppFunction::RESPONSE;
  throw ParseError("unknown function '" + s + "'");
}

inline std::string to_string(dnp3::AppFunction f) {
  switch (f) {
    case dnp3::AppFunction::CONFIRM: return "CONFIRM";
    case dnp3::AppFunction::READ: return "READ";
    case dnp3::AppFunction::DIRECT_OPERATE: return "DIRECT_OPERATE";
    default: return "RESPONSE";
  }
}

inline ModpAttack modp_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  ModpAttack m;
  m.name = j.value("name", std::string("modp"));
  m.outstation = static_cast<uint16_t>(j.value("outstation", 0));
  m.direction = direction_from_string(j.value("direction", std::string("any")));
  if (j.contains("match_function"))
    m.match_function = function_from_string(j.at("match_function").get<std::string>());
  m.start_byte = j.value("start_byte", size_t{0});
  if (!j.contains("transform")) throw ParseError(where + ": missing field 'transform'");
  m.transform = transform_from_string(j.at("transform").get<std::string>());
  m.operand = j.value("operand", 0.0);
  m.seed = j.value("seed", uint64_t{0});
  if (!j.contains("window") || !j.at("window").is_array() || j.at("window").size() != 2)
    throw ParseError(where + ": 'window' must be [t_start_s, t_end_s]");
  m.t_start_s = j.at("window").at(0).get<double>();
  m.t_end_s = j.at("window").at(1).get<double>();
  if (m.t_end_s < m.t_start_s) throw ParseError(where + ": window ends before it starts");
  m.fixup_crc = j.value("fixup_crc", true);
  return m;
}

inline DosAttack dos_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ParseError(where + ": expected an object");
  DosAttack d;
  d.name = j.value("name", std::string("dos"));
  d.outstation = static_cast<uint16_t>(j.value("outstation", 0));
  const std::string mode = j.value("mode", std::string("DROP_ALL"));
  if (mode != "DROP_ALL") throw ParseError(where + ": unknown mode '" + mode + "'");
  if (!j.contains("window") || !j.at("window").is_array() || j.at("window").size() != 2)
    throw ParseError(where + ": 'window' must be [t_start_s, t_end_s]");
  d.t_start_s = j.at("window").at(0).get<double>();
  d.t_end_s = j.at("window").at(1).get<double>();
  if (d.t_end_s < d.t_start_s) throw ParseError(where + ": window ends before it starts");
  return d;
}

inline nlohmann::ordered_json modp_to_json(const ModpAttack& m) {
  nlohmann::ordered_json j;
  j["name"] = m.name;
  j["outstation"] = m.outstation;
  j["direction"] = to_string(m.direction);
  if (m.match_function) j["match_function"] = to_string(*m.match_function);
  j["start_byte"] = m.start_byte;
  j["transform"] = to_string(m.transform);
  j["operand"] = m.operand;
  j["seed"] = m.seed;
  j["window"] = {m.t_start_s, m.t_end_s};
  j["fixup_crc"] = m.fixup_crc;
  return j;
}

inline nlohmann::ordered_json dos_to_json(const DosAttack& d) {
  nlohmann::ordered_json j;
  j["name"] = d.name;
  j["outstation"] = d.outstation;
  j["mode"] = "DROP_ALL";
  j["window"] = {d.t_start_s, d.t_end_s};
  return j;
}

}  // namespace vvsim::attack
