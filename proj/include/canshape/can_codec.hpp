#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "canshape/error.hpp"

namespace canshape {

inline constexpr std::uint32_t kMaxStandardAid = (1u << 11) - 1;
inline constexpr std::uint32_t kMaxExtendedAid = (1u << 29) - 1;
inline constexpr std::uint32_t kCanErrorFlag = 0x20000000u;
inline constexpr std::size_t kMaxPayload = 8;
inline constexpr int kPairsPerFrame = 4;

/// One timestamped CAN 2.0 data frame. Timestamps are seconds since capture
/// start with microsecond resolution in the text formats.
struct CanFrame {
  double timestamp = 0.0;
  std::uint32_t aid = 0;
  bool extended = false;
  std::uint8_t length = 0;
  std::array<std::uint8_t, kMaxPayload> data{};
  std::string channel;

  std::span<const std::uint8_t> payload() const { return {data.data(), length}; }

  bool operator==(const CanFrame&) const = default;
};

inline CanFrame make_frame(double timestamp, std::uint32_t aid,
                           std::span<const std::uint8_t> payload,
                           std::string channel = "can0", bool extended = false) {
  if (payload.size() > kMaxPayload) {
    throw Error(ErrorKind::PayloadTooLong, "payload of " + std::to_string(payload.size()) + " bytes");
  }
  CanFrame f;
  f.timestamp = timestamp;
  f.aid = aid;
  f.extended = extended || aid > kMaxStandardAid;
  f.length = static_cast<std::uint8_t>(payload.size());
  std::copy(payload.begin(), payload.end(), f.data.begin());
  f.channel = std::move(channel);
  return f;
}

/// Key of one byte-pair signal: which AID, and which of the four
/// consecutive byte pairs of the zero-padded payload.
struct BytePairId {
  std::uint32_t aid = 0;
  std::uint8_t pair_index = 0;

  auto operator<=>(const BytePairId&) const = default;
};

struct BytePairSample {
  BytePairId id;
  std::uint16_t value = 0;

  bool operator==(const BytePairSample&) const = default;
};

namespace detail {

inline int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

inline std::uint32_t parse_hex_u32(std::string_view s, ErrorKind on_error, std::string_view what) {
  if (s.size() >= 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) s.remove_prefix(2);
  if (s.empty() || s.size() > 8) {
    throw Error(on_error, std::string(what) + " '" + std::string(s) + "'");
  }
  std::uint32_t v = 0;
  for (char c : s) {
    const int d = hex_digit(c);
    if (d < 0) throw Error(ErrorKind::BadHex, std::string(what) + " '" + std::string(s) + "'");
    v = (v << 4) | static_cast<std::uint32_t>(d);
  }
  return v;
}

inline double parse_timestamp(std::string_view s) {
  double t = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, t);
  if (ec != std::errc{} || ptr != end || !std::isfinite(t) || t < 0.0) {
    throw Error(ErrorKind::MalformedLine, "bad timestamp '" + std::string(s) + "'");
  }
  return t;
}

inline void parse_payload(std::string_view hex, CanFrame& frame) {
  if (hex.size() > 2 * kMaxPayload) {
    throw Error(ErrorKind::PayloadTooLong, std::to_string(hex.size()) + " hex digits");
  }
  if (hex.size() % 2 != 0) {
    throw Error(ErrorKind::BadHex, "odd number of hex digits in '" + std::string(hex) + "'");
  }
  frame.length = static_cast<std::uint8_t>(hex.size() / 2);
  frame.data.fill(0);
  for (std::size_t i = 0; i < frame.length; ++i) {
    const int hi = hex_digit(hex[2 * i]);
    const int lo = hex_digit(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorKind::BadHex, "payload '" + std::string(hex) + "'");
    frame.data[i] = static_cast<std::uint8_t>(hi * 16 + lo);
  }
}

inline void set_aid(std::string_view aid_hex, CanFrame& frame) {
  std::string_view digits = aid_hex;
  if (digits.size() >= 2 && digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'X')) digits.remove_prefix(2);
  frame.aid = parse_hex_u32(aid_hex, ErrorKind::MalformedLine, "arbitration id");
  frame.extended = digits.size() > 3;
  if (!frame.extended && frame.aid > kMaxStandardAid) {
    throw Error(ErrorKind::MalformedLine, "standard arbitration id out of range '" + std::string(aid_hex) + "'");
  }
}

}  // namespace detail

inline std::string to_string(const BytePairId& id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03X:%u", id.aid, static_cast<unsigned>(id.pair_index));
  return buf;
}

inline BytePairId parse_byte_pair_id(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos || colon + 2 != text.size()) {
    throw Error(ErrorKind::Schema, "byte pair id '" + std::string(text) + "' is not AID:INDEX");
  }
  BytePairId id;
  id.aid = detail::parse_hex_u32(text.substr(0, colon), ErrorKind::Schema, "byte pair aid");
  const char idx = text[colon + 1];
  if (idx < '0' || idx > '3') {
    throw Error(ErrorKind::Schema, "byte pair index out of range in '" + std::string(text) + "'");
  }
  id.pair_index = static_cast<std::uint8_t>(idx - '0');
  return id;
}

enum class LogFormat { Candump, Csv };

inline LogFormat parse_log_format(std::string_view name) {
  if (name == "candump") return LogFormat::Candump;
  if (name == "csv") return LogFormat::Csv;
  throw Error(ErrorKind::InvalidArgument, "unknown log format '" + std::string(name) + "'");
}

enum class RecordKind { Data, Remote, ErrorFrame, Skip };

struct ParsedRecord {
  RecordKind kind = RecordKind::Skip;
  CanFrame frame;
};

/// Parses one candump record "(TIMESTAMP) CHANNEL AID#HEXDATA".
/// Remote ("AID#R") and error frames (CAN_ERR_FLAG set) are classified, not rejected.
inline ParsedRecord parse_candump_record(std::string_view line) {
  line = detail::trim(line);
  if (line.empty() || line.front() == '#') return {};
  if (line.front() != '(') throw Error(ErrorKind::MalformedLine, "expected '(' in '" + std::string(line) + "'");
  const auto close = line.find(')');
  if (close == std::string_view::npos) throw Error(ErrorKind::MalformedLine, "unterminated timestamp");

  ParsedRecord rec;
  rec.frame.timestamp = detail::parse_timestamp(line.substr(1, close - 1));

  std::string_view rest = detail::trim(line.substr(close + 1));
  const auto space = rest.find_first_of(" \t");
  if (space == std::string_view::npos) throw Error(ErrorKind::MalformedLine, "missing channel or frame");
  rec.frame.channel = std::string(rest.substr(0, space));
  std::string_view body = detail::trim(rest.substr(space + 1));
  if (body.find_first_of(" \t") != std::string_view::npos) {
    throw Error(ErrorKind::MalformedLine, "trailing fields in '" + std::string(line) + "'");
  }

  const auto hash = body.find('#');
  if (hash == std::string_view::npos) throw Error(ErrorKind::MalformedLine, "missing '#' separator");
  detail::set_aid(body.substr(0, hash), rec.frame);
  std::string_view data = body.substr(hash + 1);
  if (!data.empty() && data.front() == '#') {
    throw Error(ErrorKind::MalformedLine, "CAN FD frames are not supported");
  }
  if (!data.empty() && (data.front() == 'R' || data.front() == 'r')) {
    rec.kind = RecordKind::Remote;
    return rec;
  }
  if (rec.frame.extended && (rec.frame.aid & kCanErrorFlag)) {
    rec.kind = RecordKind::ErrorFrame;
    return rec;
  }
  if (rec.frame.aid > kMaxExtendedAid) {
    throw Error(ErrorKind::MalformedLine, "arbitration id exceeds 29 bits");
  }
  detail::parse_payload(data, rec.frame);
  rec.kind = RecordKind::Data;
  return rec;
}

/// Parses one CSV record "timestamp,aid_hex,data_hex". A header row whose
/// first field is not numeric is skipped.
inline ParsedRecord parse_csv_record(std::string_view line) {
  line = detail::trim(line);
  if (line.empty() || line.front() == '#') return {};
  const auto c1 = line.find(',');
  if (c1 == std::string_view::npos) throw Error(ErrorKind::MalformedLine, "expected 3 CSV fields");
  const auto c2 = line.find(',', c1 + 1);
  if (c2 == std::string_view::npos) throw Error(ErrorKind::MalformedLine, "expected 3 CSV fields");
  if (line.find(',', c2 + 1) != std::string_view::npos) throw Error(ErrorKind::MalformedLine, "too many CSV fields");

  const std::string_view ts = detail::trim(line.substr(0, c1));
  if (ts == "timestamp") return {};

  ParsedRecord rec;
  rec.frame.timestamp = detail::parse_timestamp(ts);
  detail::set_aid(detail::trim(line.substr(c1 + 1, c2 - c1 - 1)), rec.frame);
  if (rec.frame.aid > kMaxExtendedAid) throw Error(ErrorKind::MalformedLine, "arbitration id exceeds 29 bits");
  std::string_view data = detail::trim(line.substr(c2 + 1));
  if (!data.empty() && (data.front() == 'R' || data.front() == 'r')) {
    rec.kind = RecordKind::Remote;
    return rec;
  }
  detail::parse_payload(data, rec.frame);
  rec.kind = RecordKind::Data;
  return rec;
}

inline ParsedRecord parse_record(std::string_view line, LogFormat format) {
  return format == LogFormat::Candump ? parse_candump_record(line) : parse_csv_record(line);
}

/// Decodes a single data-frame line, detecting candump vs CSV by the leading '('.
inline CanFrame parse_log_line(std::string_view line) {
  const std::string_view t = detail::trim(line);
  const LogFormat format = (!t.empty() && t.front() == '(') ? LogFormat::Candump : LogFormat::Csv;
  ParsedRecord rec = parse_record(t, format);
  if (rec.kind != RecordKind::Data) {
    throw Error(ErrorKind::MalformedLine, "not a data frame: '" + std::string(t) + "'");
  }
  return std::move(rec.frame);
}

inline std::string format_log_line(const CanFrame& frame, LogFormat format = LogFormat::Candump) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  char ts[64];
  std::snprintf(ts, sizeof ts, "%.6f", frame.timestamp);
  char aid[16];
  std::snprintf(aid, sizeof aid, frame.extended ? "%08X" : "%03X", frame.aid);
  std::string hex;
  hex.reserve(2 * frame.length);
  for (std::uint8_t b : frame.payload()) {
    hex.push_back(kHex[b >> 4]);
    hex.push_back(kHex[b & 0xF]);
  }
  if (format == LogFormat::Csv) return std::string(ts) + "," + aid + "," + hex;
  const std::string& chan = frame.channel.empty() ? std::string("can0") : frame.channel;
  return "(" + std::string(ts) + ") " + chan + " " + aid + "#" + hex;
}

/// Splits the zero-padded 8-byte payload into four big-endian 16-bit values.
inline std::array<BytePairSample, kPairsPerFrame> decompose(const CanFrame& frame) {
  std::array<BytePairSample, kPairsPerFrame> out{};
  for (int i = 0; i < kPairsPerFrame; ++i) {
    const std::size_t hi = 2 * static_cast<std::size_t>(i);
    const std::uint8_t b0 = hi < frame.length ? frame.data[hi] : 0;
    const std::uint8_t b1 = hi + 1 < frame.length ? frame.data[hi + 1] : 0;
    out[i].id = BytePairId{frame.aid, static_cast<std::uint8_t>(i)};
    out[i].value = static_cast<std::uint16_t>((b0 << 8) | b1);
  }
  return out;
}

struct LogReadResult {
  std::vector<CanFrame> frames;
  std::size_t remote_dropped = 0;
  std::size_t error_dropped = 0;
  std::size_t lines = 0;
};

/// Reads a whole log in one pass. Frames come back sorted by timestamp
/// (stable, so equal timestamps keep file order).
inline LogReadResult read_log(std::istream& in, LogFormat format) {
  LogReadResult out;
  std::string line;
  while (std::getline(in, line)) {
    ++out.lines;
    ParsedRecord rec;
    try {
      rec = parse_record(line, format);
    } catch (const Error& e) {
      throw Error(e.kind(), "line " + std::to_string(out.lines) + ": " + e.what());
    }
    switch (rec.kind) {
      case RecordKind::Data: out.frames.push_back(std::move(rec.frame)); break;
      case RecordKind::Remote: ++out.remote_dropped; break;
      case RecordKind::ErrorFrame: ++out.error_dropped; break;
      case RecordKind::Skip: break;
    }
  }
  std::stable_sort(out.frames.begin(), out.frames.end(),
                   [](const CanFrame& a, const CanFrame& b) { return a.timestamp < b.timestamp; });
  return out;
}

}  // namespace canshape

template <>
struct std::hash<canshape::BytePairId> {
  std::size_t operator()(const canshape::BytePairId& id) const noexcept {
    return std::hash<std::uint64_t>{}((static_cast<std::uint64_t>(id.aid) << 8) | id.pair_index);
  }
};
