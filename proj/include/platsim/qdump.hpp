#pragma once

// Binary artifacts of a finished run: the final Q tables and the recorded
// action tail. Both use a fixed 32-byte little-endian header so a reader can
// validate shape before touching the payload.
//
// Q table file:
//   offset  0  8 bytes  magic "PLATSIMQ"
//   offset  8  u32      format version, currently 1
//   offset 12  u32      grid resolution m
//   offset 16  u32      state count, must equal m^4
//   offset 20  u32      action count, must equal m^2
//   offset 24  u32      platform index the table belongs to
//   offset 28  u32      action encoding: 0 = buyer-major (a = ib * m + is)
//   offset 32  f64[]    state-major cells, n_states * n_actions of them
//
// Tail trace file:
//   offset  0  8 bytes  magic "PLATSIMT"
//   offset  8  u32      format version, currently 1
//   offset 12  u32      grid resolution m
//   offset 16  u64      recorded step count
//   offset 24  u64      reserved, written as 0
//   offset 32  u16[]    joint actions, two per step (platform 0 then 1)
//
// Multi-byte fields are serialized explicitly byte by byte, so the files are
// portable regardless of host endianness.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "platsim/errors.hpp"
#include "platsim/qlearn.hpp"

namespace platsim {

inline constexpr char kQdumpMagic[8] = {'P', 'L', 'A', 'T', 'S', 'I', 'M', 'Q'};
inline constexpr char kTailMagic[8] = {'P', 'L', 'A', 'T', 'S', 'I', 'M', 'T'};
inline constexpr std::uint32_t kDumpVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t take_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t take_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof()) throw IoError("read failed: " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out.good()) throw IoError("write failed: " + path);
}

}  // namespace detail

inline void write_qdump(const std::string& path, const QTable& q, int platform) {
  std::string bytes;
  bytes.reserve(32 + q.v.size() * 8);
  bytes.append(kQdumpMagic, 8);
  detail::put_u32(bytes, kDumpVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(q.m));
  detail::put_u32(bytes, q.n_states());
  detail::put_u32(bytes, static_cast<std::uint32_t>(q.n_actions()));
  detail::put_u32(bytes, static_cast<std::uint32_t>(platform));
  detail::put_u32(bytes, 0);  // buyer-major action encoding
  for (double d : q.v) detail::put_u64(bytes, std::bit_cast<std::uint64_t>(d));
  detail::write_file_bytes(path, bytes);
}

inline QTable read_qdump(const std::string& path, int* platform = nullptr) {
  std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() < 32 || std::memcmp(bytes.data(), kQdumpMagic, 8) != 0)
    throw IoError("not a Q table dump: " + path);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (detail::take_u32(p + 8) != kDumpVersion)
    throw IoError("unsupported Q dump version in " + path);
  std::uint32_t m = detail::take_u32(p + 12);
  std::uint32_t n_states = detail::take_u32(p + 16);
  std::uint32_t n_actions = detail::take_u32(p + 20);
  if (m < 2 || m > 255 || n_states != m * m * m * m || n_actions != m * m)
    throw IoError("inconsistent Q dump header in " + path);
  if (platform) *platform = static_cast<int>(detail::take_u32(p + 24));
  std::size_t cells = static_cast<std::size_t>(n_states) * n_actions;
  if (bytes.size() != 32 + cells * 8)
    throw IoError("truncated Q dump: " + path);
  QTable q = QTable::zeros(static_cast<int>(m));
  for (std::size_t i = 0; i < cells; ++i)
    q.v[i] = std::bit_cast<double>(detail::take_u64(p + 32 + i * 8));
  return q;
}

inline void write_tail(const std::string& path,
                       const std::vector<std::array<std::uint16_t, 2>>& tail, int m) {
  std::string bytes;
  bytes.reserve(32 + tail.size() * 4);
  bytes.append(kTailMagic, 8);
  detail::put_u32(bytes, kDumpVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(m));
  detail::put_u64(bytes, tail.size());
  detail::put_u64(bytes, 0);
  for (const auto& step : tail) {
    bytes.push_back(static_cast<char>(step[0] & 0xff));
    bytes.push_back(static_cast<char>(step[0] >> 8));
    bytes.push_back(static_cast<char>(step[1] & 0xff));
    bytes.push_back(static_cast<char>(step[1] >> 8));
  }
  detail::write_file_bytes(path, bytes);
}

inline std::vector<std::array<std::uint16_t, 2>> read_tail(const std::string& path,
                                                           int* m = nullptr) {
  std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() < 32 || std::memcmp(bytes.data(), kTailMagic, 8) != 0)
    throw IoError("not a tail trace: " + path);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (detail::take_u32(p + 8) != kDumpVersion)
    throw IoError("unsupported tail trace version in " + path);
  if (m) *m = static_cast<int>(detail::take_u32(p + 12));
  std::uint64_t n = detail::take_u64(p + 16);
  if (bytes.size() != 32 + n * 4) throw IoError("truncated tail trace: " + path);
  std::vector<std::array<std::uint16_t, 2>> tail(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const unsigned char* q = p + 32 + i * 4;
    tail[i][0] = static_cast<std::uint16_t>(q[0] | (q[1] << 8));
    tail[i][1] = static_cast<std::uint16_t>(q[2] | (q[3] << 8));
  }
  return tail;
}

}  // namespace platsim
