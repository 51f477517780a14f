#pragma once

// F32T container:
//   "F32T" | version 0x01 | ndim (u8) | ndim x u64 LE extents | f32 LE payload
// Payload is row-major IEEE-754 binary32; doubles are rounded to nearest-even.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>

#include "bgattack/errors.hpp"
#include "bgattack/io/file.hpp"
#include "bgattack/tensor.hpp"

namespace bgattack::io {

inline constexpr std::string_view kF32tMagic = "F32T";
inline constexpr std::uint8_t kF32tVersion = 0x01;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_le(std::string_view in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline std::string encode_f32t(const Tensor& t) {
  if (t.rank() == 0 || t.rank() > 255) throw ContractError("F32T needs 1..255 dimensions");
  std::string out;
  out.reserve(6 + 8 * t.rank() + 4 * t.size());
  out.append(kF32tMagic);
  out.push_back(static_cast<char>(kF32tVersion));
  out.push_back(static_cast<char>(t.rank()));
  for (auto d : t.dims()) detail::put_u64(out, d);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float f = static_cast<float>(t[i]);
    if (!std::isfinite(f)) {
      throw ContractError("F32T payload must be finite in binary32 (element " + std::to_string(i) + ")");
    }
    detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline Tensor decode_f32t(std::string_view in) {
  if (in.size() < 4) throw FormatError("truncated F32T header", in.size());
  if (in.substr(0, 4) != kF32tMagic) throw FormatError("bad F32T magic", 0);
  if (in.size() < 6) throw FormatError("truncated F32T header", in.size());
  if (static_cast<std::uint8_t>(in[4]) != kF32tVersion) {
    throw FormatError("unsupported F32T version " + std::to_string(static_cast<unsigned char>(in[4])), 4);
  }
  const std::size_t ndim = static_cast<unsigned char>(in[5]);
  if (ndim == 0) throw FormatError("F32T tensor must have at least one dimension", 5);

  std::size_t at = 6;
  Shape dims;
  std::uint64_t volume = 1;
  for (std::size_t k = 0; k < ndim; ++k, at += 8) {
    if (in.size() < at + 8) throw FormatError("truncated F32T extents", in.size());
    const std::uint64_t d = detail::get_le(in, at, 8);
    if (d == 0) throw FormatError("F32T extent must be positive", at);
    if (volume > std::numeric_limits<std::uint64_t>::max() / d / 4) {
      throw FormatError("F32T extents overflow", at);
    }
    volume *= d;
    dims.push_back(static_cast<std::size_t>(d));
  }
  const std::size_t expected = at + 4 * static_cast<std::size_t>(volume);
  if (in.size() < expected) throw FormatError("truncated F32T payload", in.size());
  if (in.size() > expected) throw FormatError("trailing bytes after F32T payload", expected);

  std::vector<double> data(static_cast<std::size_t>(volume));
  for (std::size_t i = 0; i < data.size(); ++i, at += 4) {
    const float f = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(in, at, 4)));
    if (!std::isfinite(f)) throw FormatError("non-finite F32T value", at);
    data[i] = f;
  }
  return Tensor(std::move(dims), std::move(data));
}

inline void write_f32t(const std::filesystem::path& path, const Tensor& t) {
  write_file_atomic(path, encode_f32t(t));
}

inline Tensor read_f32t(const std::filesystem::path& path) { return decode_f32t(read_file(path)); }

}  // namespace bgattack::io
