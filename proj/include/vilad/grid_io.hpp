#pragma once

// Portable attention grid format (.agrid), all integers little-endian:
//   "AGRD" | version u16 = 1 | role u8 | frame u8 | width u32 | height u32 | width*height binary32 row-major

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vilad/binary_io.hpp"
#include "vilad/costmap.hpp"

namespace vilad {

inline constexpr std::uint16_t kGridFormatVersion = 1;
inline constexpr std::size_t kGridHeaderBytes = 16;

inline std::vector<std::uint8_t> encode_grid(const AttentionMap& map) {
  binary::Writer w;
  w.tag("AGRD");
  w.u16(kGridFormatVersion);
  w.u8(static_cast<std::uint8_t>(map.role()));
  w.u8(static_cast<std::uint8_t>(map.frame()));
  w.u32(static_cast<std::uint32_t>(map.width()));
  w.u32(static_cast<std::uint32_t>(map.height()));
  for (const float v : map.values()) w.f32(v);
  return w.take();
}

inline AttentionMap decode_grid(std::span<const std::uint8_t> bytes) {
  binary::Reader r(bytes);
  r.expect_tag("AGRD", "grid header");
  const std::size_t version_at = r.offset();
  if (r.u16("format version") != kGridFormatVersion) throw FormatError("unsupported grid format version", version_at);
  const std::size_t role_at = r.offset();
  const std::uint8_t role = r.u8("role");
  if (role > 3) throw FormatError("unknown map role " + std::to_string(role), role_at);
  const std::size_t frame_at = r.offset();
  const std::uint8_t frame = r.u8("frame");
  if (frame > 1) throw FormatError("unknown map frame " + std::to_string(frame), frame_at);
  const std::size_t width_at = r.offset();
  const std::uint32_t width = r.u32("width");
  if (width == 0) throw FormatError("grid width is zero", width_at);
  const std::size_t height_at = r.offset();
  const std::uint32_t height = r.u32("height");
  if (height == 0) throw FormatError("grid height is zero", height_at);

  const std::uint64_t count = std::uint64_t{width} * height;
  if (r.remaining() < count * 4) throw FormatError("truncated grid payload", bytes.size());
  std::vector<float> values(count);
  for (auto& v : values) {
    const std::size_t at = r.offset();
    v = r.f32("grid value");
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("grid value outside [0,1]", at);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after grid payload", r.offset());
  return {width, height, std::move(values), static_cast<MapRole>(role), static_cast<MapFrame>(frame)};
}

inline void save_grid(const AttentionMap& map, const std::filesystem::path& path) {
  binary::write_file(path, encode_grid(map));
}

inline AttentionMap load_grid(const std::filesystem::path& path) { return decode_grid(binary::read_file(path)); }

}  // namespace vilad
