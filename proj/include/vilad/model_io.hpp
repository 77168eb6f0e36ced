#pragma once

// Model file (.vlad), all fields little-endian:
//   "VLAD" | version u16 = 1
//   config: patch, grid_height, grid_width, history, hidden, rank (u32 each)
//   base:   embed, embed_bias, head, head_bias                        (binary32)
//   lora:   embed.down, embed.up, head.down, head.up                   (binary32)
//   crc32 of every preceding byte (u32)

#include <filesystem>
#include <span>
#include <vector>

#include "vilad/binary_io.hpp"
#include "vilad/codec.hpp"
#include "vilad/distill.hpp"
#include "vilad/grid_io.hpp"

namespace vilad::distill {

inline constexpr std::uint16_t kModelFormatVersion = 1;

namespace detail {

inline void put(binary::Writer& w, std::span<const double> v) {
  for (const double x : v) w.f32(static_cast<float>(x));
}

inline void get(binary::Reader& r, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  for (double& x : v) x = r.f32("model parameter");
}

inline void get(binary::Reader& r, Matrix& m, std::size_t rows, std::size_t cols) {
  m.rows = rows;
  m.cols = cols;
  get(r, m.data, rows * cols);
}

}  // namespace detail

/// Frozen weights only, in file order. Used to check that training never touches them.
inline std::vector<std::uint8_t> serialize_base(const BaseWeights& base) {
  binary::Writer w;
  detail::put(w, base.embed.data);
  detail::put(w, base.embed_bias);
  detail::put(w, base.head.data);
  detail::put(w, base.head_bias);
  return w.take();
}

inline std::vector<std::uint8_t> encode_model(const AttentionModel& m) {
  binary::Writer w;
  w.tag("VLAD");
  w.u16(kModelFormatVersion);
  const auto& c = m.config;
  for (const int v : {c.patch, c.grid_height, c.grid_width, c.history, c.hidden, c.rank})
    w.u32(static_cast<std::uint32_t>(v));
  w.raw(serialize_base(m.base));
  detail::put(w, m.adapters.embed.down.data);
  detail::put(w, m.adapters.embed.up.data);
  detail::put(w, m.adapters.head.down.data);
  detail::put(w, m.adapters.head.up.data);
  const std::uint32_t crc = crc32_of(w.bytes());
  w.u32(crc);
  return w.take();
}

inline AttentionModel decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError("model file too short", bytes.size());
  const std::size_t body = bytes.size() - 4;
  binary::Reader tail(bytes.subspan(body));
  const std::uint32_t stored = tail.u32("crc");
  if (bytes.size() >= 10) {
    // Check the header first so a foreign file reports bad magic rather than a bad checksum.
    binary::Reader head(bytes);
    head.expect_tag("VLAD", "model header");
    const std::size_t at = head.offset();
    if (head.u16("version") != kModelFormatVersion) throw FormatError("unsupported model version", at);
  }
  if (crc32_of(bytes.first(body)) != stored) throw FormatError("model checksum mismatch", body);

  binary::Reader r(bytes.first(body));
  r.expect_tag("VLAD", "model header");
  r.u16("version");
  AttentionModel m;
  auto& c = m.config;
  for (int* v : {&c.patch, &c.grid_height, &c.grid_width, &c.history, &c.hidden, &c.rank}) {
    const std::size_t at = r.offset();
    const std::uint32_t x = r.u32("config");
    if (x > 1u << 20) throw FormatError("implausible model dimension", at);
    *v = static_cast<int>(x);
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), 6);
  }
  const std::size_t in = c.input_dim();
  const auto hid = static_cast<std::size_t>(c.hidden);
  const auto rank = static_cast<std::size_t>(c.rank);
  const std::size_t cells = c.cells();
  detail::get(r, m.base.embed, hid, in);
  detail::get(r, m.base.embed_bias, hid);
  detail::get(r, m.base.head, cells, hid);
  detail::get(r, m.base.head_bias, cells);
  detail::get(r, m.adapters.embed.down, rank, in);
  detail::get(r, m.adapters.embed.up, hid, rank);
  detail::get(r, m.adapters.head.down, rank, hid);
  detail::get(r, m.adapters.head.up, cells, rank);
  if (r.remaining() != 0) throw FormatError("unexpected bytes before checksum", r.offset());
  return m;
}

inline void save_model(const AttentionModel& m, const std::filesystem::path& path) {
  binary::write_file(path, encode_model(m));
}

inline AttentionModel load_model(const std::filesystem::path& path) { return decode_model(binary::read_file(path)); }

/// Runs the model and persists its attention map; this file is what the planner consumes.
inline AttentionMap export_distilled(const AttentionModel& m, const ModelInput& input,
                                     const std::filesystem::path& path) {
  AttentionMap map = forward(m, input);
  save_grid(map, path);
  return map;
}

inline AttentionMap export_distilled(const AttentionModel& m, const ImageSequence& seq,
                                     const std::filesystem::path& path) {
  return export_distilled(m, prepare_input(seq, m.config), path);
}

}  // namespace vilad::distill
