// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mate/types.hpp"

namespace mate::io {

/// Four-byte file signature ("MATE", "MATP", "MATO").
using Magic = std::array<char, 4>;

inline constexpr Magic kEmbeddingMagic{'M', 'A', 'T', 'E'};
inline constexpr Magic kCheckpointMagic{'M', 'A', 'T', 'P'};
inline constexpr Magic kOptimizerMagic{'M', 'A', 'T', 'O'};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Little-endian encoder. All multi-byte values are written LE regardless of host order.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(std::string_view s);  // u32 length prefix + bytes
  void f64_array(std::span<const double> values);

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian decoder; every read past the end throws.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : data_(bytes) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  void f64_array(std::span<double> out);

  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  /// Throws unless at least `count` items of `item_size` bytes remain.
  void require(std::uint64_t count, std::uint64_t item_size, std::string_view what) const;

 private:
  std::span<const std::uint8_t> take(std::size_t n);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

/// Container framing shared by all binary artifacts:
/// magic(4) | version u32 | payload | CRC32(payload) u32.
void write_container(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
                     std::span<const std::uint8_t> payload);

/// Returns the verified payload. Errors: "bad magic", version mismatch, CRC mismatch, truncation.
std::vector<std::uint8_t> read_container(const std::filesystem::path& path, const Magic& magic,
                                         std::uint32_t version);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace mate::io
