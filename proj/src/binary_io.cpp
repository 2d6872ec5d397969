// SPDX-FileCopyrightText: (c) 2026 The MATE Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "mate/binary_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace mate::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks so payloads above 4 GiB still work.
  constexpr std::size_t kChunk = std::size_t{1} << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error("string too long for length prefix");
  }
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::f64_array(std::span<const double> values) {
  buf_.reserve(buf_.size() + values.size() * 8);
  for (double v : values) f64(v);
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  if (n > remaining()) throw Error("truncated file");
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::require(std::uint64_t count, std::uint64_t item_size, std::string_view what) const {
  if (item_size != 0 && count > remaining() / item_size) {
    throw Error("truncated file: " + std::string(what) + " exceeds remaining bytes");
  }
}

std::uint8_t ByteReader::u8() { return take(1)[0]; }

std::uint32_t ByteReader::u32() {
  auto b = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto b = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  auto b = take(n);
  return std::string(reinterpret_cast<const char*>(b.data()), b.size());
}

void ByteReader::f64_array(std::span<double> out) {
  require(out.size(), 8, "f64 array");
  for (double& v : out) v = f64();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file for reading: " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw Error("failed reading file: " + path.string());
  }
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open file for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error("failed writing file: " + path.string());
}

void write_container(const std::filesystem::path& path, const Magic& magic, std::uint32_t version,
                     std::span<const std::uint8_t> payload) {
  ByteWriter w;
  for (char c : magic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(version);
  auto bytes = w.take();
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  ByteWriter tail;
  tail.u32(crc32(payload));
  bytes.insert(bytes.end(), tail.bytes().begin(), tail.bytes().end());
  write_file(path, bytes);
}

std::vector<std::uint8_t> read_container(const std::filesystem::path& path, const Magic& magic,
                                         std::uint32_t version) {
  auto bytes = read_file(path);
  if (bytes.size() < 12) throw Error("truncated file: " + path.string());
  if (std::memcmp(bytes.data(), magic.data(), 4) != 0) throw Error("bad magic in " + path.string());
  ByteReader head(std::span<const std::uint8_t>(bytes).subspan(4, 4));
  const std::uint32_t found = head.u32();
  if (found != version) {
    throw Error("version mismatch in " + path.string() + ": expected " + std::to_string(version) +
                ", found " + std::to_string(found));
  }
  std::span<const std::uint8_t> payload(bytes.data() + 8, bytes.size() - 12);
  ByteReader tail(std::span<const std::uint8_t>(bytes).subspan(bytes.size() - 4));
  if (tail.u32() != crc32(payload)) throw Error("CRC mismatch in " + path.string());
  return {payload.begin(), payload.end()};
}

}  // namespace mate::io
