#include "binary_io.hpp"

#include <zlib.h>

#include <cstdio>
#include <fstream>
#include <iterator>

namespace vqw2v::io {

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t at = 0; at < bytes.size(); at += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - at);
    crc = ::crc32(crc, bytes.data() + at, uInt(n));
  }
  return std::uint32_t(crc);
}

std::string hex32(std::uint32_t value) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", value);
  return buf;
}

std::span<const std::uint8_t> verify_crc(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw std::runtime_error("truncated data: missing CRC");
  auto payload = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4));
  const std::uint32_t stored = tail.u32();
  if (stored != crc32(payload))
    throw std::runtime_error("CRC mismatch: stored " + hex32(stored) + ", computed " +
                             hex32(crc32(payload)));
  return payload;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace vqw2v::io
