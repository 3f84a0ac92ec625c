#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqw2v {

inline constexpr std::uint32_t kTokenFormatVersion = 1;

struct TokenHeader {
  std::uint32_t version = kTokenFormatVersion;
  std::uint32_t groups = 1;
  std::uint32_t vars = 2;
  double frame_rate = 100.0;
  std::uint32_t sample_rate = 16000;
  std::string codebook_hash;  // 8 hex digits
  std::string source;

  bool compatible_with(const TokenHeader& other) const {
    return groups == other.groups && vars == other.vars && codebook_hash == other.codebook_hash;
  }
  bool operator==(const TokenHeader&) const = default;
};

/// Discrete audio: one G-tuple of codeword indices per frame, stored
/// frame-major in `indices` (frame t, group g at t * G + g).
struct TokenStream {
  TokenHeader header;
  std::vector<std::uint32_t> indices;

  std::size_t frames() const { return header.groups ? indices.size() / header.groups : 0; }
  std::span<const std::uint32_t> frame(std::size_t t) const {
    return {indices.data() + t * header.groups, header.groups};
  }
  /// Throws when an index is >= V or the body is not whole frames.
  void validate() const;

  bool operator==(const TokenStream&) const = default;
};

enum class TokenFormat { kText, kBinary };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index width in the binary form: ceil(log2 V) bits.
unsigned bits_per_index(std::uint32_t vars);
/// Bytes per frame in the binary form (frames are byte aligned).
std::size_t bytes_per_frame(std::uint32_t groups, std::uint32_t vars);

std::vector<std::uint8_t> encode_tokens(const TokenStream& stream, TokenFormat form);
TokenStream decode_tokens(std::span<const std::uint8_t> bytes);

void write_tokens(const TokenStream& stream, const std::filesystem::path& path, TokenFormat form);
/// Detects the form from the leading bytes.
TokenStream read_tokens(const std::filesystem::path& path);

/// r * G * log2(V) bits per second.
double eval_bitrate(int groups, int vars, double frame_rate = 100.0);

}  // namespace vqw2v
