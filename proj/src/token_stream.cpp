#include "vqw2v/token_stream.hpp"

#include "binary_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <sstream>

namespace vqw2v {

namespace {

constexpr char kMagic[4] = {'V', 'Q', 'W', 'T'};
constexpr const char* kTextTag = "# vqw2v-tokens";

void check_header(const TokenHeader& h) {
  if (h.version != kTokenFormatVersion)
    throw FormatError("unsupported token format version " + std::to_string(h.version));
  if (h.groups < 1) throw FormatError("token header needs groups >= 1");
  if (h.vars < 2) throw FormatError("token header needs vars >= 2");
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& text, const std::string& what) {
  T v{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw FormatError("bad " + what + " '" + text + "'");
  return v;
}

std::vector<std::uint8_t> encode_binary(const TokenStream& s) {
  io::ByteWriter w;
  for (char c : kMagic) w.u8(std::uint8_t(c));
  w.u32(s.header.version);
  w.u32(s.header.groups);
  w.u32(s.header.vars);
  w.f64(s.header.frame_rate);
  w.u32(s.header.sample_rate);
  w.str(s.header.codebook_hash);
  w.str(s.header.source);
  w.u64(s.frames());

  const unsigned width = bits_per_index(s.header.vars);
  const std::size_t frame_bytes = bytes_per_frame(s.header.groups, s.header.vars);
  std::vector<std::uint8_t> frame(frame_bytes);
  for (std::size_t t = 0; t < s.frames(); ++t) {
    std::fill(frame.begin(), frame.end(), 0);
    std::size_t bit = 0;
    for (std::uint32_t idx : s.frame(t)) {
      for (unsigned b = 0; b < width; ++b, ++bit)
        if ((idx >> b) & 1u) frame[bit / 8] |= std::uint8_t(1u << (bit % 8));
    }
    w.raw(frame);
  }
  w.seal();
  return w.take();
}

std::span<const std::uint8_t> checked_payload(std::span<const std::uint8_t> bytes) {
  try {
    return io::verify_crc(bytes);
  } catch (const std::runtime_error& e) {
    throw FormatError(e.what());
  }
}

TokenStream decode_binary(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(checked_payload(bytes));
  r.raw(sizeof kMagic);
  TokenStream s;
  s.header.version = r.u32();
  if (s.header.version != kTokenFormatVersion)
    throw FormatError("unsupported token format version " + std::to_string(s.header.version));
  s.header.groups = r.u32();
  s.header.vars = r.u32();
  check_header(s.header);
  s.header.frame_rate = r.f64();
  s.header.sample_rate = r.u32();
  s.header.codebook_hash = r.str();
  s.header.source = r.str();
  const std::uint64_t frames = r.u64();

  const unsigned width = bits_per_index(s.header.vars);
  const std::size_t frame_bytes = bytes_per_frame(s.header.groups, s.header.vars);
  if (r.remaining() != frames * frame_bytes)
    throw FormatError("token body size does not match the frame count");
  s.indices.reserve(frames * s.header.groups);
  for (std::uint64_t t = 0; t < frames; ++t) {
    auto frame = r.raw(frame_bytes);
    std::size_t bit = 0;
    for (std::uint32_t g = 0; g < s.header.groups; ++g) {
      std::uint32_t idx = 0;
      for (unsigned b = 0; b < width; ++b, ++bit)
        if ((frame[bit / 8] >> (bit % 8)) & 1u) idx |= 1u << b;
      s.indices.push_back(idx);
    }
  }
  s.validate();
  return s;
}

std::vector<std::uint8_t> encode_text(const TokenStream& s) {
  if (s.header.source.find('\n') != std::string::npos ||
      s.header.codebook_hash.find('\n') != std::string::npos)
    throw FormatError("header strings may not contain newlines in text form");
  std::ostringstream out;
  out << kTextTag << '\n'
      << "# version=" << s.header.version << '\n'
      << "# groups=" << s.header.groups << '\n'
      << "# vars=" << s.header.vars << '\n'
      << "# frame_rate=" << format_double(s.header.frame_rate) << '\n'
      << "# sample_rate=" << s.header.sample_rate << '\n'
      << "# codebook_hash=" << s.header.codebook_hash << '\n'
      << "# source=" << s.header.source << '\n';
  for (std::size_t t = 0; t < s.frames(); ++t) {
    auto f = s.frame(t);
    for (std::size_t g = 0; g < f.size(); ++g) out << (g ? "\t" : "") << f[g];
    out << '\n';
  }
  const std::string text = out.str();
  return {text.begin(), text.end()};
}

TokenStream decode_text(std::span<const std::uint8_t> bytes) {
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::getline(in, line);
  if (line != kTextTag) throw FormatError("not a token stream");

  TokenStream s;
  bool have_version = false;
  while (in.peek() == '#' && std::getline(in, line)) {
    const auto eq = line.find('=');
    if (line.rfind("# ", 0) != 0 || eq == std::string::npos)
      throw FormatError("malformed header line '" + line + "'");
    const std::string key = line.substr(2, eq - 2);
    const std::string value = line.substr(eq + 1);
    if (key == "version") {
      s.header.version = parse_number<std::uint32_t>(value, key);
      have_version = true;
    } else if (key == "groups") {
      s.header.groups = parse_number<std::uint32_t>(value, key);
    } else if (key == "vars") {
      s.header.vars = parse_number<std::uint32_t>(value, key);
    } else if (key == "frame_rate") {
      s.header.frame_rate = parse_number<double>(value, key);
    } else if (key == "sample_rate") {
      s.header.sample_rate = parse_number<std::uint32_t>(value, key);
    } else if (key == "codebook_hash") {
      s.header.codebook_hash = value;
    } else if (key == "source") {
      s.header.source = value;
    }
  }
  if (!have_version) throw FormatError("token header lacks a version");
  check_header(s.header);

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t count = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const auto tab = std::min(line.find('\t', pos), line.size());
      s.indices.push_back(parse_number<std::uint32_t>(line.substr(pos, tab - pos), "index"));
      ++count;
      pos = tab + 1;
    }
    if (count != s.header.groups)
      throw FormatError("frame has " + std::to_string(count) + " indices, expected " +
                        std::to_string(s.header.groups));
  }
  s.validate();
  return s;
}

}  // namespace

void TokenStream::validate() const {
  if (header.groups == 0 || indices.size() % header.groups != 0)
    throw FormatError("token body is not a whole number of frames");
  for (std::uint32_t idx : indices)
    if (idx >= header.vars)
      throw FormatError("index " + std::to_string(idx) + " >= V=" + std::to_string(header.vars));
}

unsigned bits_per_index(std::uint32_t vars) {
  if (vars < 2) throw std::invalid_argument("V must be >= 2");
  return unsigned(std::bit_width(vars - 1));
}

std::size_t bytes_per_frame(std::uint32_t groups, std::uint32_t vars) {
  return (std::size_t(groups) * bits_per_index(vars) + 7) / 8;
}

std::vector<std::uint8_t> encode_tokens(const TokenStream& stream, TokenFormat form) {
  check_header(stream.header);
  stream.validate();
  return form == TokenFormat::kBinary ? encode_binary(stream) : encode_text(stream);
}

TokenStream decode_tokens(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= sizeof kMagic && std::equal(kMagic, kMagic + 4, bytes.begin()))
    return decode_binary(bytes);
  if (!bytes.empty() && bytes[0] == '#') return decode_text(bytes);
  throw FormatError("not a token stream");
}

void write_tokens(const TokenStream& stream, const std::filesystem::path& path, TokenFormat form) {
  io::write_file(path.string(), encode_tokens(stream, form));
}

TokenStream read_tokens(const std::filesystem::path& path) {
  return decode_tokens(io::read_file(path.string()));
}

double eval_bitrate(int groups, int vars, double frame_rate) {
  if (groups < 1) throw std::invalid_argument("bitrate needs G >= 1");
  if (vars < 2) throw std::invalid_argument("bitrate needs V >= 2");
  if (!(frame_rate > 0)) throw std::invalid_argument("bitrate needs r > 0");
  return frame_rate * groups * std::log2(double(vars));
}

}  // namespace vqw2v
