#include "doctest.h"

#include "vqw2v/audio.hpp"
#include "vqw2v/rng.hpp"
#include "vqw2v/token_stream.hpp"
#include "vqw2v/vq_wav2vec.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace vqw2v;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("vqw2v_test_" + name); }

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(char(v & 0xff));
  s.push_back(char(v >> 8));
}

// Canonical 44-byte RIFF header written by hand.
std::string wav_bytes(const std::vector<std::int16_t>& pcm, std::uint16_t channels = 1, std::uint32_t rate = 16000,
                      std::uint16_t bits = 16, std::uint16_t format = 1) {
  std::string s = "RIFF";
  const std::uint32_t data_bytes = std::uint32_t(pcm.size() * 2);
  put_u32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  put_u32(s, 16);
  put_u16(s, format);
  put_u16(s, channels);
  put_u32(s, rate);
  put_u32(s, rate * channels * bits / 8);
  put_u16(s, std::uint16_t(channels * bits / 8));
  put_u16(s, bits);
  s += "data";
  put_u32(s, data_bytes);
  for (auto v : pcm) put_u16(s, std::uint16_t(v));
  return s;
}

fs::path write_file(const std::string& name, const std::string& bytes) {
  auto path = temp_file(name);
  std::ofstream(path, std::ios::binary) << bytes;
  return path;
}

TokenStream random_stream(std::uint32_t groups, std::uint32_t vars, std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  TokenStream s;
  s.header.groups = groups;
  s.header.vars = vars;
  s.header.frame_rate = 100;
  s.header.codebook_hash = "a1b2c3d4";
  s.header.source = "clip 7.wav";
  for (std::size_t i = 0; i < frames * groups; ++i) s.indices.push_back(std::uint32_t(uniform_index(rng, vars)));
  return s;
}

}  // namespace

TEST_CASE("wav decoding examples") {
  auto zeros = write_file("zeros.wav", wav_bytes(std::vector<std::int16_t>(100, 0)));
  auto w = read_wav(zeros);
  CHECK(w.sample_rate == 16000);
  CHECK(w.samples.size() == 100);
  CHECK(std::all_of(w.samples.begin(), w.samples.end(), [](float x) { return x == 0; }));

  auto loud = write_file("loud.wav", wav_bytes({32767, -32768, 16384}));
  auto l = read_wav(loud);
  CHECK(l.samples[0] == doctest::Approx(32767.0 / 32768.0).epsilon(1e-7));
  CHECK(l.samples[0] == doctest::Approx(0.99997).epsilon(1e-5));
  CHECK(l.samples[1] == -1.0f);
  CHECK(l.samples[2] == 0.5f);

  auto stereo = write_file("stereo.wav", wav_bytes({0, 0, 0, 0}, 2));
  CHECK_THROWS_WITH_AS(read_wav(stereo), doctest::Contains("expected mono"), WavError);
  auto rate = write_file("rate.wav", wav_bytes({0, 0}, 1, 8000));
  CHECK_THROWS_WITH_AS(read_wav(rate), doctest::Contains("16000 Hz"), WavError);
  auto depth = write_file("depth.wav", wav_bytes({0, 0}, 1, 16000, 8));
  CHECK_THROWS_WITH_AS(read_wav(depth), doctest::Contains("16-bit"), WavError);
  auto flt = write_file("float.wav", wav_bytes({0, 0}, 1, 16000, 16, 3));
  CHECK_THROWS_WITH_AS(read_wav(flt), doctest::Contains("PCM"), WavError);
  auto junk = write_file("junk.wav", "this is not audio at all, not even close");
  CHECK_THROWS_WITH_AS(read_wav(junk), doctest::Contains("not a WAV"), WavError);
  CHECK_THROWS(read_wav(temp_file("missing.wav")));
  for (const auto& p : {zeros, loud, stereo, rate, depth, flt, junk}) fs::remove(p);
}

TEST_CASE("wav write/read roundtrip quantizes to 16 bits") {
  Waveform w;
  Rng rng(1);
  for (int i = 0; i < 500; ++i) w.samples.push_back(float(uniform(rng, -1, 1)));
  w.samples.push_back(1.0f);
  auto path = temp_file("roundtrip.wav");
  write_wav(w, path);
  auto back = read_wav(path);
  REQUIRE(back.samples.size() == w.samples.size());
  for (std::size_t i = 0; i + 1 < w.samples.size(); ++i) CHECK(std::abs(back.samples[i] - w.samples[i]) <= 0.5f / 32768);
  CHECK(back.samples.back() == 32767.0f / 32768.0f);
  fs::remove(path);
}

TEST_CASE("synthetic datasets are deterministic and peak-normalized") {
  for (auto gen : {SynthGenerator::kSineMixture, SynthGenerator::kFilteredNoiseSegments}) {
    SynthSpec spec;
    spec.num_clips = 4;
    spec.clip_seconds = 0.5;
    spec.seed = 9;
    spec.generator = gen;
    auto a = synth_dataset(spec);
    auto b = synth_dataset(spec);
    REQUIRE(a.size() == 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].samples == b[i].samples);
      CHECK(a[i].samples.size() == 8000);
      float peak = 0;
      for (float x : a[i].samples) peak = std::max(peak, std::abs(x));
      CHECK(std::abs(peak - 0.9f) < 1e-6);
    }
    CHECK(a[0].samples != a[1].samples);
    spec.seed = 10;
    CHECK(synth_dataset(spec)[0].samples != a[0].samples);
  }
  CHECK(parse_generator("sine-mixture") == SynthGenerator::kSineMixture);
  CHECK(generator_name(parse_generator("filtered-noise-segments")) == "filtered-noise-segments");
  CHECK_THROWS(parse_generator("pink"));
}

TEST_CASE("a single sine has its autocorrelation peak at its period") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SynthSpec spec;
    spec.num_clips = 1;
    spec.seed = seed;
    spec.generator = SynthGenerator::kSineMixture;
    spec.sines = 1;
    const auto clips = synth_dataset(spec);
    const auto& x = clips[0].samples;
    const Index n = Index(x.size());

    // Independent frequency estimate from the zero-crossing count.
    Index crossings = 0;
    for (Index i = 1; i < n; ++i) crossings += (x[std::size_t(i - 1)] < 0) != (x[std::size_t(i)] < 0);
    const double period = 2.0 * double(n) / double(crossings);

    // Search lags covering 80 to 4000 Hz, skipping the zero-lag lobe.
    auto corr = [&](Index lag) {
      double s = 0;
      for (Index i = 0; i + lag < n; ++i) s += double(x[std::size_t(i)]) * x[std::size_t(i + lag)];
      return s / double(n - lag);
    };
    const Index min_lag = std::max<Index>(3, Index(period / 2));
    Index best = min_lag;
    for (Index lag = min_lag; lag <= Index(1.5 * period) + 1; ++lag)
      if (corr(lag) > corr(best)) best = lag;
    INFO("seed " << seed << " period " << period << " peak lag " << best);
    CHECK(std::abs(double(best) - period) <= 1.0);
    CHECK(corr(best) / corr(0) > 0.9);
  }
}

TEST_CASE("binary packing widths") {
  CHECK(bits_per_index(320) == 9);
  CHECK(bytes_per_frame(2, 320) == 3);
  CHECK(bits_per_index(2) == 1);
  CHECK(bits_per_index(256) == 8);
  CHECK(bits_per_index(257) == 9);
  CHECK(bytes_per_frame(32, 1280) == 44);
  CHECK(bytes_per_frame(1, 40) == 1);
}

TEST_CASE("token streams roundtrip through both forms") {
  auto s = random_stream(2, 320, 1000, 3);
  for (auto form : {TokenFormat::kText, TokenFormat::kBinary}) {
    auto bytes = encode_tokens(s, form);
    CHECK(decode_tokens(bytes) == s);
  }
  CHECK(decode_tokens(encode_tokens(s, TokenFormat::kText)) == decode_tokens(encode_tokens(s, TokenFormat::kBinary)));

  for (std::uint32_t v : {2u, 3u, 255u, 256u, 1280u, 70000u})
    for (std::uint32_t g : {1u, 3u, 32u}) {
      auto r = random_stream(g, v, 37, v + g);
      r.header.frame_rate = 16000.0 / 160.0 + 1e-9;
      CHECK(decode_tokens(encode_tokens(r, TokenFormat::kBinary)) == r);
      CHECK(decode_tokens(encode_tokens(r, TokenFormat::kText)) == r);
    }

  TokenStream empty = random_stream(2, 4, 0, 1);
  CHECK(decode_tokens(encode_tokens(empty, TokenFormat::kBinary)) == empty);

  auto path = temp_file("tokens.bin");
  write_tokens(s, path, TokenFormat::kBinary);
  CHECK(read_tokens(path) == s);
  write_tokens(s, path, TokenFormat::kText);
  CHECK(read_tokens(path) == s);
  fs::remove(path);
}

TEST_CASE("token decoding rejects corruption, versions and bad indices") {
  auto s = random_stream(2, 320, 50, 4);
  auto bytes = encode_tokens(s, TokenFormat::kBinary);
  auto flipped = bytes;
  flipped[bytes.size() - 20] ^= 0x01;
  CHECK_THROWS_WITH_AS(decode_tokens(flipped), doctest::Contains("CRC"), FormatError);

  auto bad = s;
  bad.header.version = 99;
  CHECK_THROWS_WITH(decode_tokens(encode_tokens(bad, TokenFormat::kText)), doctest::Contains("version"));
  CHECK_THROWS_WITH(decode_tokens(encode_tokens(bad, TokenFormat::kBinary)), doctest::Contains("version"));

  auto over = s;
  over.indices[3] = 320;
  CHECK_THROWS_AS(over.validate(), FormatError);
  CHECK_THROWS_AS(encode_tokens(over, TokenFormat::kBinary), FormatError);
  std::string text(reinterpret_cast<const char*>(encode_tokens(s, TokenFormat::kText).data()),
                   encode_tokens(s, TokenFormat::kText).size());
  text += "1\t320\n";
  std::vector<std::uint8_t> tb(text.begin(), text.end());
  CHECK_THROWS_WITH_AS(decode_tokens(tb), doctest::Contains(">= V=320"), FormatError);

  auto ragged = s;
  ragged.indices.push_back(1);
  CHECK_THROWS_AS(ragged.validate(), FormatError);
}

TEST_CASE("hand-written text stream decodes") {
  const std::string text =
      "# vqw2v-tokens\n# version=1\n# groups=2\n# vars=4\n# frame_rate=100\n# sample_rate=16000\n"
      "# codebook_hash=0000ffff\n# source=hand\n0\t1\n3\t2\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  auto s = decode_tokens(bytes);
  CHECK(s.header.groups == 2);
  CHECK(s.header.vars == 4);
  CHECK(s.header.codebook_hash == "0000ffff");
  CHECK(s.header.source == "hand");
  CHECK(s.indices == std::vector<std::uint32_t>{0, 1, 3, 2});
}

TEST_CASE("binary body bitrate covers the information content") {
  for (auto [g, v] : {std::pair{1, 40}, {2, 320}, {32, 1280}, {4, 2}}) {
    auto with = encode_tokens(random_stream(std::uint32_t(g), std::uint32_t(v), 100, 5), TokenFormat::kBinary);
    auto without = encode_tokens(random_stream(std::uint32_t(g), std::uint32_t(v), 0, 5), TokenFormat::kBinary);
    // 100 frames = one second at 100 Hz. Overhead per frame: under one bit
    // per index from the integer width, plus at most 7 alignment bits.
    const double body_bits = 8.0 * double(with.size() - without.size());
    CHECK(body_bits >= eval_bitrate(g, v));
    CHECK(body_bits - eval_bitrate(g, v) < 100.0 * (g + 7));
  }
}

TEST_CASE("bitrate values") {
  CHECK(eval_bitrate(1, 40) == doctest::Approx(532.19).epsilon(1e-5));
  CHECK(eval_bitrate(2, 320) == doctest::Approx(1664.39).epsilon(1e-5));
  CHECK(std::abs(eval_bitrate(32, 1280) - 33031) / 33031 < 0.005);
  CHECK(eval_bitrate(2, 4, 50) == 200);
  CHECK_THROWS_AS(eval_bitrate(0, 40), std::invalid_argument);
  CHECK_THROWS_AS(eval_bitrate(1, 1), std::invalid_argument);
  CHECK_THROWS_AS(eval_bitrate(1, 40, 0), std::invalid_argument);
}

TEST_CASE("tokenization of synthetic clips") {
  auto cfg = VqModelConfig::small(QuantizerBackend::kGumbel, 16);
  cfg.quantizer.vars = 10;
  VqWav2Vec<float> model(cfg);
  model.init(2);
  SynthSpec spec;
  spec.num_clips = 2;
  spec.seed = 3;
  auto clips = synth_dataset(spec);
  auto a = tokenize(model, clips[0].samples, "a");
  CHECK(a.frames() == 100);
  CHECK(a.header.frame_rate == 100.0);
  CHECK(a.header.groups == 2);
  CHECK(a.header.vars == 10);
  CHECK(a.header.codebook_hash == model.quantizer().codebook_hash());
  CHECK_NOTHROW(a.validate());
  CHECK(tokenize(model, clips[0].samples, "a") == a);

  std::vector<float> head(clips[0].samples.begin(), clips[0].samples.begin() + 3200);
  std::vector<float> joined = head;
  joined.insert(joined.end(), clips[1].samples.begin(), clips[1].samples.begin() + 3200);
  auto th = tokenize(model, head);
  auto tj = tokenize(model, joined);
  REQUIRE(tj.indices.size() >= th.indices.size());
  CHECK(std::equal(th.indices.begin(), th.indices.end(), tj.indices.begin()));

  CHECK_THROWS(tokenize(model, std::vector<float>(100, 0.f)));
}
