#include "vqw2v/audio.hpp"

#include "binary_io.hpp"
#include "vqw2v/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace vqw2v {

namespace {

constexpr double kPeak = 0.9;
constexpr std::uint32_t kSampleRateHz = 16000;

bool tag_is(std::span<const std::uint8_t> tag, const char* want) {
  return std::equal(tag.begin(), tag.end(), reinterpret_cast<const std::uint8_t*>(want));
}

void peak_normalize(std::vector<double>& x) {
  double peak = 0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak == 0) return;
  for (double& v : x) v *= kPeak / peak;
}

Waveform to_wave(const std::vector<double>& x, std::string name) {
  Waveform w;
  w.name = std::move(name);
  w.samples.assign(x.begin(), x.end());
  return w;
}

std::vector<double> sine_mixture(std::size_t n, int sines, Rng& rng) {
  std::vector<double> x(n, 0.0);
  for (int s = 0; s < sines; ++s) {
    const double freq = uniform(rng, 80.0, 4000.0);
    const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
    const double w = 2 * std::numbers::pi * freq / kSampleRateHz;
    for (std::size_t i = 0; i < n; ++i) x[i] += std::sin(w * double(i) + phase);
  }
  return x;
}

std::vector<double> noise_segments(std::size_t n, Rng& rng) {
  const auto segments = std::size_t(5 + uniform_index(rng, 16));
  // Segment boundaries: distinct interior cut points.
  std::vector<std::size_t> cuts;
  if (n > segments) {
    std::vector<std::size_t> interior(n - 1);
    for (std::size_t i = 0; i < interior.size(); ++i) interior[i] = i + 1;
    std::sample(interior.begin(), interior.end(), std::back_inserter(cuts), segments - 1, rng);
  }
  cuts.insert(cuts.begin(), 0);
  cuts.push_back(n);

  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(n, 0.0);
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double centre = uniform(rng, 100.0, 4000.0);
    const double radius = uniform(rng, 0.9, 0.99);
    const double gain = uniform(rng, 0.3, 1.0);
    const double a1 = 2 * radius * std::cos(2 * std::numbers::pi * centre / kSampleRateHz);
    const double a2 = -radius * radius;
    double y1 = 0, y2 = 0, energy = 0;
    for (std::size_t i = cuts[s]; i < cuts[s + 1]; ++i) {
      const double y = gauss(rng) + a1 * y1 + a2 * y2;
      y2 = y1;
      y1 = y;
      x[i] = y;
      energy += y * y;
    }
    const std::size_t len = cuts[s + 1] - cuts[s];
    const double rms = len ? std::sqrt(energy / double(len)) : 0.0;
    if (rms > 0)
      for (std::size_t i = cuts[s]; i < cuts[s + 1]; ++i) x[i] *= gain / rms;
  }
  return x;
}

}  // namespace

Waveform read_wav(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path.string());
  std::span<const std::uint8_t> all(bytes);
  if (all.size() < 12 || !tag_is(all.first(4), "RIFF") || !tag_is(all.subspan(8, 4), "WAVE"))
    throw WavError("not a WAV file: " + path.string());

  io::ByteReader r(all.subspan(12));
  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (r.remaining() >= 8) {
    auto tag = r.raw(4);
    const std::uint32_t size = r.u32();
    if (size > r.remaining()) throw WavError("truncated WAV chunk");
    auto body = r.raw(size);
    if (size % 2 && r.remaining() > 0) r.u8();  // chunks are word aligned
    if (tag_is(tag, "fmt ")) {
      if (size < 16) throw WavError("malformed fmt chunk");
      io::ByteReader f(body);
      format = f.u16();
      channels = f.u16();
      rate = f.u32();
      f.u32();
      f.u16();
      bits = f.u16();
      have_fmt = true;
    } else if (tag_is(tag, "data")) {
      if (!have_fmt) throw WavError("WAV data chunk before fmt chunk");
      if (format != 1) throw WavError("expected PCM encoding, got format tag " + std::to_string(format));
      if (channels != 1) throw WavError("expected mono, got " + std::to_string(channels) + " channels");
      if (bits != 16) throw WavError("expected 16-bit samples, got " + std::to_string(bits));
      if (rate != kSampleRateHz)
        throw WavError("expected 16000 Hz sample rate, got " + std::to_string(rate));
      Waveform w;
      w.name = path.stem().string();
      w.samples.resize(size / 2);
      io::ByteReader d(body);
      for (auto& s : w.samples) s = float(std::int16_t(d.u16()) / 32768.0);
      return w;
    }
  }
  throw WavError("WAV file has no data chunk");
}

void write_wav(const Waveform& wave, const std::filesystem::path& path) {
  if (wave.sample_rate != kSampleRateHz) throw WavError("expected 16000 Hz sample rate");
  const auto data_bytes = std::uint32_t(wave.samples.size() * 2);
  io::ByteWriter w;
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>("RIFF"), 4));
  w.u32(36 + data_bytes);
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>("WAVEfmt "), 8));
  w.u32(16);
  w.u16(1);
  w.u16(1);
  w.u32(kSampleRateHz);
  w.u32(kSampleRateHz * 2);
  w.u16(2);
  w.u16(16);
  w.raw(std::span(reinterpret_cast<const std::uint8_t*>("data"), 4));
  w.u32(data_bytes);
  for (float s : wave.samples) {
    const double pcm = std::clamp(std::round(double(s) * 32768.0), -32768.0, 32767.0);
    w.u16(std::uint16_t(std::int16_t(pcm)));
  }
  io::write_file(path.string(), w.bytes());
}

void SynthSpec::validate() const {
  if (num_clips < 1) throw std::invalid_argument("synthetic dataset needs at least one clip");
  if (!(clip_seconds > 0)) throw std::invalid_argument("clip length must be positive");
  if (sines < 1) throw std::invalid_argument("sine mixture needs at least one sine");
}

std::vector<Waveform> synth_dataset(const SynthSpec& spec) {
  spec.validate();
  const auto n = std::size_t(std::llround(spec.clip_seconds * kSampleRateHz));
  std::vector<Waveform> clips;
  clips.reserve(spec.num_clips);
  for (std::size_t c = 0; c < spec.num_clips; ++c) {
    Rng rng = make_stream(spec.seed, "synth/" + std::to_string(c));
    auto x = spec.generator == SynthGenerator::kSineMixture ? sine_mixture(n, spec.sines, rng)
                                                            : noise_segments(n, rng);
    peak_normalize(x);
    clips.push_back(to_wave(x, generator_name(spec.generator) + "-" + std::to_string(c)));
  }
  return clips;
}

SynthGenerator parse_generator(const std::string& name) {
  if (name == "sine-mixture") return SynthGenerator::kSineMixture;
  if (name == "filtered-noise-segments") return SynthGenerator::kFilteredNoiseSegments;
  throw std::invalid_argument("unknown generator '" + name + "'");
}

std::string generator_name(SynthGenerator g) {
  return g == SynthGenerator::kSineMixture ? "sine-mixture" : "filtered-noise-segments";
}

}  // namespace vqw2v
