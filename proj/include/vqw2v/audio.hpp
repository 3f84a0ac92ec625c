#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqw2v {

/// Mono audio at 16 kHz with samples in [-1, 1].
struct Waveform {
  std::uint32_t sample_rate = 16000;
  std::vector<float> samples;
  std::string name;

  double seconds() const { return double(samples.size()) / sample_rate; }
};

class WavError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 16-bit PCM, mono, 16 kHz only; samples are decoded as pcm / 32768.
Waveform read_wav(const std::filesystem::path& path);
/// Writes 16-bit PCM; samples are clamped to [-1, 1).
void write_wav(const Waveform& wave, const std::filesystem::path& path);

enum class SynthGenerator { kSineMixture, kFilteredNoiseSegments };

struct SynthSpec {
  std::size_t num_clips = 8;
  double clip_seconds = 1.0;
  std::uint64_t seed = 1;
  SynthGenerator generator = SynthGenerator::kFilteredNoiseSegments;
  int sines = 3;  // sine-mixture only

  void validate() const;
};

/// Deterministic synthetic clips, each peak-normalized to 0.9.
///
/// Sine mixture: `sines` sinusoids with frequencies in [80, 4000] Hz and
/// random phases. Filtered-noise segments: 5 to 20 stationary stretches,
/// each Gaussian noise through its own two-pole resonator.
std::vector<Waveform> synth_dataset(const SynthSpec& spec);

SynthGenerator parse_generator(const std::string& name);
std::string generator_name(SynthGenerator g);

}  // namespace vqw2v
