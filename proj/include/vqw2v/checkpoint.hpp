#pragma once

#include "vqw2v/optimizer.hpp"
#include "vqw2v/parameters.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace vqw2v {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;

  bool operator==(const NamedArray&) const = default;
};

/// Everything needed to resume training bit for bit.
///
/// Binary layout, little-endian: "VQWC", u32 version, kind, config JSON,
/// u64 step, u64 optimizer steps, codebook hash, RNG states (name, state),
/// parameter arrays, optimizer arrays, u32 CRC32 of all preceding bytes.
/// Strings carry a u32 length prefix; arrays are name, u32 rank, u64 dims,
/// f64 values.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string kind;         // "vq" or "mlm"
  std::string config_json;  // plan snapshot
  std::uint64_t step = 0;
  std::uint64_t optimizer_steps = 0;
  std::string codebook_hash;
  std::map<std::string, std::string> rng_states;
  std::vector<NamedArray> parameters;
  std::vector<NamedArray> optimizer;  // "m/<name>" and "v/<name>"

  const NamedArray& parameter(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies parameter values (and Adam moments when given) into `ckpt`.
template <typename Scalar>
void export_state(const ParameterSet<Scalar>& params, const AdamState<Scalar>* adam, Checkpoint& ckpt);

/// Restores parameter values (and Adam moments when given). Throws on a
/// missing name or shape mismatch.
template <typename Scalar>
void import_state(const Checkpoint& ckpt, ParameterSet<Scalar>& params, AdamState<Scalar>* adam);

}  // namespace vqw2v
