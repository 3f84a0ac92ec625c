#include "vqw2v/checkpoint.hpp"

#include "binary_io.hpp"

namespace vqw2v {

namespace {

constexpr char kMagic[4] = {'V', 'Q', 'W', 'C'};

void put_array(io::ByteWriter& w, const NamedArray& a) {
  w.str(a.name);
  w.u32(std::uint32_t(a.shape.size()));
  for (Index d : a.shape) w.u64(std::uint64_t(d));
  for (double v : a.data) w.f64(v);
}

NamedArray get_array(io::ByteReader& r) {
  NamedArray a;
  a.name = r.str();
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw std::runtime_error("checkpoint array " + a.name + " has rank " + std::to_string(rank));
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    a.shape.push_back(Index(r.u64()));
    count *= std::uint64_t(a.shape.back());
  }
  if (count * 8 > r.remaining()) throw std::runtime_error("truncated data in array " + a.name);
  a.data.resize(count);
  for (double& v : a.data) v = r.f64();
  return a;
}

template <typename Scalar>
NamedArray to_array(const std::string& name, const Shape& shape, const Vec<Scalar>& values) {
  NamedArray a{name, shape, std::vector<double>(std::size_t(values.size()))};
  for (Index i = 0; i < values.size(); ++i) a.data[std::size_t(i)] = double(values[i]);
  return a;
}

template <typename Scalar>
void from_array(const NamedArray& a, const Shape& shape, Vec<Scalar>& out) {
  if (a.shape != shape)
    throw std::runtime_error("checkpoint array " + a.name + " has shape " + shape_string(a.shape) +
                             ", expected " + shape_string(shape));
  out.resize(Index(a.data.size()));
  for (std::size_t i = 0; i < a.data.size(); ++i) out[Index(i)] = Scalar(a.data[i]);
}

const NamedArray& find(const std::vector<NamedArray>& arrays, const std::string& name) {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw std::runtime_error("checkpoint lacks array " + name);
}

}  // namespace

const NamedArray& Checkpoint::parameter(const std::string& name) const {
  return find(parameters, name);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  for (char c : kMagic) w.u8(std::uint8_t(c));
  w.u32(ckpt.version);
  w.str(ckpt.kind);
  w.str(ckpt.config_json);
  w.u64(ckpt.step);
  w.u64(ckpt.optimizer_steps);
  w.str(ckpt.codebook_hash);
  w.u32(std::uint32_t(ckpt.rng_states.size()));
  for (const auto& [name, state] : ckpt.rng_states) {
    w.str(name);
    w.str(state);
  }
  w.u32(std::uint32_t(ckpt.parameters.size()));
  for (const auto& a : ckpt.parameters) put_array(w, a);
  w.u32(std::uint32_t(ckpt.optimizer.size()));
  for (const auto& a : ckpt.optimizer) put_array(w, a);
  w.seal();
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin()))
    throw std::runtime_error("not a checkpoint file");
  io::ByteReader r(io::verify_crc(bytes));
  r.raw(4);
  Checkpoint c;
  c.version = r.u32();
  if (c.version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(c.version));
  c.kind = r.str();
  c.config_json = r.str();
  c.step = r.u64();
  c.optimizer_steps = r.u64();
  c.codebook_hash = r.str();
  for (std::uint32_t n = r.u32(); n > 0; --n) {
    std::string name = r.str();
    c.rng_states[name] = r.str();
  }
  for (std::uint32_t n = r.u32(); n > 0; --n) c.parameters.push_back(get_array(r));
  for (std::uint32_t n = r.u32(); n > 0; --n) c.optimizer.push_back(get_array(r));
  if (r.remaining() != 0) throw std::runtime_error("trailing bytes in checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path.string(), encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path.string()));
}

template <typename Scalar>
void export_state(const ParameterSet<Scalar>& params, const AdamState<Scalar>* adam, Checkpoint& ckpt) {
  ckpt.parameters.clear();
  ckpt.optimizer.clear();
  for (const auto& p : params) ckpt.parameters.push_back(to_array(p.name, p.shape, p.value));
  ckpt.optimizer_steps = 0;
  if (!adam) return;
  ckpt.optimizer_steps = std::uint64_t(adam->steps);
  for (std::size_t i = 0; i < adam->first.size(); ++i) {
    const auto& p = params[i];
    ckpt.optimizer.push_back(to_array("m/" + p.name, p.shape, adam->first[i]));
    ckpt.optimizer.push_back(to_array("v/" + p.name, p.shape, adam->second[i]));
  }
}

template <typename Scalar>
void import_state(const Checkpoint& ckpt, ParameterSet<Scalar>& params, AdamState<Scalar>* adam) {
  for (auto& p : params) from_array(find(ckpt.parameters, p.name), p.shape, p.value);
  if (!adam) return;
  adam->steps = Index(ckpt.optimizer_steps);
  adam->first.clear();
  adam->second.clear();
  if (ckpt.optimizer.empty()) return;
  for (auto& p : params) {
    from_array(find(ckpt.optimizer, "m/" + p.name), p.shape, adam->first.emplace_back());
    from_array(find(ckpt.optimizer, "v/" + p.name), p.shape, adam->second.emplace_back());
  }
}

template void export_state(const ParameterSet<float>&, const AdamState<float>*, Checkpoint&);
template void export_state(const ParameterSet<double>&, const AdamState<double>*, Checkpoint&);
template void import_state(const Checkpoint&, ParameterSet<float>&, AdamState<float>*);
template void import_state(const Checkpoint&, ParameterSet<double>&, AdamState<double>*);

}  // namespace vqw2v
