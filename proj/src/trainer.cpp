#include "vqw2v/trainer.hpp"

#include "vqw2v/config_io.hpp"

#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>

namespace vqw2v {

namespace {

using nlohmann::json;

template <typename Scalar>
constexpr const char* precision_name() {
  return sizeof(Scalar) == 8 ? "float64" : "float32";
}

template <typename Scalar, typename Plan>
std::string snapshot(const Plan& plan, const std::string& extra_key = "", const json& extra = {}) {
  json j;
  j["precision"] = precision_name<Scalar>();
  j["plan"] = plan;
  if (!extra_key.empty()) j[extra_key] = extra;
  return j.dump();
}

template <typename Scalar>
json read_snapshot(const Checkpoint& ckpt, const std::string& kind) {
  if (ckpt.kind != kind)
    throw std::runtime_error("expected a " + kind + " checkpoint, got '" + ckpt.kind + "'");
  json j = json::parse(ckpt.config_json);
  if (j.at("precision").get<std::string>() != precision_name<Scalar>())
    throw std::runtime_error("checkpoint precision " + j.at("precision").get<std::string>() +
                             " differs from trainer precision " + precision_name<Scalar>());
  return j;
}

Rng restored(const Checkpoint& ckpt, const std::string& name) {
  auto it = ckpt.rng_states.find(name);
  if (it == ckpt.rng_states.end()) throw std::runtime_error("checkpoint lacks RNG stream " + name);
  Rng rng;
  restore_rng(rng, it->second);
  return rng;
}

template <typename Trainer>
std::vector<StepRecord> run_loop(Trainer& trainer, Index until, std::ostream* telemetry) {
  std::vector<StepRecord> records;
  while (trainer.current_step() < until) {
    records.push_back(trainer.step());
    if (telemetry) *telemetry << records.back().to_line() << '\n' << std::flush;
  }
  return records;
}

}  // namespace

std::string StepRecord::to_line() const {
  char buf[256];
  int n = std::snprintf(buf, sizeof buf, "step=%lld loss=%.9g lr=%.9g tau=%.9g usage=%.9g",
                        static_cast<long long>(step), loss, lr, tau, usage);
  std::string line(buf, std::size_t(n));
  if (contrastive) {
    std::snprintf(buf, sizeof buf, " contrastive=%.9g", *contrastive);
    line += buf;
  }
  if (accuracy) {
    std::snprintf(buf, sizeof buf, " acc=%.9g", *accuracy);
    line += buf;
  }
  return line;
}

std::map<std::string, double> parse_record(const std::string& line) {
  std::map<std::string, double> out;
  std::istringstream in(line);
  std::string field;
  while (in >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed telemetry field '" + field + "'");
    out[field.substr(0, eq)] = std::stod(field.substr(eq + 1));
  }
  return out;
}

void VqTrainPlan::validate() const {
  model.validate();
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (crop_samples < model.encoder.receptive_field())
    throw std::invalid_argument("crop length " + std::to_string(crop_samples) +
                                " is shorter than the encoder receptive field " +
                                std::to_string(model.encoder.receptive_field()));
  if (steps < 0 || steps > lr.total_steps)
    throw std::invalid_argument("steps must lie within the learning-rate schedule");
  lr.validate();
  tau.validate();
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint cadence must be >= 0");
}

// ---------------------------------------------------------------- vq stage

template <typename Scalar>
VqTrainer<Scalar>::VqTrainer(const VqTrainPlan& plan, std::vector<Waveform> data)
    : plan_(plan), data_(std::move(data)) {
  plan_.validate();
  setup();
  model_->init(plan_.seed);
  data_rng_ = make_stream(plan_.seed, "data");
  dropout_rng_ = make_stream(plan_.seed, "dropout");
  gumbel_rng_ = make_stream(plan_.seed, "gumbel");
  negatives_rng_ = make_stream(plan_.seed, "negatives");
}

template <typename Scalar>
VqTrainer<Scalar>::VqTrainer(const Checkpoint& ckpt, std::vector<Waveform> data)
    : data_(std::move(data)) {
  plan_ = read_snapshot<Scalar>(ckpt, "vq").at("plan").template get<VqTrainPlan>();
  plan_.validate();
  setup();
  import_state(ckpt, model_->parameters(), &adam_);
  step_ = Index(ckpt.step);
  data_rng_ = restored(ckpt, "data");
  dropout_rng_ = restored(ckpt, "dropout");
  gumbel_rng_ = restored(ckpt, "gumbel");
  negatives_rng_ = restored(ckpt, "negatives");
  if (model_->quantizer().codebook_hash() != ckpt.codebook_hash)
    throw std::runtime_error("checkpoint codebook hash mismatch");
}

template <typename Scalar>
void VqTrainer<Scalar>::setup() {
  const Index field = plan_.model.encoder.receptive_field();
  std::erase_if(data_, [&](const Waveform& w) { return Index(w.samples.size()) < field; });
  if (data_.empty())
    throw std::invalid_argument("all clips are shorter than the encoder receptive field (" +
                                std::to_string(field) + " samples)");
  model_ = std::make_unique<VqWav2Vec<Scalar>>(plan_.model);
  touched_.assign(model_->parameters().size(), false);
  const auto& q = plan_.model.quantizer;
  selected_.assign(std::size_t(q.shared_codebook ? q.vars : q.groups * q.vars), false);
}

template <typename Scalar>
std::span<const float> VqTrainer<Scalar>::crop(std::vector<float>& buffer) {
  const auto& clip = data_[std::size_t(uniform_index(data_rng_, Index(data_.size())))];
  const Index n = Index(clip.samples.size());
  const Index len = std::min(n, plan_.crop_samples);
  const Index offset = n > len ? uniform_index(data_rng_, n - len + 1) : 0;
  buffer.assign(clip.samples.begin() + offset, clip.samples.begin() + offset + len);
  return buffer;
}

template <typename Scalar>
StepRecord VqTrainer<Scalar>::step() {
  StepRecord rec;
  rec.step = step_;
  rec.lr = lr_at(step_, plan_.lr);
  rec.tau = temperature_at(step_, plan_.tau);

  auto& params = model_->parameters();
  params.zero_grad();
  Tape<Scalar> tape;
  Tensor<Scalar> total;
  double contrastive = 0;
  std::vector<std::uint32_t> indices;
  std::vector<float> buffer;
  const auto& q = plan_.model.quantizer;
  for (Index b = 0; b < plan_.batch_size; ++b) {
    auto wave = crop(buffer);
    ForwardRngs rngs{dropout_rng_, gumbel_rng_, negatives_rng_};
    auto fwd = model_->forward(tape, wave, rec.tau, rngs, true);
    dropout_rng_ = rngs.dropout;
    gumbel_rng_ = rngs.gumbel;
    negatives_rng_ = rngs.negatives;
    total = total.defined() ? add(total, fwd.loss) : fwd.loss;
    contrastive += double(fwd.wav2vec_loss.item());
    const auto& idx = fwd.quantized.indices;
    indices.insert(indices.end(), idx.begin(), idx.end());
    for (std::size_t i = 0; i < idx.size(); ++i)
      selected_[std::size_t(model_->quantizer().table_row(Index(i % std::size_t(q.groups)), idx[i]))] = true;
  }
  auto loss = scale(total, Scalar(1.0 / double(plan_.batch_size)));
  rec.loss = double(loss.item());
  rec.contrastive = contrastive / double(plan_.batch_size);
  tape.backward(loss);

  for (std::size_t i = 0; i < params.size(); ++i)
    if (!touched_[i] && (params[i].grad != Scalar(0)).any()) touched_[i] = true;
  rec.usage = codeword_usage(indices, q.groups, q.vars).fraction;

  adam_step(params, adam_, rec.lr, plan_.adam);
  ++step_;
  return rec;
}

template <typename Scalar>
std::vector<StepRecord> VqTrainer<Scalar>::run(Index until, std::ostream* telemetry) {
  return run_loop(*this, until, telemetry);
}

template <typename Scalar>
Checkpoint VqTrainer<Scalar>::checkpoint() const {
  Checkpoint c;
  c.kind = "vq";
  c.config_json = snapshot<Scalar>(plan_);
  c.step = std::uint64_t(step_);
  c.codebook_hash = model_->quantizer().codebook_hash();
  c.rng_states = {{"data", rng_state(data_rng_)},
                  {"dropout", rng_state(dropout_rng_)},
                  {"gumbel", rng_state(gumbel_rng_)},
                  {"negatives", rng_state(negatives_rng_)}};
  export_state(model_->parameters(), &adam_, c);
  return c;
}

template <typename Scalar>
std::vector<std::string> VqTrainer<Scalar>::dead_parameters() const {
  std::vector<std::string> dead;
  const auto& params = model_->parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    if (!touched_[i]) dead.push_back(params[i].name);
  return dead;
}

template <typename Scalar>
std::vector<Index> VqTrainer<Scalar>::unused_codewords() const {
  std::vector<Index> rows;
  for (std::size_t r = 0; r < selected_.size(); ++r)
    if (!selected_[r]) rows.push_back(Index(r));
  return rows;
}

template <typename Scalar>
Checkpoint train_vq(const std::vector<Waveform>& data, const VqTrainPlan& plan, std::ostream* telemetry) {
  VqTrainer<Scalar> trainer(plan, data);
  trainer.run(plan.steps, telemetry);
  return trainer.checkpoint();
}

template <typename Scalar>
std::unique_ptr<VqWav2Vec<Scalar>> load_vq_model(const Checkpoint& ckpt) {
  if (ckpt.kind != "vq") throw std::runtime_error("expected a vq checkpoint, got '" + ckpt.kind + "'");
  const auto plan = json::parse(ckpt.config_json).at("plan").get<VqTrainPlan>();
  auto model = std::make_unique<VqWav2Vec<Scalar>>(plan.model);
  import_state<Scalar>(ckpt, model->parameters(), nullptr);
  return model;
}

// ---------------------------------------------------------- masked-LM stage

void MlmTrainPlan::validate() const {
  model.validate();
  mask.validate();
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (seq_len < 2) throw std::invalid_argument("sequence length must be >= 2");
  if (steps < 0 || steps > lr.total_steps)
    throw std::invalid_argument("steps must lie within the learning-rate schedule");
  lr.validate();
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint cadence must be >= 0");
}

template <typename Scalar>
MlmTrainer<Scalar>::MlmTrainer(const MlmTrainPlan& plan, const Vocabulary& vocab,
                               std::span<const TokenStream> streams)
    : plan_(plan) {
  plan_.validate();
  setup(vocab, streams);
  model_->init(plan_.seed);
  data_rng_ = make_stream(plan_.seed, "data");
  mask_rng_ = make_stream(plan_.seed, "mask");
  dropout_rng_ = make_stream(plan_.seed, "dropout");
}

template <typename Scalar>
MlmTrainer<Scalar>::MlmTrainer(const Checkpoint& ckpt, const Vocabulary& vocab,
                               std::span<const TokenStream> streams) {
  const json j = read_snapshot<Scalar>(ckpt, "mlm");
  plan_ = j.at("plan").get<MlmTrainPlan>();
  plan_.validate();
  if (ckpt.codebook_hash != vocab.codebook_hash())
    throw std::runtime_error("checkpoint was trained on a different codebook");
  setup(vocab, streams);
  import_state(ckpt, model_->parameters(), &adam_);
  step_ = Index(ckpt.step);
  data_rng_ = restored(ckpt, "data");
  mask_rng_ = restored(ckpt, "mask");
  dropout_rng_ = restored(ckpt, "dropout");
}

template <typename Scalar>
void MlmTrainer<Scalar>::setup(const Vocabulary& vocab, std::span<const TokenStream> streams) {
  if (streams.empty()) throw std::invalid_argument("no token streams to train on");
  vocab_hash_ = vocab.codebook_hash();
  for (const auto& s : streams) {
    vocab.check_compatible(s.header);
    if (s.frames() >= 2) sequences_.push_back(vocab.encode(s));
  }
  if (sequences_.empty()) throw std::invalid_argument("every token stream is shorter than two frames");
  model_ = std::make_unique<MaskedEncoder<Scalar>>(plan_.model, vocab.size());
}

template <typename Scalar>
std::span<const Index> MlmTrainer<Scalar>::crop(Rng& rng) const {
  const auto& seq = sequences_[std::size_t(uniform_index(rng, Index(sequences_.size())))];
  const Index n = Index(seq.size());
  const Index len = std::min(n, plan_.seq_len);
  const Index offset = n > len ? uniform_index(rng, n - len + 1) : 0;
  return std::span<const Index>(seq).subspan(std::size_t(offset), std::size_t(len));
}

template <typename Scalar>
StepRecord MlmTrainer<Scalar>::step() {
  StepRecord rec;
  rec.step = step_;
  rec.lr = lr_at(step_, plan_.lr);

  auto& params = model_->parameters();
  params.zero_grad();
  Tape<Scalar> tape;
  Tensor<Scalar> total;
  Index used = 0, masked = 0, correct = 0;
  std::set<Index> seen;
  for (Index b = 0; b < plan_.batch_size; ++b) {
    auto tokens = crop(data_rng_);
    seen.insert(tokens.begin(), tokens.end());
    auto mask = sample_span_mask(Index(tokens.size()), plan_.mask, mask_rng_);
    auto res = mlm_forward(tape, tokens, mask.positions, *model_, dropout_rng_, true);
    if (!res.loss.defined()) continue;
    total = total.defined() ? add(total, res.loss) : res.loss;
    ++used;
    masked += Index(res.masked.size());
    correct += res.correct;
  }
  rec.usage = double(seen.size()) / double(model_->vocab_size());
  rec.accuracy = masked ? double(correct) / double(masked) : 0.0;
  if (used > 0) {
    auto loss = scale(total, Scalar(1.0 / double(used)));
    rec.loss = double(loss.item());
    tape.backward(loss);
    adam_step(params, adam_, rec.lr, plan_.adam);
  }
  ++step_;
  return rec;
}

template <typename Scalar>
std::vector<StepRecord> MlmTrainer<Scalar>::run(Index until, std::ostream* telemetry) {
  return run_loop(*this, until, telemetry);
}

template <typename Scalar>
double MlmTrainer<Scalar>::evaluate(Index draws, std::uint64_t seed) const {
  Rng data = make_stream(seed, "eval-data");
  Rng mask_rng = make_stream(seed, "eval-mask");
  Rng unused(0);
  Index masked = 0, correct = 0;
  for (Index d = 0; d < draws; ++d) {
    auto tokens = crop(data);
    auto mask = sample_span_mask(Index(tokens.size()), plan_.mask, mask_rng);
    Tape<Scalar> tape;
    auto res = mlm_forward(tape, tokens, mask.positions, *model_, unused, false);
    masked += Index(res.masked.size());
    correct += res.correct;
  }
  return masked ? double(correct) / double(masked) : 0.0;
}

template <typename Scalar>
Checkpoint MlmTrainer<Scalar>::checkpoint() const {
  Checkpoint c;
  c.kind = "mlm";
  c.config_json = snapshot<Scalar>(plan_, "vocab_size", model_->vocab_size());
  c.step = std::uint64_t(step_);
  c.codebook_hash = vocab_hash_;
  c.rng_states = {{"data", rng_state(data_rng_)},
                  {"mask", rng_state(mask_rng_)},
                  {"dropout", rng_state(dropout_rng_)}};
  export_state(model_->parameters(), &adam_, c);
  return c;
}

template <typename Scalar>
Checkpoint train_mlm(std::span<const TokenStream> streams, const Vocabulary& vocab,
                     const MlmTrainPlan& plan, std::ostream* telemetry) {
  MlmTrainer<Scalar> trainer(plan, vocab, streams);
  trainer.run(plan.steps, telemetry);
  return trainer.checkpoint();
}

template <typename Scalar>
std::unique_ptr<MaskedEncoder<Scalar>> load_masked_encoder(const Checkpoint& ckpt, const Vocabulary& vocab) {
  if (ckpt.kind != "mlm") throw std::runtime_error("expected an mlm checkpoint, got '" + ckpt.kind + "'");
  const json j = json::parse(ckpt.config_json);
  if (j.at("vocab_size").get<Index>() != vocab.size() || ckpt.codebook_hash != vocab.codebook_hash())
    throw std::runtime_error("vocabulary does not match the checkpoint");
  auto model = std::make_unique<MaskedEncoder<Scalar>>(j.at("plan").get<MlmTrainPlan>().model, vocab.size());
  import_state<Scalar>(ckpt, model->parameters(), nullptr);
  return model;
}

#define VQW2V_INSTANTIATE_TRAINER(S)                                                                 \
  template class VqTrainer<S>;                                                                       \
  template class MlmTrainer<S>;                                                                      \
  template Checkpoint train_vq<S>(const std::vector<Waveform>&, const VqTrainPlan&, std::ostream*);  \
  template Checkpoint train_mlm<S>(std::span<const TokenStream>, const Vocabulary&,                  \
                                   const MlmTrainPlan&, std::ostream*);                              \
  template std::unique_ptr<MaskedEncoder<S>> load_masked_encoder<S>(const Checkpoint&, const Vocabulary&); \
  template std::unique_ptr<VqWav2Vec<S>> load_vq_model<S>(const Checkpoint&);

VQW2V_INSTANTIATE_TRAINER(float)
VQW2V_INSTANTIATE_TRAINER(double)

}  // namespace vqw2v
