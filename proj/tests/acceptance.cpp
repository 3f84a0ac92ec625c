// Acceptance runner: one PASS/FAIL line per criterion.

#include "support/mask_oracle.hpp"
#include "support/op_cases.hpp"
#include "support/pipeline.hpp"

#include "vqw2v/trainer.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

using namespace vqw2v;
using namespace vqw2v::testing;

namespace {

struct Outcome {
  std::vector<std::string> failures;
  std::ostringstream detail;

  // Records a failed condition; the criterion passes only if none fail.
  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  bool pass() const { return failures.empty(); }
  std::string line() const {
    std::string out = detail.str();
    if (!failures.empty()) {
      out += out.empty() ? "failed: " : "; failed: ";
      for (std::size_t i = 0; i < failures.size(); ++i) out += (i ? "; " : "") + failures[i];
    }
    return out;
  }
};

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  void (*run)(Outcome&);
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool within(double got, double want, double rel) { return std::abs(got - want) <= rel * std::abs(want); }

// 1
void bitrate(Outcome& o) {
  const double low = eval_bitrate(1, 40), high = eval_bitrate(32, 1280);
  o.require(within(low, 532.19, 0.005), "G=1 V=40 gives " + fmt("%.2f", low));
  o.require(within(high, 33031, 0.005), "G=32 V=1280 gives " + fmt("%.2f", high));
  o.detail << fmt("%.2f", low) << " and " << fmt("%.2f", high) << " bit/s";
}

// 2
void codeword_space_value(Outcome& o) {
  QuantizerConfig q;
  q.groups = 2;
  q.vars = 320;
  o.require(q.codeword_space() == 102400, "V^G = " + fmt("%.17g", q.codeword_space()));
  o.detail << "V^G = 102400";
}

// 3
void architecture(Outcome& o) {
  o.require(EncoderConfig::full().total_stride() == 160, "full encoder stride");
  o.require(EncoderConfig::small(512).total_stride() == 160, "small encoder stride");
  VqWav2Vec<float> model(VqModelConfig::full());
  const auto count = double(model.parameters().count());
  o.require(within(count, 34e6, 0.05), "parameter count " + fmt("%.0f", count));
  o.detail << "stride 160, " << fmt("%.0f", count) << " parameters";
}

// 4
void gradient_suite(Outcome& o) {
  constexpr int kSeeds = 50;
  double worst = 0;
  for (const auto& op : op_cases()) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      Rng rng = make_stream(std::uint64_t(seed), op.name);
      ParameterSet<double> params;
      auto loss = op.setup(params, rng, std::uint64_t(seed));
      auto report = gradcheck(params, loss, rng);
      worst = std::max(worst, report.max_rel_error);
      o.require(report.max_rel_error < kTolerance, std::string(op.name) + " " + report.worst);
    }
  }
  const std::pair<QuantizerBackend, QuantizerPlacement> variants[] = {
      {QuantizerBackend::kGumbel, QuantizerPlacement::kAfterEncoder},
      {QuantizerBackend::kGumbel, QuantizerPlacement::kAfterAggregator},
      {QuantizerBackend::kKMeans, QuantizerPlacement::kAfterEncoder},
      {QuantizerBackend::kKMeans, QuantizerPlacement::kAfterAggregator}};
  for (auto [backend, placement] : variants) {
    for (int s = 0; s < kSeeds; ++s) {
      const auto seed = std::uint64_t(s);
      VqWav2Vec<double> model(toy_config(backend, placement));
      model.init(seed);
      const auto wave = toy_wave(seed);
      const double tau = s % 2 ? 0.7 : 2.0;
      auto bp = base_point(model, wave, tau, seed);
      auto loss = real_loss(model, wave, tau, seed);
      auto surrogate = surrogate_loss(model, wave, tau, seed, bp);
      Rng pick = make_stream(seed, "probe");
      auto report = gradcheck(model.parameters(), loss, pick, 2, &surrogate);
      worst = std::max(worst, report.max_rel_error);
      o.require(report.max_rel_error < kTolerance, "pipeline seed " + std::to_string(s) + " " + report.worst);
    }
  }
  o.detail << op_cases().size() << " ops and 4 pipeline variants x " << kSeeds
           << " seeds, worst relative error " << fmt("%.2e", worst);
}

// 5
void straight_through(Outcome& o) {
  for (auto backend : {QuantizerBackend::kGumbel, QuantizerBackend::kKMeans}) {
    const std::string name = backend == QuantizerBackend::kGumbel ? "gumbel" : "kmeans";
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      VqWav2Vec<double> model(toy_config(backend, QuantizerPlacement::kAfterEncoder));
      model.init(seed);
      Tape<double> tape;
      ForwardRngs rngs = toy_rngs(seed);
      auto fwd = model.forward(tape, toy_wave(seed), 1.0, rngs, true);
      tape.backward(fwd.wav2vec_loss);
      const Index d = fwd.frames.z.dim(0), t = fwd.frames.z.dim(1);
      const Vec<double> dz_cols = fwd.frames.z.grad();
      const Vec<double> dz_hat = fwd.quantized.z_hat.grad();
      // z is [d x T] while z_hat rows are [T x d].
      RowMatrix<double> dz = Eigen::Map<const RowMatrix<double>>(dz_cols.data(), d, t).transpose();
      RowMatrix<double> dzh = Eigen::Map<const RowMatrix<double>>(dz_hat.data(), t, d);
      o.require(dzh.cwiseAbs().maxCoeff() > 0, name + " z_hat gradient is zero");
      o.require((dz.array() == dzh.array()).all(), name + " dL/dz differs from dL/dz_hat");
    }
  }
  for (auto placement : {QuantizerPlacement::kAfterEncoder, QuantizerPlacement::kAfterAggregator}) {
    VqWav2Vec<double> model(toy_config(QuantizerBackend::kKMeans, placement));
    model.init(3);
    const auto wave = toy_wave(3);
    auto& book = model.quantizer().codebook();
    auto grad_from = [&](auto pick) {
      model.parameters().zero_grad();
      Tape<double> tape;
      ForwardRngs rngs = toy_rngs(3);
      auto fwd = model.forward(tape, wave, 1.0, rngs, true);
      tape.backward(pick(fwd));
      return Vec<double>(book.grad);
    };
    const auto from_contrastive = grad_from([](auto& f) { return f.wav2vec_loss; });
    const auto from_commitment = grad_from([](auto& f) { return f.quantized.commitment_loss; });
    const auto from_codebook = grad_from([](auto& f) { return f.quantized.codebook_loss; });
    const auto from_total = grad_from([](auto& f) { return f.loss; });
    o.require((from_contrastive == 0).all(), "codebook gradient from the contrastive term");
    o.require((from_commitment == 0).all(), "codebook gradient from the commitment term");
    o.require((from_codebook != 0).any(), "no codebook gradient from the codebook term");
    o.require((from_total == from_codebook).all(), "total codebook gradient differs from the codebook term");
  }
  o.detail << "identity Jacobian for both backends; codebook learns from its own term only";
}

// 6
void gumbel_limit(Outcome& o) {
  Rng rng(6);
  double worst_sum = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const Index v = 2 + Index(uniform_index(rng, 320));
    Vec<double> l(v), noise(v);
    for (Index j = 0; j < v; ++j) {
      l[j] = uniform(rng, -5, 5);
      noise[j] = gumbel_noise(rng);
    }
    const double tau = uniform(rng, 0.05, 2.0);
    auto c = gumbel_select<double>({l.data(), std::size_t(v)}, {noise.data(), std::size_t(v)}, tau,
                                   QuantizeMode::kTrain);
    worst_sum = std::max(worst_sum, std::abs(c.probs.sum() - 1));
  }
  o.require(worst_sum <= 1e-9, "probability sum off by " + fmt("%.3g", worst_sum));

  // Frozen noise at tau = 1e-3.
  Rng frozen(5);
  const std::vector<double> logits{0.1, 3.0, -1};
  std::vector<double> noise(3);
  for (auto& n : noise) n = gumbel_noise(frozen);
  auto c = gumbel_select<double>(logits, noise, 1e-3, QuantizeMode::kTrain);
  Vec<double> hot = Vec<double>::Zero(3);
  hot[c.index] = 1;
  const double dist = (c.probs - hot).abs().maxCoeff();
  o.require(dist < 1e-6, "tau=1e-3 distance " + fmt("%.3g", dist));
  o.detail << "max |sum - 1| " << fmt("%.2e", worst_sum) << ", one-hot distance " << fmt("%.2e", dist);
}

// 7
void kmeans_oracle(Outcome& o) {
  Rng rng(7);
  int ties = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const Index v = 2 + Index(uniform_index(rng, 40));
    const Index w = 1 + Index(uniform_index(rng, 8));
    RowMatrix<double> book(v, w);
    for (Index i = 0; i < book.size(); ++i) book.data()[i] = uniform(rng, -1, 1);
    Vec<double> z(w);
    for (Index c = 0; c < w; ++c) z[c] = uniform(rng, -1, 1);
    if (draw % 4 == 0) {
      // Plant an exact tie between a row and a later copy of it.
      const Index a = Index(uniform_index(rng, v - 1));
      book.row(v - 1) = book.row(a);
      if (draw % 8 == 0) z = book.row(a).transpose().array();
    }
    Index best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    int hits = 0;
    for (Index j = 0; j < v; ++j) {
      double d = 0;
      for (Index c = 0; c < w; ++c) d += (z[c] - book(j, c)) * (z[c] - book(j, c));
      if (d < best_d) {
        best_d = d;
        best = j;
        hits = 1;
      } else if (d == best_d) {
        ++hits;
      }
    }
    ties += hits > 1;
    auto got = kmeans_select<double>({z.data(), std::size_t(w)}, book);
    o.require(got.index == best, "draw " + std::to_string(draw) + " index " + std::to_string(got.index) +
                                     " vs " + std::to_string(best));
  }
  o.require(ties > 0, "no tied draws exercised");
  o.detail << "1000 draws agree, " << ties << " with tied minima";
}

// 8
void schedules(Outcome& o) {
  const auto lr = LrSchedule::vq();
  o.require(lr_at(0, lr) == 1e-7, "lr_at(0) = " + fmt("%.17g", lr_at(0, lr)));
  o.require(lr_at(500, lr) == 5e-3, "lr_at(500) = " + fmt("%.17g", lr_at(500, lr)));
  o.require(lr_at(400000, lr) == 1e-6, "lr_at(400k) = " + fmt("%.17g", lr_at(400000, lr)));
  TempSchedule tau;
  o.require(temperature_at(0, tau) == 2.0, "temperature_at(0)");
  for (Index step : {Index(280000), Index(300000), Index(399999), Index(400000), Index(500000)})
    o.require(temperature_at(step, tau) == 0.5, "temperature_at(" + std::to_string(step) + ")");
  o.detail << "lr 1e-7 / 5e-3 / 1e-6, tau 2 then 0.5 from 70%";
}

// 9
void span_mask(Outcome& o) {
  constexpr Index kSpan = 10;
  Rng rng(9);
  Index lowest = std::numeric_limits<Index>::max(), highest = 0;
  for (int draw = 0; draw < 10000; ++draw) {
    auto m = sample_span_mask(100, SpanMaskConfig{0.1, kSpan}, rng);
    o.require(m.starts.size() == 10, "start count " + std::to_string(m.starts.size()));
    o.require(std::set<Index>(m.starts.begin(), m.starts.end()).size() == m.starts.size(), "repeated start");
    const auto n = Index(m.positions.size());
    lowest = std::min(lowest, n);
    highest = std::max(highest, n);
    if (!o.pass()) break;
  }
  o.require(lowest >= kSpan && highest <= 10 * kSpan,
            "masked counts span [" + std::to_string(lowest) + ", " + std::to_string(highest) + "]");

  for (auto [t, s, m] : {std::tuple{12, 3, 4}, {10, 2, 10}, {15, 4, 3}, {14, 5, 2}})
    o.require(within(expected_masked_fraction(t, s, m), enumerate_masked_fraction(t, s, m), 1e-12),
              "closed form disagrees with enumeration");
  const double exact = expected_masked_fraction(200, 10, 10);
  double total = 0;
  constexpr int kDraws = 10000;
  for (int seed = 0; seed < kDraws; ++seed) {
    Rng r = make_stream(std::uint64_t(seed), "mask");
    total += double(sample_span_mask(200, SpanMaskConfig{0.05, 10}, r).positions.size()) / 200.0;
  }
  const double mean = total / kDraws;
  o.require(within(mean, exact, 0.01), "Monte Carlo " + fmt("%.6f", mean) + " vs " + fmt("%.6f", exact));
  o.detail << "counts in [" << lowest << ", " << highest << "], masked fraction "
           << fmt("%.4f", mean) << " vs exact " << fmt("%.4f", exact);
}

// 10
std::vector<Waveform> noise_corpus() {
  SynthSpec spec;
  spec.num_clips = 16;
  spec.clip_seconds = 1.0;
  spec.seed = 10;
  spec.generator = SynthGenerator::kFilteredNoiseSegments;
  return synth_dataset(spec);
}

VqTrainPlan smoke_plan(QuantizerBackend backend, Index groups, Index vars) {
  VqTrainPlan plan;
  plan.model = VqModelConfig::small(backend, 32);
  plan.model.quantizer.groups = groups;
  plan.model.quantizer.vars = vars;
  plan.model.loss.steps = 4;
  plan.model.loss.negatives = 8;
  plan.batch_size = 4;
  plan.crop_samples = 4800;
  plan.steps = 200;
  plan.seed = 10;
  plan.lr.warmup_steps = 20;
  plan.lr.lr_peak = 5e-4;
  plan.lr.total_steps = plan.steps;
  plan.tau.total_steps = plan.steps;
  return plan;
}

// Mean of a window of records.
double window_mean(const std::vector<StepRecord>& r, std::size_t from, std::size_t count) {
  double s = 0;
  for (std::size_t i = from; i < from + count; ++i) s += *r[i].contrastive;
  return s / double(count);
}

double tokenized_usage(VqWav2Vec<float>& model, const std::vector<Waveform>& data) {
  std::vector<std::uint32_t> all;
  for (const auto& w : data) {
    auto idx = model.quantize_indices(w.samples);
    all.insert(all.end(), idx.begin(), idx.end());
  }
  const auto& q = model.config().quantizer;
  return codeword_usage(all, q.groups, q.vars).fraction;
}

void smoke_vq(Outcome& o) {
  constexpr std::size_t kWindow = 20;
  const auto data = noise_corpus();
  for (auto backend : {QuantizerBackend::kGumbel, QuantizerBackend::kKMeans}) {
    const std::string name = backend == QuantizerBackend::kGumbel ? "gumbel" : "kmeans";
    VqTrainer<float> trainer(smoke_plan(backend, 2, 16), data);
    auto records = trainer.run(200);
    const double first = window_mean(records, 0, kWindow);
    const double last = window_mean(records, records.size() - kWindow, kWindow);
    o.require(last < 0.8 * first, name + " loss " + fmt("%.3f", first) + " -> " + fmt("%.3f", last));
    o.detail << (name == "gumbel" ? "" : "; ") << name << " " << fmt("%.3f", first) << " -> "
             << fmt("%.3f", last);
  }
  // Matched V^G = 64: one group of 64 against two groups of 8.
  VqTrainer<float> one(smoke_plan(QuantizerBackend::kKMeans, 1, 64), data);
  one.run(200);
  VqTrainer<float> two(smoke_plan(QuantizerBackend::kKMeans, 2, 8), data);
  two.run(200);
  const double u1 = tokenized_usage(one.model(), data), u2 = tokenized_usage(two.model(), data);
  o.require(u2 > u1, "usage G=2 " + fmt("%.3f", u2) + " <= G=1 " + fmt("%.3f", u1));
  o.detail << "; usage G=1 " << fmt("%.3f", u1) << ", G=2 " << fmt("%.3f", u2);
}

// 11
std::vector<TokenStream> bigram_language(Index tuples, Index length, std::uint64_t seed) {
  Rng rng(seed);
  TokenStream s;
  s.header.groups = 1;
  s.header.vars = std::uint32_t(tuples);
  s.header.codebook_hash = "0badc0de";
  std::uint32_t cur = 0;
  for (Index t = 0; t < length; ++t) {
    s.indices.push_back(cur);
    cur = uniform01(rng) < 0.9 ? (cur + 1) % std::uint32_t(tuples) : std::uint32_t(uniform_index(rng, tuples));
  }
  return {s};
}

void smoke_mlm(Outcome& o) {
  auto streams = bigram_language(50, 20000, 11);
  auto vocab = build_vocab(streams);
  MlmTrainPlan plan;
  plan.model = MaskedEncoderConfig::tiny();
  plan.batch_size = 16;
  plan.seq_len = 64;
  plan.steps = 500;
  plan.seed = 11;
  plan.mask = {0.1, 3};
  plan.lr.warmup_steps = 50;
  plan.lr.lr_peak = 5e-3;
  plan.lr.total_steps = plan.steps;
  MlmTrainer<float> trainer(plan, vocab, streams);
  trainer.run(500);
  const double acc = trainer.evaluate(200, 99);
  const double chance = 1.0 / double(vocab.size());
  o.require(acc > 5 * chance, "accuracy " + fmt("%.4f", acc) + " vs 5x chance " + fmt("%.4f", 5 * chance));
  o.detail << "masked accuracy " << fmt("%.3f", acc) << " = " << fmt("%.1f", acc / chance)
           << "x chance (" << vocab.size() << " ids)";
}

// 12
void persistence(Outcome& o) {
  SynthSpec spec;
  spec.num_clips = 3;
  spec.clip_seconds = 0.25;
  spec.seed = 12;
  const auto data = synth_dataset(spec);
  for (auto backend : {QuantizerBackend::kGumbel, QuantizerBackend::kKMeans}) {
    auto plan = toy_config(backend, QuantizerPlacement::kAfterEncoder);
    VqTrainPlan p;
    p.model = plan;
    p.batch_size = 2;
    p.crop_samples = 1600;
    p.steps = 8;
    p.lr.warmup_steps = 2;
    p.lr.total_steps = 8;
    p.tau.total_steps = 8;
    VqTrainer<double> straight(p, data);
    auto full = straight.run(8);
    VqTrainer<double> first(p, data);
    first.run(4);
    VqTrainer<double> resumed(decode_checkpoint(encode_checkpoint(first.checkpoint())), data);
    auto tail = resumed.run(8);
    bool same = tail.size() == 4;
    for (std::size_t i = 0; same && i < 4; ++i) same = tail[i].loss == full[i + 4].loss;
    o.require(same, "resumed losses differ");
    o.require(straight.checkpoint() == resumed.checkpoint(), "resumed checkpoint differs");
  }

  auto streams = bigram_language(12, 400, 12);
  auto vocab = build_vocab(streams);
  MlmTrainPlan mp;
  mp.model = {1, 16, 32, 2, 0.05};
  mp.seq_len = 32;
  mp.steps = 6;
  mp.mask = {0.1, 3};
  mp.lr.warmup_steps = 2;
  mp.lr.total_steps = 6;
  MlmTrainer<double> straight(mp, vocab, streams);
  straight.run(6);
  MlmTrainer<double> first(mp, vocab, streams);
  first.run(3);
  MlmTrainer<double> resumed(decode_checkpoint(encode_checkpoint(first.checkpoint())), vocab, streams);
  resumed.run(6);
  o.require(straight.checkpoint() == resumed.checkpoint(), "masked-LM resume differs");

  Rng rng(12);
  int roundtrips = 0;
  for (std::uint32_t g : {1u, 2u, 4u, 32u}) {
    for (std::uint32_t v : {2u, 40u, 320u, 1280u}) {
      TokenStream s;
      s.header.groups = g;
      s.header.vars = v;
      s.header.codebook_hash = "1234abcd";
      s.header.source = "acceptance";
      for (int i = 0; i < 37 * int(g); ++i) s.indices.push_back(std::uint32_t(uniform_index(rng, v)));
      for (auto form : {TokenFormat::kText, TokenFormat::kBinary}) {
        auto bytes = encode_tokens(s, form);
        o.require(decode_tokens(bytes) == s, "roundtrip G=" + std::to_string(g) + " V=" + std::to_string(v));
        ++roundtrips;
        if (form == TokenFormat::kText) continue;
        // A flipped body byte must fail the CRC.
        auto bad = bytes;
        bad[bad.size() - 6] ^= 0x10;
        bool caught = false;
        try {
          decode_tokens(bad);
        } catch (const FormatError&) {
          caught = true;
        }
        o.require(caught, "corruption undetected G=" + std::to_string(g) + " V=" + std::to_string(v));
      }
    }
  }
  o.detail << "bitwise resume for both backends and masked LM; " << roundtrips << " exact roundtrips";
}

const Criterion kCriteria[] = {
    {1, "bitrate golden values", 1, bitrate},
    {2, "codeword space golden value", 1, codeword_space_value},
    {3, "architecture invariants", 10, architecture},
    {4, "gradient suite", 300, gradient_suite},
    {5, "straight-through contract", 30, straight_through},
    {6, "gumbel limit and normalization", 10, gumbel_limit},
    {7, "k-means optimality oracle", 10, kmeans_oracle},
    {8, "schedule golden values", 1, schedules},
    {9, "span-mask sampler", 30, span_mask},
    {10, "smoke training, stage 1", 900, smoke_vq},
    {11, "smoke training, stage 2", 600, smoke_mlm},
    {12, "determinism and persistence", 120, persistence},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Criterion ids to run (default all)");
  CLI11_PARSE(app, argc, argv);

  int failed = 0;
  for (const auto& c : kCriteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(secs < c.budget_seconds, "over the " + fmt("%.0f", c.budget_seconds) + " s budget");
    failed += !o.pass();
    std::printf("%s %2d %s (%.1f s): %s\n", o.pass() ? "PASS" : "FAIL", c.id, c.name, secs, o.line().c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
