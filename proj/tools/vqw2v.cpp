// Command-line front end: synthetic data, both training stages, tokenizing,
// vocabulary building, feature extraction and bitrate/codebook reports.

#include "vqw2v/audio.hpp"
#include "vqw2v/config_io.hpp"
#include "vqw2v/masked_lm.hpp"
#include "vqw2v/quantizer.hpp"
#include "vqw2v/token_stream.hpp"
#include "vqw2v/trainer.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace vqw2v;

namespace {

std::vector<Waveform> load_waves(const std::vector<std::string>& inputs) {
  std::vector<Waveform> waves;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(in))
        if (e.path().extension() == ".wav") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) waves.push_back(read_wav(f));
    } else {
      waves.push_back(read_wav(in));
    }
  }
  if (waves.empty()) throw std::runtime_error("no WAV input found");
  return waves;
}

std::vector<TokenStream> load_streams(const std::vector<std::string>& paths) {
  std::vector<TokenStream> streams;
  for (const auto& p : paths) streams.push_back(read_tokens(p));
  return streams;
}

std::string precision_of(const Checkpoint& ckpt) {
  return nlohmann::json::parse(ckpt.config_json).at("precision").get<std::string>();
}

/// Calls fn(float{}) or fn(double{}) to match the requested precision.
template <typename Fn>
auto with_precision(const std::string& precision, Fn&& fn) {
  if (precision == "float32") return fn(float{});
  if (precision == "float64") return fn(double{});
  throw std::invalid_argument("precision must be float32 or float64, got '" + precision + "'");
}

std::unique_ptr<std::ofstream> open_telemetry(const std::string& path) {
  if (path.empty()) return nullptr;
  auto out = std::make_unique<std::ofstream>(path);
  if (!*out) throw std::runtime_error("cannot write telemetry to " + path);
  return out;
}

TokenFormat parse_format(const std::string& name) {
  if (name == "text") return TokenFormat::kText;
  if (name == "binary") return TokenFormat::kBinary;
  throw std::invalid_argument("format must be text or binary");
}

std::vector<int> parse_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(std::stoi(item));
  return out;
}

std::string format_bitrate(double bits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", bits);
  return buf;
}

struct VqOptions {
  std::vector<std::string> inputs;
  std::string out, telemetry, config, precision = "float32";
  std::string preset = "small", backend = "gumbel", placement = "after-encoder";
  Index channels = 512, groups = 2, vars = 320, steps = 1000, batch = 10, crop = 150000;
  Index warmup = -1;
  std::uint64_t seed = 1;
};

VqTrainPlan make_vq_plan(const VqOptions& o) {
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw std::runtime_error("cannot open config " + o.config);
    return nlohmann::json::parse(in).get<VqTrainPlan>();
  }
  if (o.backend != "gumbel" && o.backend != "kmeans") throw std::invalid_argument("backend must be gumbel or kmeans");
  const auto backend = nlohmann::json(o.backend).get<QuantizerBackend>();
  VqTrainPlan plan;
  if (o.preset == "full") plan.model = VqModelConfig::full(backend);
  else if (o.preset == "small") plan.model = VqModelConfig::small(backend, o.channels);
  else throw std::invalid_argument("preset must be full or small");
  if (o.placement != "after-encoder" && o.placement != "after-aggregator")
    throw std::invalid_argument("placement must be after-encoder or after-aggregator");
  plan.model.quantizer.placement = nlohmann::json(o.placement).get<QuantizerPlacement>();
  plan.model.quantizer.groups = o.groups;
  plan.model.quantizer.vars = o.vars;
  plan.batch_size = o.batch;
  plan.crop_samples = o.crop;
  plan.steps = o.steps;
  plan.seed = o.seed;
  plan.lr.total_steps = std::max<Index>(o.steps, 1);
  plan.lr.warmup_steps = o.warmup >= 0 ? o.warmup : std::min<Index>(500, plan.lr.total_steps);
  plan.tau.total_steps = plan.lr.total_steps;
  return plan;
}

int run_train_vq(const VqOptions& o) {
  const auto plan = make_vq_plan(o);
  auto data = load_waves(o.inputs);
  auto telemetry = open_telemetry(o.telemetry);
  std::ostream* sink = telemetry ? telemetry.get() : &std::cout;
  const Checkpoint ckpt = with_precision(o.precision, [&](auto tag) {
    using S = decltype(tag);
    VqTrainer<S> trainer(plan, std::move(data));
    while (trainer.current_step() < plan.steps) {
      Index next = plan.steps;
      if (plan.checkpoint_every > 0)
        next = std::min(plan.steps, (trainer.current_step() / plan.checkpoint_every + 1) * plan.checkpoint_every);
      trainer.run(next, sink);
      if (next < plan.steps) save_checkpoint(trainer.checkpoint(), o.out);
    }
    for (const auto& name : trainer.dead_parameters())
      std::clog << "warning: parameter " << name << " never received a gradient\n";
    return trainer.checkpoint();
  });
  save_checkpoint(ckpt, o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vq-wav2vec: discrete audio representations and masked token pretraining"};
  app.require_subcommand(1);

  // gen-synth
  SynthSpec synth;
  std::string synth_dir, generator = "filtered-noise-segments";
  auto* gen = app.add_subcommand("gen-synth", "Write a deterministic synthetic WAV dataset");
  gen->add_option("--out-dir", synth_dir, "Output directory")->required();
  gen->add_option("--clips", synth.num_clips, "Number of clips");
  gen->add_option("--seconds", synth.clip_seconds, "Clip length in seconds");
  gen->add_option("--seed", synth.seed, "Generator seed");
  gen->add_option("--generator", generator, "sine-mixture or filtered-noise-segments");
  gen->add_option("--sines", synth.sines, "Sinusoids per sine-mixture clip");

  // train-vq
  VqOptions vq;
  auto* tvq = app.add_subcommand("train-vq", "Train the quantized contrastive model");
  tvq->add_option("--input", vq.inputs, "WAV files or directories")->required();
  tvq->add_option("--out", vq.out, "Checkpoint path")->required();
  tvq->add_option("--config", vq.config, "JSON training plan (overrides the flags below)");
  tvq->add_option("--preset", vq.preset, "full or small");
  tvq->add_option("--backend", vq.backend, "gumbel or kmeans");
  tvq->add_option("--placement", vq.placement, "after-encoder or after-aggregator");
  tvq->add_option("--channels", vq.channels, "Channel width of the small preset");
  tvq->add_option("--groups", vq.groups, "Variable groups G");
  tvq->add_option("--vars", vq.vars, "Codewords per group V");
  tvq->add_option("--steps", vq.steps, "Updates");
  tvq->add_option("--warmup", vq.warmup, "Warmup updates (default min(500, steps))");
  tvq->add_option("--batch", vq.batch, "Crops per update");
  tvq->add_option("--crop", vq.crop, "Crop length in samples");
  tvq->add_option("--seed", vq.seed, "Seed");
  tvq->add_option("--precision", vq.precision, "float32 or float64");
  tvq->add_option("--telemetry", vq.telemetry, "Telemetry file (default stdout)");

  // tokenize
  std::vector<std::string> tok_inputs;
  std::string tok_ckpt, tok_out, tok_dir, tok_format = "binary";
  auto* tok = app.add_subcommand("tokenize", "Discretise WAV files with a trained model");
  tok->add_option("--checkpoint", tok_ckpt, "vq checkpoint")->required();
  tok->add_option("--input", tok_inputs, "WAV files or directories")->required();
  tok->add_option("--out", tok_out, "Output token file (single input)");
  tok->add_option("--out-dir", tok_dir, "Output directory (one file per input)");
  tok->add_option("--format", tok_format, "text or binary");

  // build-vocab
  std::vector<std::string> vocab_inputs;
  std::string vocab_out;
  auto* bv = app.add_subcommand("build-vocab", "Assign ids to observed codeword tuples");
  bv->add_option("--tokens", vocab_inputs, "Token files")->required();
  bv->add_option("--out", vocab_out, "Vocabulary file")->required();

  // train-mlm
  std::vector<std::string> mlm_inputs;
  std::string mlm_vocab, mlm_out, mlm_telemetry, mlm_preset = "tiny", mlm_precision = "float32";
  MlmTrainPlan mlm;
  mlm.steps = 1000;
  Index mlm_warmup = -1;
  auto* tmlm = app.add_subcommand("train-mlm", "Masked token pretraining over token streams");
  tmlm->add_option("--tokens", mlm_inputs, "Token files")->required();
  tmlm->add_option("--vocab", mlm_vocab, "Vocabulary file")->required();
  tmlm->add_option("--out", mlm_out, "Checkpoint path")->required();
  tmlm->add_option("--preset", mlm_preset, "tiny or small");
  tmlm->add_option("--steps", mlm.steps, "Updates");
  tmlm->add_option("--warmup", mlm_warmup, "Warmup updates (default steps / 25)");
  tmlm->add_option("--lr", mlm.lr.lr_peak, "Peak learning rate");
  tmlm->add_option("--batch", mlm.batch_size, "Sequences per update");
  tmlm->add_option("--seq-len", mlm.seq_len, "Crop length in frames");
  tmlm->add_option("--mask-prob", mlm.mask.p, "Span start probability");
  tmlm->add_option("--span", mlm.mask.span, "Span length");
  tmlm->add_option("--seed", mlm.seed, "Seed");
  tmlm->add_option("--precision", mlm_precision, "float32 or float64");
  tmlm->add_option("--telemetry", mlm_telemetry, "Telemetry file (default stdout)");

  // extract-features
  std::string feat_ckpt, feat_vocab, feat_tokens, feat_out;
  auto* feat = app.add_subcommand("extract-features", "Masked-encoder states for a token stream");
  feat->add_option("--checkpoint", feat_ckpt, "mlm checkpoint")->required();
  feat->add_option("--vocab", feat_vocab, "Vocabulary file")->required();
  feat->add_option("--tokens", feat_tokens, "Token file")->required();
  feat->add_option("--out", feat_out, "TSV output, one row per feature dimension")->required();

  // eval-bitrate
  int br_groups = 2, br_vars = 320;
  double br_rate = 100.0;
  std::string sweep_groups, sweep_vars;
  auto* br = app.add_subcommand("eval-bitrate", "Bits per second of a (G, V) configuration");
  br->add_option("--groups", br_groups, "Variable groups G");
  br->add_option("--vars", br_vars, "Codewords per group V");
  br->add_option("--rate", br_rate, "Frame rate in Hz");
  br->add_option("--sweep-groups", sweep_groups, "Comma-separated G values; prints a TSV table");
  br->add_option("--sweep-vars", sweep_vars, "Comma-separated V values; prints a TSV table");

  // codebook-stats
  std::vector<std::string> stats_inputs;
  auto* stats = app.add_subcommand("codebook-stats", "Distinct codeword tuples across token files");
  stats->add_option("--tokens", stats_inputs, "Token files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  try {
    if (*gen) {
      synth.generator = parse_generator(generator);
      fs::create_directories(synth_dir);
      for (const auto& clip : synth_dataset(synth)) write_wav(clip, fs::path(synth_dir) / (clip.name + ".wav"));
    } else if (*tvq) {
      return run_train_vq(vq);
    } else if (*tok) {
      const Checkpoint ckpt = load_checkpoint(tok_ckpt);
      const auto form = parse_format(tok_format);
      auto waves = load_waves(tok_inputs);
      if (tok_out.empty() == tok_dir.empty()) throw std::invalid_argument("give exactly one of --out and --out-dir");
      if (!tok_out.empty() && waves.size() != 1) throw std::invalid_argument("--out takes a single input; use --out-dir");
      if (!tok_dir.empty()) fs::create_directories(tok_dir);
      with_precision(precision_of(ckpt), [&](auto tag) {
        using S = decltype(tag);
        auto model = load_vq_model<S>(ckpt);
        for (const auto& w : waves) {
          const auto stream = tokenize(*model, w.samples, w.name);
          const fs::path dest = tok_out.empty() ? fs::path(tok_dir) / (w.name + ".tok") : fs::path(tok_out);
          write_tokens(stream, dest, form);
        }
        return 0;
      });
    } else if (*bv) {
      build_vocab(load_streams(vocab_inputs)).save(vocab_out);
    } else if (*tmlm) {
      if (mlm_preset == "tiny") mlm.model = MaskedEncoderConfig::tiny();
      else if (mlm_preset == "small") mlm.model = MaskedEncoderConfig::small();
      else throw std::invalid_argument("preset must be tiny or small");
      mlm.lr.total_steps = std::max<Index>(mlm.steps, 1);
      mlm.lr.warmup_steps = mlm_warmup >= 0 ? mlm_warmup : mlm.lr.total_steps / 25;
      const auto vocab = Vocabulary::load(mlm_vocab);
      const auto streams = load_streams(mlm_inputs);
      auto telemetry = open_telemetry(mlm_telemetry);
      std::ostream* sink = telemetry ? telemetry.get() : &std::cout;
      const Checkpoint ckpt = with_precision(mlm_precision, [&](auto tag) {
        return train_mlm<decltype(tag)>(streams, vocab, mlm, sink);
      });
      save_checkpoint(ckpt, mlm_out);
    } else if (*feat) {
      const Checkpoint ckpt = load_checkpoint(feat_ckpt);
      const auto vocab = Vocabulary::load(feat_vocab);
      const auto stream = read_tokens(feat_tokens);
      std::ofstream out(feat_out);
      if (!out) throw std::runtime_error("cannot write " + feat_out);
      out.precision(9);
      with_precision(precision_of(ckpt), [&](auto tag) {
        using S = decltype(tag);
        const auto features = extract_features(stream, vocab, *load_masked_encoder<S>(ckpt, vocab));
        for (Index r = 0; r < features.rows(); ++r) {
          for (Index c = 0; c < features.cols(); ++c) out << (c ? "\t" : "") << features(r, c);
          out << '\n';
        }
        return 0;
      });
    } else if (*br) {
      if (sweep_groups.empty() && sweep_vars.empty()) {
        std::cout << format_bitrate(eval_bitrate(br_groups, br_vars, br_rate)) << "\n";
      } else {
        const auto gs = sweep_groups.empty() ? std::vector<int>{br_groups} : parse_list(sweep_groups);
        const auto vs = sweep_vars.empty() ? std::vector<int>{br_vars} : parse_list(sweep_vars);
        std::cout << "groups\tvars\tbits_per_second\n";
        for (int g : gs)
          for (int v : vs) std::cout << g << '\t' << v << '\t' << format_bitrate(eval_bitrate(g, v, br_rate)) << '\n';
      }
    } else if (*stats) {
      const auto usage = codeword_usage(load_streams(stats_inputs));
      std::printf("unique=%llu fraction=%.6g tokens=%llu possible=%.17g\n",
                  static_cast<unsigned long long>(usage.unique_count), usage.fraction,
                  static_cast<unsigned long long>(usage.total_tokens), usage.possible);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << "\n";
    return 1;
  }
  return 0;
}
